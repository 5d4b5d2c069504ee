import math

import numpy as np
import pytest
from scipy import stats

from msmsim import checks, ctmsm
from msmsim.errors import DomainError
from msmsim.rng import substream

P = ctmsm.PiecewiseConstPath


def test_path_values_and_limits():
    p = P(np.array([0.0, 2.0, 5.0]), np.array([0.0, 1.0, 0.0]), 10.0)
    assert p.value_at(1.9) == 0.0 and p.value_at(2.0) == 1.0
    assert p.left_limit(2.0) == 0.0 and p.left_limit(2.1) == 1.0
    assert p.n_changes == 2
    assert p.truncate(5.0).n_changes == 1
    with pytest.raises(DomainError):
        P(np.array([0.0, 2.0, 2.0]), np.array([0.0, 1.0, 0.0]), 10.0)


def test_rho_validated():
    with pytest.raises(DomainError):
        ctmsm.worked_example(rho=0.3)


def grid_inverse(spec, a_path, s, u, step=1e-5):
    """Fine-grid oracle: cumulative hazard by the rectangle rule, then interpolate."""
    t = np.arange(s, spec.tau + step, step)
    vals = a_path.value_at(t[:-1])
    rate = np.zeros_like(vals)
    for v in np.unique(vals):
        rate[vals == v] = spec.hazard(np.zeros(0), v)
    cum = np.concatenate([[0.0], np.cumsum(rate * step)])
    return float(np.interp(-math.log1p(-u), cum, t))


@pytest.mark.parametrize("s,u", [(0.0, 0.1), (0.0, 0.25), (1.0, 0.2), (3.5, 0.05)])
def test_inversion_matches_grid_oracle(s, u):
    spec = ctmsm.worked_example()
    a = P(np.array([0.0, 4.0]), np.array([0.0, 1.0]), spec.tau)  # one switch mid-horizon
    t = ctmsm.interventional_time_inverse(spec, np.zeros(0), a, s, u)
    assert t == pytest.approx(grid_inverse(spec, a, s, u), abs=1e-6)
    # and the closed-form conditional survival agrees
    surv = ctmsm.interventional_survival(spec, np.zeros(0), a, [s, t])
    assert 1 - surv[1] / surv[0] == pytest.approx(u, abs=1e-12)


def test_inversion_beyond_tau_is_censoring():
    spec = ctmsm.worked_example()
    a = P.constant(1.0, spec.tau)
    f_tau = 1 - math.exp(-0.04 * spec.tau)
    t = ctmsm.interventional_time_inverse(spec, np.zeros(0), a, 0.0, f_tau + 0.1)
    assert t == pytest.approx(spec.tau + 0.1)


def test_survival_closed_form():
    spec = ctmsm.worked_example()
    a = P(np.array([0.0, 4.0]), np.array([0.0, 1.0]), spec.tau)
    s = ctmsm.interventional_survival(spec, np.zeros(0), a, [2.0, 4.0, 10.0])
    assert s == pytest.approx(np.exp(-np.array([0.16, 0.32, 0.32 + 0.24])), rel=1e-12)


def test_confounder_changes_poisson():
    spec = ctmsm.worked_example(alpha_l=lambda x, b, a, l: np.full(np.shape(a), 0.2))
    rng = substream(1, 0)
    a = P.constant(0.0, spec.tau)
    counts = np.array([ctmsm.sample_event_paths(spec, np.zeros(0), [1.0], rng, fixed_treatment=a)[1].n_changes
                       for _ in range(10_000)])
    assert abs(counts.mean() - 2.0) < 3 * math.sqrt(2.0 / counts.size)
    assert counts.var() == pytest.approx(2.0, rel=0.1)


def test_first_event_competing_risks():
    """From a = 0, l = 1 the first change is a treatment switch with probability 0.15 / 0.35."""
    spec = ctmsm.worked_example(tau=40.0)  # P(no change by 40) < 1e-6
    rng = substream(2, 0)
    first_a, first_t = [], []
    while len(first_t) < 6000:
        a, l = ctmsm.sample_event_paths(spec, np.zeros(0), [1.0], rng)
        if a.values[0] != 0.0:
            continue
        ta = a.times[1] if a.n_changes else math.inf
        tl = l.times[1] if l.n_changes else math.inf
        first_a.append(ta < tl)
        first_t.append(min(ta, tl))
    n = len(first_a)
    p = 0.15 / 0.35
    assert abs(np.mean(first_a) - p) < 3 * math.sqrt(p * (1 - p) / n)
    assert stats.kstest(first_t, "expon", args=(0, 1 / 0.35)).pvalue > 0.01


def test_rho_zero_reduces_to_inversion():
    r = checks.check_ct_rho0(n=3000, m=20, seed=3)
    assert r.passed, r.line()


def test_no_changes_constant_hazard_is_exponential():
    spec = ctmsm.worked_example(rho=-0.5, m=50, alpha_a=lambda x, b, a, l: np.zeros(np.shape(a)),
                                alpha_l=lambda x, b, a, l: np.zeros(np.shape(a)))
    recs = ctmsm.simulate_ct_cohort(spec, 3000, seed=4, regime=P.constant(0.0, spec.tau))
    t = np.array([r.time for r in recs])
    ev = np.array([r.event for r in recs])
    p_event = 1 - math.exp(-0.08 * spec.tau)
    assert abs(ev.mean() - p_event) < 3 * math.sqrt(p_event * (1 - p_event) / ev.size)
    trunc = stats.truncexpon(b=0.08 * spec.tau, scale=1 / 0.08)
    assert stats.kstest(t[ev], trunc.cdf).pvalue > 0.01


def test_records_and_events():
    spec = ctmsm.worked_example(m=40)
    recs = ctmsm.simulate_ct_cohort(spec, 20, seed=5)
    again = ctmsm.simulate_ct_cohort(spec, 20, seed=5)
    assert [r.time for r in recs] == [r.time for r in again]
    ev = ctmsm.records_to_events(recs)
    assert list(ev.columns) == ctmsm.EVENT_COLUMNS
    for r in recs:
        rows = ev[ev["id"] == r.id]
        term = rows.iloc[-1]
        assert term["variable"] == ("failure" if r.event else "censored")
        assert term["time"] == r.time
        assert np.all(np.diff(rows["time"].to_numpy()) >= 0)
        assert (rows["variable"].isin(["failure", "censored"])).sum() == 1
        assert r.time <= spec.tau
        assert r.a_path.times[-1] < r.time or r.a_path.n_changes == 0


def test_interventional_survival_band():
    r = checks.check_ct_survival(n=1500, m=60, seed=6)
    assert r.passed, r.line()
