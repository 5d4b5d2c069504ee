import math
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from msmsim import engine, estimation as est, scenario as sc
from msmsim.errors import (DomainError, RankDeficientError, SchemaMismatchError, SeparationError,
                           UnreliableIntervalError)


def three_visit_spec():
    return sc.parse_scenario({
        "visits": 3,
        "baseline_x": [{"name": "x1", "kind": "normal"}],
        "baseline_b": [{"name": "b1", "kind": "normal"}],
        "confounders": [{"name": "l1", "kind": "normal"}],
        "treatment": {"terms": {"l1": 1.0}},
        "msm": {"link": "logit", "baseline": -2.0, "terms": {"a": -1.0}},
        "risk_score": {"terms": {"l1": 1.0}},
        "rho": -0.5,
    })


def hand_cohort():
    """Three individuals: fails at 2.4; censored at 1.5; followed to the end (3)."""
    spec = three_visit_spec()
    nan = np.nan
    a = np.array([[1, 0, 1], [0, nan, nan], [1, 1, 0]], dtype=float)
    l = np.array([[0.1, 0.2, 0.3], [1.1, 1.2, 1.3], [2.1, 2.2, 2.3]])[:, :, None]
    return engine.Cohort(
        spec=spec, ids=np.arange(3), x=np.array([[0.5], [-0.5], [1.5]]), b=np.array([[9.0], [8.0], [7.0]]),
        l=l, a=a, u_h=np.full((3, 3), 0.5), fail_visit=np.array([2, -1, -1]),
        failure_time=np.array([2.4, np.inf, np.inf]), censor_time=np.array([3.0, 1.5, 3.0]),
        restarts=np.zeros(3, int), status=np.zeros(3, int))


def test_golden_person_period_table():
    t = est.expand_person_period(hand_cohort(), ["a", "a.lag1", "x1*a"])
    expected = pd.DataFrame({
        "id": [0, 0, 0, 1, 2, 2, 2], "k": [0, 1, 2, 0, 0, 1, 2], "y": [0, 0, 1, 0, 0, 0, 0],
        "x1": [0.5, 0.5, 0.5, -0.5, 1.5, 1.5, 1.5], "b1": [9.0, 9, 9, 8, 7, 7, 7],
        "l1": [0.1, 0.2, 0.3, 1.1, 2.1, 2.2, 2.3], "a": [1.0, 0, 1, 0, 1, 1, 0],
        "weight": 1.0, "t_event": [2.4, 2.4, 2.4, 1.5, 3, 3, 3], "censored": [0, 0, 0, 1, 1, 1, 1]})
    pd.testing.assert_frame_equal(t.frame, expected, check_dtype=False)
    X, names = t.design()
    assert names == ["visit0", "visit1", "visit2", "a", "a.lag1", "x1*a"]
    assert X[:, 4].tolist() == [0, 1, 0, 0, 0, 1, 1]          # lag is 0 at k = 0
    assert X[:, 5].tolist() == [0.5, 0, 0.5, 0, 1.5, 1.5, 0]


@given(st.floats(0.01, 4.0), st.floats(0.01, 4.0))
def test_person_period_rule(T, C):
    inc, out = est.person_period_mask(np.array([T]), np.array([C]), 2)
    k = np.flatnonzero(inc[0])
    # rows are a prefix 0..j; the last row holds the failure if it is observed
    assert k.tolist() == list(range(k.size))
    assert out[0].sum() == int(T <= C and T <= 3)
    for kk in k:
        assert min(T, C) > kk and (C >= kk + 1 or T <= C)


def test_partially_censored_interval_excluded():
    inc, _ = est.person_period_mask(np.array([0.7]), np.array([0.5]), 3)
    assert not inc.any()


def test_table_from_frame_checks():
    frame = est.expand_person_period(hand_cohort()).frame
    shuffled = frame.sample(frac=1.0, random_state=1)
    t = est.table_from_frame(shuffled, ["x1"], ["b1"], ["l1"])
    pd.testing.assert_frame_equal(t.frame, frame)
    with pytest.raises(SchemaMismatchError, match="without gaps"):
        est.table_from_frame(frame.drop(index=1), ["x1"], ["b1"], ["l1"])
    with pytest.raises(SchemaMismatchError, match="l1"):
        est.table_from_frame(frame.drop(columns="l1"), ["x1"], ["b1"], ["l1"])


def two_by_two():
    a = np.r_[np.zeros(100), np.ones(100)]
    y = np.r_[np.ones(20), np.zeros(80), np.ones(50), np.zeros(50)]
    return np.column_stack([np.ones(200), a]), y


def test_logit_two_by_two_closed_form():
    X, y = two_by_two()
    fit = est.irls(X, y)
    assert fit.converged
    assert fit.coef[0] == pytest.approx(math.log(20 / 80), abs=1e-9)
    assert fit.coef[1] == pytest.approx(math.log((50 / 50) / (20 / 80)), abs=1e-9)
    assert fit.coef == pytest.approx([-1.386294, 1.386294], abs=1e-6)
    # saturated model: model SE is the familiar sqrt(1/a + 1/b + ...)
    assert fit.se("model")[1] == pytest.approx(math.sqrt(1 / 20 + 1 / 80 + 1 / 50 + 1 / 50), rel=1e-8)


def test_cloglog_two_by_two_closed_form():
    X, y = two_by_two()
    fit = est.irls(X, y, link="cloglog")
    cll = lambda p: math.log(-math.log(1 - p))  # noqa: E731
    assert fit.coef == pytest.approx([cll(0.2), cll(0.5) - cll(0.2)], abs=1e-9)


def test_cloglog_matches_direct_optimisation():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(3000), rng.standard_normal(3000), rng.integers(0, 2, 3000)])
    y = (rng.random(3000) < -np.expm1(-np.exp(X @ [-1.5, 0.4, -0.7]))).astype(float)
    w = rng.integers(1, 4, 3000).astype(float)

    def nll(b):
        mu = np.clip(-np.expm1(-np.exp(X @ b)), 1e-15, 1 - 1e-15)
        return -np.sum(w * (y * np.log(mu) + (1 - y) * np.log1p(-mu)))

    ref = optimize.minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
    fit = est.irls(X, y, w, link="cloglog")
    assert fit.coef == pytest.approx(ref, abs=1e-5)
    assert fit.score_norm < 1e-6


def test_integer_weights_equal_replication():
    rng = np.random.default_rng(2)
    n = 400
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = (rng.random(n) < 0.3).astype(float)
    w = rng.integers(1, 4, n)
    rep = np.repeat(np.arange(n), w)
    for link in ("logit", "cloglog"):
        a = est.irls(X, y, w.astype(float), link)
        b = est.irls(X[rep], y[rep], None, link)
        assert a.coef == pytest.approx(b.coef, abs=1e-10)
        assert a.cov_model == pytest.approx(b.cov_model, abs=1e-10)


def test_separation_and_rank_errors():
    X = np.column_stack([np.ones(20), np.r_[np.zeros(10), np.ones(10)]])
    y = np.r_[np.zeros(10), np.ones(10)]
    with pytest.raises(SeparationError):
        est.irls(X, y, names=["intercept", "a"])
    with pytest.raises(RankDeficientError):
        est.irls(np.column_stack([X, X[:, 1]]), np.r_[y[:15], 1 - y[15:]])
    with pytest.raises(SeparationError, match="constant"):
        est.irls(X[:, :1], np.zeros(20))
    with pytest.raises(DomainError):
        est.irls(X, y, link="probit")


def brute_force_sandwich(X, y, w, beta, clusters):
    p = X.shape[1]
    bread = np.zeros((p, p))
    for i in range(len(y)):
        mu = 1 / (1 + math.exp(-float(X[i] @ beta)))
        bread += w[i] * mu * (1 - mu) * np.outer(X[i], X[i])
    meat = np.zeros((p, p))
    for c in np.unique(clusters):
        u = np.zeros(p)
        for i in np.flatnonzero(clusters == c):
            mu = 1 / (1 + math.exp(-float(X[i] @ beta)))
            u += w[i] * (y[i] - mu) * X[i]
        meat += np.outer(u, u)
    b = np.linalg.inv(bread)
    return b @ meat @ b


def test_sandwich_six_rows_brute_force():
    X = np.array([[1, 0.0], [1, 1.0], [1, 2.0], [1, 0.5], [1, 1.5], [1, 3.0]])
    y = np.array([0, 1, 0, 0, 1, 1.0])
    w = np.array([1.0, 2.0, 0.5, 1.5, 1.0, 0.7])
    fit = est.irls(X, y, w)
    for clusters in (np.array([0, 0, 1, 1, 2, 2]), np.arange(6), np.zeros(6, int)):
        got = est.sandwich_variance(X, y, w, fit.coef, "logit", clusters)
        assert got == pytest.approx(brute_force_sandwich(X, y, w, fit.coef, clusters), abs=1e-12)
    # at the MLE the per-cluster scores of a single cluster sum to zero
    assert np.allclose(est.sandwich_variance(X, y, w, fit.coef, "logit", np.zeros(6, int)), 0, atol=1e-12)


def test_sandwich_close_to_model_when_well_specified():
    rng = np.random.default_rng(3)
    n = 10_000
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = (rng.random(n) < 1 / (1 + np.exp(-(X @ [-0.5, 0.8])))).astype(float)
    fit = est.irls(X, y)
    sand = np.sqrt(np.diag(est.sandwich_variance(X, y, None, fit.coef, "logit", np.arange(n))))
    assert sand / fit.se("model") == pytest.approx([1, 1], rel=0.10)


def single_visit_table(l, a, y):
    n = len(a)
    frame = pd.DataFrame({"id": np.arange(n), "k": 0, "y": y, "x1": 0.0, "l1": l, "a": a,
                          "weight": 1.0, "t_event": 1.0, "censored": 0})
    return est.table_from_frame(frame, ["x1"], [], ["l1"], K=0)


def test_stabilised_weight_closed_form():
    l = np.r_[np.ones(100), np.zeros(100)]
    a = np.r_[np.ones(80), np.zeros(20), np.ones(20), np.zeros(80)]
    t = single_visit_table(l, a, np.zeros(200))
    w = est.stabilized_weights(t, ["l1"], [])
    # numerator P(A = a) = 0.5; denominator P(A = a | L) = 0.8 or 0.2
    expect = np.r_[np.full(80, 0.5 / 0.8), np.full(20, 0.5 / 0.2), np.full(20, 0.5 / 0.2), np.full(80, 0.5 / 0.8)]
    assert w == pytest.approx(expect, abs=1e-9)


def test_weights_are_one_when_models_coincide():
    c = est.expand_person_period(sim_cohort())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w = est.stabilized_weights(c, ["x1", "l1", "a.lag1"], ["x1", "l1", "a.lag1"])
    assert np.allclose(w, 1.0, atol=1e-12)


def test_weight_recursion():
    t = est.expand_person_period(sim_cohort())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = est.stabilized_weights(t, return_models=True)
    k = t.frame["k"].to_numpy()
    ids = t.ids
    for i in np.unique(ids)[:50]:
        rows = np.flatnonzero(ids == i)
        assert k[rows].tolist() == list(range(rows.size))
        assert res.weights[rows] == pytest.approx(np.cumprod(res.ratio[rows]), rel=1e-12)


def test_truncation():
    w = np.arange(1.0, 101.0)
    out = est.truncate_weights(w, (5, 95))
    assert out.min() == pytest.approx(np.percentile(w, 5)) and out.max() == pytest.approx(np.percentile(w, 95))


_COHORT = {}


def sim_cohort():
    if "c" not in _COHORT:
        spec = sc.builtin_scenario("cox-high-high").with_pool(m=200, restart_m=4000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _COHORT["c"] = engine.simulate_cohort(spec, 600, seed=31)
    return _COHORT["c"]


def test_pipeline_iptw_runs_and_names():
    t = est.expand_person_period(sim_cohort())
    pipe = est.MsmPipeline(t, ["x1", "x2", "a", "x1*a"], link="cloglog")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = pipe.run()
    assert fit.converged and fit.names[-4:] == ["x1", "x2", "a", "x1*a"]
    assert fit.n_clusters == len(np.unique(t.ids))
    assert np.all(fit.weights > 0)
    naive = est.MsmPipeline(t, ["x1", "x2", "a"], weighting="none").run()
    assert np.all(naive.weights == 1)


def test_pipeline_frequency_weights_match_replication():
    t = est.expand_person_period(sim_cohort())
    ids = np.unique(t.ids)
    counts = np.random.default_rng(4).integers(0, 3, ids.size)
    counts[0] = 1
    pipe = est.MsmPipeline(t, ["x1", "a"], link="cloglog")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = pipe.run(freq=counts[np.searchsorted(ids, t.ids)].astype(float), sandwich=False)
        parts = []
        for r in range(counts.max()):
            chosen = ids[counts > r]
            f = t.frame[t.frame["id"].isin(chosen)].copy()
            f["id"] = f["id"] + r * 100_000
            parts.append(f)
        rep = est.table_from_frame(pd.concat(parts), t.x_names, t.b_names, t.l_names, t.K)
        b = est.MsmPipeline(rep, ["x1", "a"], link="cloglog").run(sandwich=False)
    assert a.coef == pytest.approx(b.coef, abs=1e-8)


def test_bootstrap_deterministic_and_validated():
    t = est.expand_person_period(sim_cohort())
    pipe = est.MsmPipeline(t, ["x1", "a"], link="cloglog", weighting="none")
    b1 = est.bootstrap_ci(pipe, 100, seed=5)
    b2 = est.bootstrap_ci(pipe, 100, seed=5)
    assert np.array_equal(b1.replicates, b2.replicates)
    assert np.all(b1.lower < b1.upper)
    assert list(b1.to_frame().columns) == ["parameter", "boot_lower", "boot_upper", "boot_se"]
    with pytest.raises(DomainError):
        est.bootstrap_ci(pipe, 50, seed=5)


def test_bootstrap_degenerate_zero_width():
    n = 30
    frame = pd.DataFrame({"id": np.repeat(np.arange(n), 3), "k": np.tile([0, 1, 2], n),
                          "y": np.tile([0, 0, 1], n), "a": 0.0, "weight": 1.0})
    t = est.table_from_frame(frame, [], [], [], K=2)
    pipe = est.MsmPipeline(t, [], weighting="none", visit_intercepts="shared")
    b = est.bootstrap_ci(pipe, 100, seed=6)
    assert b.n_failed == 0
    assert b.lower[0] == pytest.approx(b.upper[0], abs=1e-12)
    assert b.lower[0] == pytest.approx(math.log(1 / 2), abs=1e-9)


def test_bootstrap_width_matches_sandwich():
    rng = np.random.default_rng(7)
    n = 3000
    x = rng.standard_normal(n)
    y = (rng.random(n) < 1 / (1 + np.exp(-(-0.5 + 0.8 * x)))).astype(int)
    frame = pd.DataFrame({"id": np.arange(n), "k": 0, "y": y, "x1": x, "a": 0.0, "weight": 1.0})
    t = est.table_from_frame(frame, ["x1"], [], [], K=0)
    pipe = est.MsmPipeline(t, ["x1"], weighting="none")
    fit = pipe.run()
    b = est.bootstrap_ci(pipe, 400, seed=8, full_fit=fit)
    assert (b.upper - b.lower) / (3.92 * fit.se("sandwich")) == pytest.approx([1, 1], rel=0.15)


def test_bootstrap_too_many_failures():
    n = 12
    frame = pd.DataFrame({"id": np.arange(n), "k": 0, "y": np.r_[1, np.zeros(n - 1, int)],
                          "x1": np.r_[1.0, np.zeros(n - 1)], "a": 0.0, "weight": 1.0})
    t = est.table_from_frame(frame, ["x1"], [], [], K=0)
    pipe = est.MsmPipeline(t, [], weighting="none", visit_intercepts="shared")
    with pytest.raises(UnreliableIntervalError):
        est.bootstrap_ci(pipe, 100, seed=9)


def test_exhausted_individuals_dropped_with_warning():
    c = hand_cohort()
    c.status[1] = engine.STATUS_EXHAUSTED
    c.failure_time[1] = np.nan
    with pytest.warns(UserWarning, match="exhausted"):
        t = est.expand_person_period(c)
    assert 1 not in set(t.ids)
