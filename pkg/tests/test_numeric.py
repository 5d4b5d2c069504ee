import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from msmsim import numeric
from msmsim.errors import DomainError


def erf_series_cdf(z, terms=80):
    """Independent normal CDF oracle from the Maclaurin series of erf."""
    x = z / math.sqrt(2.0)
    s = sum((-1) ** n * x ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1)) for n in range(terms))
    return 0.5 * (1.0 + 2.0 / math.sqrt(math.pi) * s)


def test_normal_quantile_oracle():
    assert numeric.std_normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-5)
    z = numeric.std_normal_quantile(0.975)
    assert erf_series_cdf(z) == pytest.approx(0.975, abs=1e-9)


@pytest.mark.parametrize("z", [-3.0, -1.5, -0.3, 0.0, 0.7, 2.2])
def test_normal_cdf_matches_series(z):
    assert numeric.std_normal_cdf(z) == pytest.approx(erf_series_cdf(z), abs=1e-12)


@given(st.floats(1e-12, 1 - 1e-12))
def test_quantile_inverts_cdf(p):
    z = numeric.std_normal_quantile(p)
    assert numeric.std_normal_cdf(z) == pytest.approx(p, rel=1e-9, abs=1e-15)


def test_copula_conditional_oracle():
    # Phi((Phi^-1(0.25) - (-0.5) Phi^-1(0.1)) / sqrt(0.75))
    z = (-0.6744897501960817 - 0.5 * 1.2815515655446004) / math.sqrt(0.75)
    # The quoted intermediate -1.51876 carries rounding from 5-digit inputs.
    assert z == pytest.approx(-1.51876, abs=5e-5)
    p = numeric.copula_conditional_failure_prob(0.25, -0.5, 0.1)
    # Exact value 0.0644143; the commonly quoted 0.064418 is good to 5 digits.
    assert p == pytest.approx(stats.norm.cdf(z), abs=1e-12)
    assert p == pytest.approx(0.064418, abs=1e-5)
    assert p == pytest.approx(erf_series_cdf(z), abs=1e-10)


def test_copula_rho_zero_is_marginal():
    u = np.linspace(0.01, 0.99, 9)
    assert np.allclose(numeric.copula_conditional_failure_prob(0.3, 0.0, u), 0.3)


@given(st.floats(0.001, 0.999), st.floats(-0.99, 0.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_copula_monotone_in_risk_quantile(g, rho, u1, u2):
    lo, hi = sorted((u1, u2))
    p_lo = numeric.copula_conditional_failure_prob(g, rho, lo)
    p_hi = numeric.copula_conditional_failure_prob(g, rho, hi)
    # rho <= 0: a higher risk quantile never lowers the failure probability.
    assert p_hi >= p_lo - 1e-12


@pytest.mark.parametrize("g", [0.001, 0.036211, 0.25, 0.5, 0.9])
@pytest.mark.parametrize("rho", [-0.99, -0.9, -0.5, 0.0])
def test_copula_total_probability(g, rho):
    assert abs(numeric.copula_total_probability(g, rho) - g) < 1e-6


def test_copula_sample_low_quantile_survives():
    rng = np.random.default_rng(1)
    u = np.array([numeric.copula_sample(-0.9, 0.001, rng).u_y for _ in range(20_000)])
    # z_y ~ N(0.9 * 3.09, 1 - 0.81): E[u_y] = Phi(2.781 / sqrt(1 + 0.19))
    expected = numeric.std_normal_cdf(-0.9 * numeric.std_normal_quantile(0.001) / math.sqrt(1.19))
    assert u.mean() > 0.99
    assert u.mean() == pytest.approx(expected, abs=3e-3)


def test_copula_domain_errors():
    with pytest.raises(DomainError):
        numeric.copula_conditional_failure_prob(0.0, -0.5, 0.5)
    with pytest.raises(DomainError):
        numeric.copula_conditional_failure_prob(0.2, -1.0, 0.5)
    with pytest.raises(DomainError):
        numeric.copula_conditional_failure_prob(0.2, -0.5, 1.5)


def test_rank_jitter_uniform():
    rng = np.random.default_rng(5)
    m = 5000
    u = numeric.rank_jitter_quantiles(rng.standard_normal(m), rng)
    d = stats.kstest(u, "uniform").statistic
    assert d < 1.63 / math.sqrt(m)


def test_rank_jitter_ties_uniform():
    rng = np.random.default_rng(6)
    u = numeric.rank_jitter_quantiles(np.zeros(4000), rng)
    assert stats.kstest(u, "uniform").pvalue > 0.01


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=60), st.integers(0, 2**32 - 1))
def test_ranks_are_a_permutation_consistent_with_order(scores, seed):
    r = numeric.ranks_with_random_ties(scores, np.random.default_rng(seed))
    assert sorted(r) == list(range(1, len(scores) + 1))
    s = np.asarray(scores)
    i, j = np.nonzero(s[:, None] < s[None, :])
    assert np.all(r[i] < r[j])


def test_discrete_option1_uniform_over_steps():
    rng = np.random.default_rng(7)
    probs = np.array([0.2, 0.5, 0.3])
    cdf = lambda j: 0.0 if j < 0 else float(probs[: j + 1].sum())  # noqa: E731
    h = rng.choice(3, size=20_000, p=probs)
    u = np.array([numeric.discrete_quantile_option1(int(v), cdf, rng) for v in h])
    assert stats.kstest(u, "uniform").pvalue > 0.01
    with pytest.raises(DomainError):
        numeric.discrete_quantile_option1(5, cdf, rng)


def brute_force_p11(r, c, psi, n=200_001):
    a = np.linspace(max(0.0, r + c - 1.0), min(r, c), n)[1:-1]
    err = np.abs(psi * (r - a) * (c - a) - a * (1 - r - c + a))
    return a[np.argmin(err)]


def test_plackett_two_by_two():
    t = numeric.odds_ratio_table_option2(0.5, [0.5, 0.5], [4.0])
    assert t[0, 0] == pytest.approx(1 / 3, abs=1e-12)
    assert t[1, 1] == pytest.approx(1 / 3, abs=1e-12)
    assert t[0, 1] == pytest.approx(1 / 6, abs=1e-12)
    assert t[1, 0] == pytest.approx(1 / 6, abs=1e-12)
    assert t[0, 0] == pytest.approx(brute_force_p11(0.5, 0.5, 4.0), abs=1e-5)
    assert numeric.conditional_failure_from_table(t, 0) == pytest.approx(2 / 3, abs=1e-12)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.1, 10.0))
def test_plackett_margins_and_odds_ratio(r, c, psi):
    t = numeric.odds_ratio_table_option2(r, [c, 1 - c], [psi])
    assert t.sum(axis=1) == pytest.approx([r, 1 - r], abs=1e-10)
    assert t.sum(axis=0) == pytest.approx([c, 1 - c], abs=1e-10)
    assert t[1, 1] * t[0, 0] / (t[1, 0] * t[0, 1]) == pytest.approx(psi, rel=1e-6)


def test_ipf_three_categories():
    mh = [0.3, 0.5, 0.2]
    ors = [2.0, 5.0]
    t = numeric.odds_ratio_table_option2(0.2, mh, ors)
    assert t.sum(axis=0) == pytest.approx(mh, abs=1e-9)
    assert t.sum(axis=1) == pytest.approx([0.2, 0.8], abs=1e-9)
    for j, o in enumerate(ors, start=1):
        assert (t[1, j] / t[0, j]) / (t[1, 0] / t[0, 0]) == pytest.approx(o, rel=1e-6)
