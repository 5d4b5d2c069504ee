import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import minimal_document
from msmsim import cdf, engine, scenario as sc
from msmsim.errors import DomainError, MissingGridError, PlanningError
from msmsim.numeric import std_normal_cdf, std_normal_quantile


def test_probability_grid_shape():
    p = cdf.probability_grid()
    assert p.size == 2817
    assert np.all(np.diff(p) > 0)
    assert p[0] == 1e-5 and p[-1] == pytest.approx(1 - 1e-5)
    assert (p <= 0.5).sum() == 1409
    assert np.allclose(p[p < 0.5], 1 - p[p > 0.5][::-1])


@pytest.fixture(scope="module")
def normal_grids():
    spec = sc.parse_scenario(minimal_document())
    g_small = cdf.estimate_cdf_tables(spec, [], [0.0], 1000, seed=1)[0]
    g_big = cdf.estimate_cdf_tables(spec, [], [0.0], 100_000, seed=2)[0]
    return g_small, g_big


def test_grid_matches_normal_quantiles(normal_grids):
    _, g = normal_grids
    inner = (g.probs >= 0.01) & (g.probs <= 0.99)
    z = np.array([std_normal_quantile(p) for p in g.probs[inner]])
    assert np.max(np.abs(g.values[inner] - z)) < 0.05


def test_lookup_round_trip(normal_grids):
    _, g = normal_grids
    for p in np.linspace(0.01, 0.99, 25):
        assert abs(cdf.grid_lookup(g, std_normal_quantile(p)) - p) < 0.01


def test_grid_sizes_agree_within_dkw(normal_grids):
    small, big = normal_grids
    eps = math.sqrt(math.log(2 / 0.01) / (2 * 1000)) + math.sqrt(math.log(2 / 0.01) / (2 * 100_000))
    h = np.linspace(-2.5, 2.5, 51)
    diff = [abs(cdf.grid_lookup(small, v) - cdf.grid_lookup(big, v)) for v in h]
    assert max(diff) < eps


@given(st.floats(-8, 8), st.floats(-8, 8))
def test_lookup_monotone(h1, h2):
    probs = cdf.PROBS
    grid = cdf.QuantileGrid(((), (0.0,), 0), probs, np.array([std_normal_quantile(p) for p in probs]), 1000)
    lo, hi = sorted((h1, h2))
    assert cdf.grid_lookup(grid, lo) <= cdf.grid_lookup(grid, hi)
    assert 0 < cdf.grid_lookup(grid, lo) < 1


def test_lookup_extrapolation_and_ties():
    g = cdf.QuantileGrid(((), (), 0), np.array([0.1, 0.5, 0.9]), np.array([0.0, 1.0, 1.0]), 10)
    assert cdf.grid_lookup(g, 1.0) == 0.9          # ties map to the largest probability
    assert cdf.grid_lookup(g, -100.0) == 0.05      # floored at probs[0] / 2
    assert cdf.grid_lookup(g, 100.0) == pytest.approx(0.95)
    with pytest.raises(DomainError):
        cdf.QuantileGrid(((), (), 0), np.array([0.5, 0.1]), np.array([0.0, 1.0]), 10)


def test_survivor_quantiles_uniform(normal_grids):
    _, g = normal_grids
    z = np.random.default_rng(3).standard_normal(100_000)
    u = np.array([cdf.grid_lookup(g, v) for v in z[:20_000]])
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_estimation_needs_large_m():
    with pytest.raises(DomainError):
        cdf.estimate_cdf_tables(sc.parse_scenario(minimal_document()), [], [0.0], 999)


def test_plan_rejects_continuous_x():
    with pytest.raises(PlanningError):
        cdf.check_grid_plan(sc.builtin_scenario("logit-medium"))


def discrete_x_spec(visits=3):
    doc = sc.preset_document("cox-high-high")
    doc["visits"] = visits
    doc["baseline_x"][0] = {"name": "x1", "kind": "bernoulli", "intercept": 0.0}
    doc["pool"] = {"m": 1000, "restart_m": 20_000}
    return sc.parse_scenario(doc)


@pytest.fixture(scope="module")
def discrete_grids():
    spec = discrete_x_spec()
    return spec, cdf.build_grid_set(spec, 2000, seed=4, regimes=[(0.0,) * 3, (1.0,) * 3])


def test_grid_set_keys_and_missing(discrete_grids):
    spec, grids = discrete_grids
    assert len(grids) == 4 * 2 * 3
    with pytest.raises(MissingGridError):
        grids((0.0, 0.0), (1.0, 0.0), 1, 0.3)


def test_sidecar_round_trip(discrete_grids, tmp_path):
    _, grids = discrete_grids
    path = tmp_path / "grids.csv"
    grids.save(path)
    back = cdf.GridSet.load(path)
    assert set(back.keys()) == set(grids.keys())
    for key in grids.keys():
        a, b = grids._grids[key], back._grids[key]
        assert np.array_equal(a.values, b.values) and np.array_equal(a.probs, b.probs)
    assert list(np.genfromtxt(path, delimiter=",", dtype=str, max_rows=1)) == cdf.SIDECAR_COLUMNS


def test_known_cdf_engine_matches_matched(discrete_grids, quiet):
    spec, grids = discrete_grids
    n = 20_000
    known = engine.simulate_potential_arm(spec, [1.0] * 3, n, seed=5, engine="known-cdf", cdf=grids)
    match = engine.simulate_potential_arm(spec, [1.0] * 3, n, seed=6)
    for k in range(3):
        p1 = np.mean(known.fail_visit == k)
        p2 = np.mean(match.fail_visit == k)
        se = math.sqrt(p1 * (1 - p1) / n + p2 * (1 - p2) / n)
        assert abs(p1 - p2) < 3.5 * se
