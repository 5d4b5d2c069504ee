import dataclasses

import numpy as np
import pytest

from msmsim import checks, engine, scenario as sc

pytestmark = pytest.mark.filterwarnings("ignore:pool size")


@pytest.fixture(scope="module")
def cohort():
    spec = sc.builtin_scenario("logit-high").with_pool(m=500, restart_m=10_000)
    return engine.simulate_cohort(spec, 4000, seed=41, censor=False)


def test_total_probability_identity():
    r = checks.check_copula_total_probability()
    assert r.passed and r.statistic < 1e-6
    assert r.detail["grid_points"] == 15


def test_copula_pit_accepts_true_correlation(cohort):
    r = checks.check_copula_pit(cohort)
    assert r.passed, r.line()


def test_copula_pit_detects_sign_flip(cohort):
    # Positive correlation is rejected by validation, so build the claim directly.
    flipped = dataclasses.replace(cohort.spec, rho=tuple(-r for r in cohort.spec.rho))
    assert not checks.check_copula_pit(cohort, flipped).passed
    independent = dataclasses.replace(cohort.spec, rho=tuple(0.0 for _ in cohort.spec.rho))
    assert not checks.check_copula_pit(cohort, independent).passed


def test_pool_uniformity_needs_recorded_pools(cohort):
    with pytest.raises(ValueError, match="record_pool"):
        checks.check_pool_quantile_uniformity(cohort)


def test_pool_and_slot_uniformity():
    spec = sc.builtin_scenario("logit-medium").with_pool(m=2000, restart_m=40_000)
    pooled = engine.simulate_cohort(spec, 5, seed=42, record_pool=True)
    r = checks.check_pool_quantile_uniformity(pooled)
    assert r.passed and r.detail["m"] == 2000 and r.detail["tests"] >= 5
    arm = engine.simulate_potential_arm(spec, [1.0] * (spec.K + 1), 3000, 43)
    s = checks.check_slot_uniformity(arm)
    assert s.passed, s.line()
    assert len(s.detail["pvalues"]) == spec.K + 1


def test_hazard_match_on_arm():
    spec = sc.builtin_scenario("cox-high-high").with_pool(m=500, restart_m=10_000)
    arm = engine.simulate_potential_arm(spec, [0.0] * (spec.K + 1), 5000, 44)
    r = checks.check_hazard_match(arm)
    assert r.passed, r.line()
    tab = checks.hazard_table(arm)
    assert {"k", "stratum", "at_risk", "observed", "expected", "z"} <= set(tab[0])
    assert sum(row["at_risk"] for row in tab if row["k"] == 0) == 5000


def test_within_visit_law_needs_failures():
    spec = sc.builtin_scenario("cox-high-high").with_pool(m=500, restart_m=10_000)
    arm = engine.simulate_potential_arm(spec, [0.0] * (spec.K + 1), 3000, 45)
    pit = checks.within_visit_pit(arm)
    assert np.all((pit >= 0) & (pit <= 1))
    r = checks.check_within_visit_law(arm, min_failures=100)
    assert r.passed, r.line()
    assert not checks.check_within_visit_law(arm, min_failures=10**6).passed


def test_result_serialises():
    r = checks.check_copula_total_probability()
    d = r.to_dict()
    assert d["passed"] is True and d["name"] == r.name
    assert r.line().startswith("[PASS]")
