import copy
import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import minimal_document
from msmsim import scenario as sc
from msmsim.errors import InvalidHazardError, ScenarioError, UnknownPresetError


def cox():
    return sc.builtin_scenario("cox-high-high")


def test_eval_g_cloglog_oracles():
    msm = cox().msm
    x = {"x1": 0.0, "x2": 0.0}
    assert math.exp(-3.3) == pytest.approx(0.036883, abs=1e-6)
    assert sc.eval_g(msm, [0.0], x, 0) == pytest.approx(0.036211, abs=1e-6)
    # Exact value 0.0134769; the commonly quoted 0.013478 is good to 5 decimals.
    assert sc.eval_g(msm, [1.0], x, 0) == pytest.approx(0.013478, abs=1.5e-6)
    assert sc.eval_g(msm, [1.0], x, 0) == pytest.approx(-math.expm1(-math.exp(-4.3)), rel=1e-14)


def test_eval_g_logit_zero_is_half():
    msm = sc.MsmSpec(link="logit", baseline=0.0, terms=())
    assert sc.eval_g(msm, [1.0], {}, 0) == 0.5


@given(st.floats(-3, 3), st.sampled_from([0.0, 1.0]), st.integers(0, 9))
def test_cloglog_linear_predictor_identity(x1, a, k):
    spec = cox()
    hist = [a] * (k + 1)
    x = {"x1": x1, "x2": 1.0}
    g = sc.eval_g(spec.msm, hist, x, k)
    eta = math.log(spec.msm.baseline) + 0.5 * x1 + 0.5 - a - 0.4 * x1 * a
    assert math.log(-math.log1p(-g)) == pytest.approx(eta, abs=1e-9)


def test_eval_g_term_order_invariant():
    spec = cox()
    reordered = sc.MsmSpec(spec.msm.link, spec.msm.baseline, tuple(reversed(spec.msm.terms)),
                           spec.msm.continuous_time)
    x = {"x1": 0.7, "x2": 1.0}
    for k in range(3):
        hist = [1.0] * (k + 1)
        assert sc.eval_g(spec.msm, hist, x, k) == pytest.approx(sc.eval_g(reordered, hist, x, k), rel=1e-14)


def test_additive_nonpositive_hazard_rejected():
    msm = sc.MsmSpec(link="additive", baseline=0.01, terms=(("a", -0.05),))
    assert sc.eval_g(msm, [0.0], {}, 0) == pytest.approx(-math.expm1(-0.01))
    with pytest.raises(InvalidHazardError):
        sc.eval_g(msm, [1.0], {}, 0)


def test_logit_presets():
    for level, b0 in (("low", -4.1), ("medium", -2.5), ("high", -1.2)):
        spec = sc.builtin_scenario(f"logit-{level}")
        assert spec.K == 9
        assert spec.msm.baseline == b0
        assert set(spec.rho) == {-0.9}
        assert dict(spec.msm.terms) == {"x1": 0.5, "x2": 0.5, "a": -1.0}
        assert spec.x_names == ["x1", "x2"] and spec.b_names == ["b1", "b2"]
        assert spec.l_names == ["l1", "l2"]
        assert dict(spec.risk_score.predictor.terms) == {"b1": 0.3, "b2": 0.5, "l1": 1.0, "l2": 1.0}


def test_cox_presets():
    spec = sc.builtin_scenario("cox-high-high")
    assert spec.msm.link == "cloglog"
    assert spec.msm.baseline == pytest.approx(math.exp(-3.3))
    assert dict(spec.msm.terms) == {"x1": 0.5, "x2": 0.5, "a": -1.0, "x1*a": -0.4}
    assert spec.censoring_rate == pytest.approx(math.exp(-3.6))
    t = dict(spec.treatment.predictor.terms)
    assert [t[n] for n in ("x1", "x2", "b1", "l1", "l2")] == [0.2, 0.3, 0.2, 0.6, 0.6]
    assert set(spec.rho) == {-0.9}
    low = sc.builtin_scenario("cox-low-low")
    t = dict(low.treatment.predictor.terms)
    assert [t[n] for n in ("x1", "x2", "b1", "l1", "l2")] == [0.1, 0.15, 0.1, 0.3, 0.3]
    assert set(low.rho) == {-0.5}


def test_unknown_preset():
    with pytest.raises(UnknownPresetError):
        sc.builtin_scenario("nonexistent")


def test_minimal_spec_is_valid():
    spec = sc.parse_scenario(minimal_document())
    assert spec.K == 0 and spec.b_names == [] and spec.l_names == ["l1"]


def test_rho_out_of_range():
    doc = sc.preset_document("logit-medium")
    doc["rho"] = [-0.9] * 3 + [0.2] + [-0.9] * 6
    with pytest.raises(ScenarioError, match="rho out of range"):
        sc.parse_scenario(doc)
    doc["rho"] = -1.0
    with pytest.raises(ScenarioError, match="rho out of range"):
        sc.parse_scenario(doc)


def test_forward_reference_rejected():
    doc = sc.preset_document("logit-medium")
    doc["confounders"][0]["terms"]["l2"] = 0.3  # l2 is generated after l1
    with pytest.raises(ScenarioError, match="l2"):
        sc.parse_scenario(doc)


@pytest.mark.parametrize("bad", ["b1", "l1", "b2*a"])
def test_msm_term_may_not_use_b_or_l(bad):
    doc = sc.preset_document("logit-medium")
    doc["msm"]["terms"][bad] = 0.1
    with pytest.raises(ScenarioError, match="msm"):
        sc.parse_scenario(doc)


def test_unknown_field_named():
    doc = sc.preset_document("logit-medium")
    doc["treatmnt"] = {}
    with pytest.raises(ScenarioError, match="treatmnt"):
        sc.parse_scenario(doc)


@pytest.mark.parametrize("name", sc.PRESET_NAMES)
def test_serialize_round_trip(name):
    spec = sc.builtin_scenario(name)
    again = sc.parse_scenario(json.loads(sc.dumps(spec)))
    assert again == spec
    assert again.digest() == spec.digest()


@given(st.floats(-0.99, 0.0), st.integers(1, 5), st.floats(-2, 2))
def test_round_trip_generated(rho, visits, coef):
    doc = minimal_document(visits=visits, rho=rho)
    doc["treatment"]["terms"]["l1"] = coef
    doc["msm"]["terms"]["a*k"] = coef
    spec = sc.parse_scenario(doc)
    assert sc.parse_scenario(sc.serialize(spec)) == spec


def test_split_term():
    assert sc.split_term("x1*a.lag1") == [("x1", 0), ("a", 1)]
    assert sc.split_term("a*k") == [("a", 0), ("k", 0)]


def test_per_visit_coefficients():
    doc = minimal_document(visits=3)
    doc["msm"]["baseline"] = [-1.0, -2.0, -3.0]
    spec = sc.parse_scenario(doc)
    assert [sc.eval_g(spec.msm, [0.0] * (k + 1), {}, k) for k in range(3)] == pytest.approx(
        [1 / (1 + math.exp(v)) for v in (1.0, 2.0, 3.0)])
    bad = copy.deepcopy(doc)
    bad["msm"]["baseline"] = [-1.0, -2.0]
    with pytest.raises(ScenarioError):
        sc.parse_scenario(bad)


def test_packaged_schema_lists_top_level_keys():
    from importlib.resources import files
    schema = json.loads(files("msmsim").joinpath("schema/scenario.schema.json").read_text())
    assert set(schema["properties"]) == sc._TOP_KEYS
