import numpy as np
import pandas as pd
import pytest

from msmsim import scenario as sc, studies

pytestmark = pytest.mark.filterwarnings("ignore:pool size")


def test_truth_and_working_terms():
    spec = sc.builtin_scenario("cox-high-high")
    terms = studies.working_terms_modifier(spec)
    # the MSM's own terms, then the missing modifier x2*a whose true value is 0
    assert terms == ["a", "x1", "x1*a", "x2", "x2*a"]
    truth = studies.msm_truth(spec, terms)
    assert {t: truth[t] for t in terms} == {"a": -1.0, "x1": 0.5, "x1*a": -0.4, "x2": 0.5, "x2*a": 0.0}
    assert truth["visit0"] == pytest.approx(-3.3)
    assert studies.fit_link(spec) == "cloglog"
    assert studies.fit_link(sc.builtin_scenario("logit-low")) == "logit"


def test_validation_report_columns():
    rep = studies.run_msm_validation("logit-medium", 800, m=200, seed=51)
    assert list(rep.table.columns) == ["parameter", "true", "naive_est", "naive_se", "iptw_est", "iptw_se",
                                      "naive_bias", "iptw_bias"]
    assert {"x1", "x2", "a"} <= set(rep.table["parameter"])
    assert rep.estimate("iptw", "a") == pytest.approx(
        float(rep.table.set_index("parameter").loc["a", "iptw_est"]))
    assert 0 < rep.failure_fraction < 1 and rep.meta["m"] == 200


def test_summarise_replicates_hand_example():
    results = [{"failed": False, "naive_est": np.array([0.9]), "naive_se": np.array([0.1]),
                "iptw_est": np.array([1.1]), "sand_se": np.array([0.05])},
               {"failed": False, "naive_est": np.array([1.3]), "naive_se": np.array([0.1]),
                "iptw_est": np.array([0.9]), "sand_se": np.array([0.2])},
               {"failed": True}]
    out = studies.summarise_replicates(results, {"a": 1.0}, ["a"], "s", 10).set_index("method")
    assert set(out.index) == {"naive", "sandwich"}
    assert out.loc["naive", "bias"] == pytest.approx(0.1)
    assert out.loc["naive", "emp_se"] == pytest.approx(np.std([0.9, 1.3], ddof=1))
    # naive intervals: (0.704, 1.096) covers 1; (1.104, 1.496) does not
    assert out.loc["naive", "coverage"] == 0.5 and out.loc["naive", "power"] == 1.0
    # sandwich: (1.002, 1.198) misses 1; (0.508, 1.292) covers it
    assert out.loc["sandwich", "coverage"] == 0.5
    assert out.loc["sandwich", "replicates"] == 2
    assert out.attrs["failed_replicates"] == 1


def test_small_study_shape_and_determinism():
    a = studies.run_sim_study([("cox-high-high", 150)], 2, 52, B=100, m=200)
    b = studies.run_sim_study([("cox-high-high", 150)], 2, 52, B=100, m=200, workers=2)
    pd.testing.assert_frame_equal(a.summary, b.summary)
    s = a.summary
    assert list(s.columns[:10]) == ["scenario", "n", "method", "parameter", "bias", "emp_se", "mean_se",
                                    "coverage", "power", "mc_se"]
    # one row per parameter per method
    assert len(s) == 3 * 5
    assert set(s["method"]) == {"naive", "sandwich", "bootstrap"}
    assert len(a.replicates) == 2


def test_study_without_bootstrap():
    res = studies.run_sim_study([{"scenario": "logit-low", "n": 300}], 1, 53, m=200)
    assert set(res.summary["method"]) == {"naive", "sandwich"}
    assert res.summary["emp_se"].isna().all()
