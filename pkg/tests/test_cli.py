import json

import numpy as np
import pandas as pd
import pytest

from msmsim import checks, cli, estimation as est, scenario as sc
from msmsim.io import read_person_period

pytestmark = pytest.mark.filterwarnings("ignore")

SMALL = ["--preset", "logit-medium", "--n", "300", "--m", "200", "--seed", "7"]


def run(*argv):
    """Call the CLI in-process; argparse errors exit via SystemExit."""
    try:
        return cli.main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", *SMALL, "--out", out) == cli.EXIT_OK
    return out


def test_simulate_outputs(simulated):
    names = {p.name for p in simulated.iterdir()}
    assert {"person_period.csv", "summary.csv", "manifest.json"} <= names
    man = json.loads((simulated / "manifest.json").read_text())
    assert man["root_seed"] == 7 and man["command"] == "simulate"
    spec = sc.parse_scenario(man["scenario"])
    assert man["scenario_digest"] == spec.digest() and spec.pool.m == 200
    summary = pd.read_csv(simulated / "summary.csv")
    assert list(summary.columns) == ["id", "event_time", "event", "censor_reason"]
    assert len(summary) == 300


def test_same_seed_same_bytes(simulated, tmp_path):
    assert run("simulate", *SMALL, "--threads", 2, "--out", tmp_path) == cli.EXIT_OK
    for name in ("person_period.csv", "summary.csv"):
        assert (tmp_path / name).read_bytes() == (simulated / name).read_bytes()


def test_fit_reproduces_library_pipeline(simulated, tmp_path):
    out = tmp_path / "fit.csv"
    assert run("fit", "--data", simulated / "person_period.csv", "--out", out) == cli.EXIT_OK
    got = pd.read_csv(out)
    assert not any(c.startswith("boot_") for c in got.columns)
    assert list(got.columns) == ["parameter", "estimate", "se_model", "se_sandwich", "model_lower",
                                 "model_upper", "sandwich_lower", "sandwich_upper", "converged"]
    table = read_person_period(simulated / "person_period.csv", terms=["x1", "x2", "a"])
    fit = est.MsmPipeline(table, ["x1", "x2", "a"]).run()
    assert got["parameter"].tolist() == fit.names
    assert got["estimate"].to_numpy() == pytest.approx(fit.coef, abs=1e-12)
    assert got["se_sandwich"].to_numpy() == pytest.approx(fit.se("sandwich"), abs=1e-12)


def test_fit_with_bootstrap_columns(simulated, tmp_path):
    out = tmp_path / "fit.csv"
    assert run("fit", "--data", simulated / "person_period.csv", "--preset", "logit-medium",
               "--bootstrap", 100, "--seed", 3, "--out", out) == cli.EXIT_OK
    got = pd.read_csv(out)
    assert {"boot_lower", "boot_upper", "boot_se", "boot_failed"} <= set(got.columns)
    assert np.all(got["boot_lower"] < got["boot_upper"])


def test_fit_schema_mismatch(simulated, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    pd.read_csv(simulated / "person_period.csv").drop(columns="a").to_csv(bad, index=False)
    assert run("fit", "--data", bad, "--out", tmp_path / "f.csv") == cli.EXIT_INPUT
    err = capsys.readouterr().err
    assert "missing columns ['a']" in err and "found" in err


@pytest.mark.parametrize("argv", [
    ["simulate", "--preset", "no-such-preset", "--n", "10", "--out", "x"],
    ["simulate", "--n", "10"],
    ["simulate", "--preset", "logit-low", "--scenario", "s.json", "--n", "10", "--out", "x"],
    ["fit", "--data", "does-not-exist.csv"],
    ["bogus"],
])
def test_invalid_input_exit_3(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(*argv) == cli.EXIT_INPUT


def test_bad_scenario_file_exit_3(tmp_path, capsys):
    doc = sc.builtin_scenario("logit-low").to_dict()
    doc["rho"] = 0.3
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    assert run("simulate", "--scenario", path, "--n", 10, "--out", tmp_path / "o") == cli.EXIT_INPUT
    assert "rho" in capsys.readouterr().err


def test_validate_ct_json(tmp_path):
    path = tmp_path / "v.json"
    assert run("validate", "--preset", "ct-example", "--json", path) == cli.EXIT_OK
    rep = json.loads(path.read_text())
    assert rep["passed"] is True and len(rep["checks"]) == 3


def test_validate_failure_exit_2(tmp_path, monkeypatch):
    failing = checks.CheckResult("forced", False, 1.0, 0.0)
    monkeypatch.setattr(checks, "check_ct_poisson", lambda **kw: failing)
    path = tmp_path / "v.json"
    assert run("validate", "--preset", "ct-example", "--json", path) == cli.EXIT_VALIDATION
    assert json.loads(path.read_text())["passed"] is False


def test_ct_simulate(tmp_path):
    assert run("simulate", "--preset", "ct-example", "--engine", "ctmsm", "--n", 50, "--m", 20,
               "--seed", 1, "--out", tmp_path) == cli.EXIT_OK
    events = pd.read_csv(tmp_path / "events.csv")
    assert list(events.columns) == ["id", "time", "variable", "value"]
    terminal = events[events["variable"].isin(["failure", "censored"])]
    assert len(terminal) == 50 and terminal["id"].nunique() == 50


def test_study_and_sensitivity(tmp_path):
    design = tmp_path / "d.json"
    design.write_text(json.dumps({"cells": [{"scenario": "logit-low", "n": 200}], "replicates": 2, "m": 200}))
    assert run("study", "--design", design, "--seed", 2, "--out-dir", tmp_path / "st") == cli.EXIT_OK
    for name in ("summary.csv", "replicates.csv", "bias.csv", "coverage.csv", "power.csv", "se.csv",
                 "manifest.json"):
        assert (tmp_path / "st" / name).exists()
    design.write_text(json.dumps({"cells": [{"scenario": "logit-low"}]}))
    assert run("study", "--design", design, "--out-dir", tmp_path / "bad") == cli.EXIT_INPUT
    out = tmp_path / "sens.csv"
    assert run("sensitivity", "--preset", "logit-low", "--m-list", "10,50", "--reference-m", 50, "--n", 100,
               "--seed", 3, "--out", out) == cli.EXIT_OK
    sens = pd.read_csv(out)
    assert list(sens.columns) == ["m", "reference_m", "agreement", "mc_se", "n", "exhausted"]
    # the reference row is compared with a rerun on independent match streams
    assert sens["m"].tolist() == [10, 50] and (sens["reference_m"] == 50).all()
    assert sens["agreement"].between(0, 100).all()
