"""Command-line interface (``msmsim``).

Exit codes: 0 success, 2 a validation check failed, 3 invalid input.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import checks, ctmsm
from .engine import THREADS_ENV, default_workers, sensitivity_m_run, simulate_cohort, simulate_potential_arm
from .errors import MsmSimError, PlanningError
from .estimation import MsmPipeline, bootstrap_ci, expand_person_period
from .io import new_manifest, read_person_period, write_csv, write_person_period, write_summary
from .rng import resolve_seed
from .scenario import DEFAULT_SEED, PRESET_NAMES, builtin_scenario, load_scenario
from .studies import run_sim_study

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT = 0, 2, 3
CT_PRESET = "ct-example"


class InputError(Exception):
    """Bad command-line input."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _csv_list(text: str, cast=str) -> list:
    return [cast(v.strip()) for v in text.split(",") if v.strip()]


def _load_spec(args):
    if bool(args.scenario) == bool(args.preset):
        raise InputError("give exactly one of --scenario and --preset")
    if args.scenario:
        return load_scenario(args.scenario)
    if args.preset == CT_PRESET:
        return None
    return builtin_scenario(args.preset)


def _regime(text: str | None, K: int):
    if text is None:
        return None
    if text == "always":
        return [1.0] * (K + 1)
    if text == "never":
        return [0.0] * (K + 1)
    vals = _csv_list(text, float)
    if len(vals) != K + 1:
        raise InputError(f"--regime needs {K + 1} comma-separated values, 'always' or 'never'")
    return vals


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = _load_spec(args)
    seed = resolve_seed(args.seed)
    workers = args.threads or default_workers()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.engine == "ctmsm" or spec is None:
        if spec is not None or args.engine != "ctmsm":
            raise PlanningError(f"the ctmsm engine runs only the built-in '{CT_PRESET}' preset, and that "
                                "preset needs --engine ctmsm")
        return _simulate_ct(args, seed, workers, out, t0)
    if args.m:
        spec = spec.with_pool(m=args.m, restart_m=max(spec.pool.restart_m, 20 * args.m))
    cdf = None
    outputs = ["person_period.csv", "summary.csv", "manifest.json"]
    if args.engine == "known-cdf":
        from .cdf import GridSet, build_grid_set, check_grid_plan
        check_grid_plan(spec)
        if args.grids and Path(args.grids).exists():
            cdf = GridSet.load(args.grids)
        else:
            cdf = build_grid_set(spec, args.grid_m, seed)
            cdf.save(out / "grids.csv")
            outputs.append("grids.csv")
    regime = _regime(args.regime, spec.K)
    kwargs = dict(engine=args.engine, seed=seed, workers=workers, cdf=cdf)
    cohort = (simulate_potential_arm(spec, regime, args.n, **kwargs) if regime is not None
              else simulate_cohort(spec, args.n, **kwargs))
    table = expand_person_period(cohort)
    write_person_period(table, out / "person_period.csv", spec, blind=args.blind)
    write_summary(cohort, out / "summary.csv")
    man = new_manifest("simulate", spec, seed, workers, _args_dict(args))
    man.outputs = outputs
    man.timing["seconds"] = round(time.perf_counter() - t0, 3)
    man.write(out / "manifest.json")
    print(f"simulated {len(cohort)} individuals; observed failures {cohort.event.mean():.3f}; output in {out}")
    return EXIT_OK


def _simulate_ct(args, seed, workers, out, t0) -> int:
    spec = ctmsm.worked_example(m=args.m or 200)
    recs = ctmsm.simulate_ct_cohort(spec, args.n, seed)
    write_csv(ctmsm.records_to_events(recs), out / "events.csv")
    summ = pd.DataFrame({"id": [r.id for r in recs], "event_time": [r.time for r in recs],
                         "event": [int(r.event) for r in recs],
                         "censor_reason": ["" if r.event else "administrative" for r in recs]})
    write_csv(summ, out / "summary.csv")
    man = new_manifest("simulate", None, seed, workers, _args_dict(args))
    man.outputs = ["events.csv", "summary.csv", "manifest.json"]
    man.timing["seconds"] = round(time.perf_counter() - t0, 3)
    man.write(out / "manifest.json")
    print(f"simulated {len(recs)} continuous-time individuals; output in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    spec = None
    if args.scenario or args.preset:
        spec = _load_spec(args)
    terms = _csv_list(args.msm)
    table = read_person_period(args.data, spec, terms, args.visit_intercepts)
    pipe = MsmPipeline(table, terms, args.link, args.weights, args.visit_intercepts,
                       _csv_list(args.den_terms) if args.den_terms else None,
                       _csv_list(args.num_terms) if args.num_terms else None,
                       tuple(_csv_list(args.truncate, float)) if args.truncate else None)
    fit = pipe.run()
    frame = fit.to_frame()
    ci_model = fit.conf_int("model")
    frame["model_lower"], frame["model_upper"] = ci_model[:, 0], ci_model[:, 1]
    ci = fit.conf_int("sandwich")
    frame["sandwich_lower"], frame["sandwich_upper"] = ci[:, 0], ci[:, 1]
    if args.bootstrap:
        bs = bootstrap_ci(pipe, args.bootstrap, resolve_seed(args.seed), full_fit=fit)
        frame = frame.merge(bs.to_frame(), on="parameter")
        frame["boot_failed"] = bs.n_failed
    frame["converged"] = fit.converged
    if args.out:
        write_csv(frame, args.out)
    else:
        sys.stdout.write(frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def quick_checks(spec, seed: int, workers: int) -> list:
    """Fast invariant checks on one scenario (well under a minute)."""
    spec = spec.with_pool(m=1000, restart_m=20_000)
    never = [0.0] * (spec.K + 1)
    arm = simulate_potential_arm(spec, never, 2000, seed, workers=workers)
    obs = simulate_cohort(spec, 1000, "matched", seed, workers=workers)
    out = [checks.check_copula_total_probability(),
           checks.check_slot_uniformity(arm),
           checks.check_copula_pit(arm, spec, seed=seed),
           checks.check_copula_pit(obs, spec, seed=seed),
           checks.check_hazard_match(arm, strata=4)]
    if spec.msm.continuous_time:
        out.append(checks.check_within_visit_law(arm, min_failures=100))
    out.append(checks.check_ct_poisson(n=2000, seed=seed))
    out.append(checks.check_ct_rho0(n=1000, m=30, seed=seed))
    return out


def cmd_validate(args) -> int:
    seed = resolve_seed(args.seed)
    workers = args.threads or default_workers()
    report = {"preset": args.preset, "level": args.level, "seed": seed, "checks": []}
    passed = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if args.preset == CT_PRESET:
            results = [checks.check_ct_poisson(n=2000, seed=seed), checks.check_ct_rho0(n=1000, m=30, seed=seed),
                       checks.check_ct_survival(n=500, seed=seed)]
        else:
            results = quick_checks(builtin_scenario(args.preset), seed, workers)
    for r in results:
        print(r.line())
        passed &= bool(r.passed)
        d = r.to_dict()
        d["detail"] = {k: v for k, v in d["detail"].items() if k != "table"}
        report["checks"].append(d)
    if args.level == "full":
        from .acceptance import run_all
        for r in run_all(workers):
            passed &= r.passed
            report["checks"].append({"name": f"criterion {r.number}", "passed": r.passed, "summary": r.summary})
    report["passed"] = bool(passed)
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2, default=_json_default) + "\n")
    return EXIT_OK if passed else EXIT_VALIDATION


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# ---------------------------------------------------------------------------
# study and sensitivity
# ---------------------------------------------------------------------------

def read_design(path) -> dict:
    """Study design: ``{"cells": [{"scenario": ..., "n": ...}, ...], "replicates": R,
    "bootstrap": B, "m": m, "terms": [...]}``."""
    try:
        design = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read design file {path}: {exc}") from exc
    cells = design.get("cells")
    if not isinstance(cells, list) or not cells:
        raise InputError("design file needs a nonempty 'cells' list")
    for c in cells:
        if not isinstance(c, dict) or "scenario" not in c or "n" not in c:
            raise InputError("every cell needs 'scenario' and 'n'")
        if c["scenario"] not in PRESET_NAMES:
            raise InputError(f"unknown scenario {c['scenario']!r}; available: {', '.join(PRESET_NAMES)}")
    return design


STUDY_TABLES = {"bias": "bias", "coverage": "coverage", "power": "power", "se": "mean_se"}


def cmd_study(args) -> int:
    design = read_design(args.design)
    seed = resolve_seed(args.seed)
    workers = args.threads or default_workers()
    reps = args.replicates or int(design.get("replicates", 100))
    B = int(design.get("bootstrap", 0)) if args.bootstrap is None else args.bootstrap
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_sim_study(design["cells"], reps, seed, B=B, m=int(design.get("m", 1000)),
                            workers=workers, terms=design.get("terms"))
    write_csv(res.summary, out / "summary.csv")
    write_csv(res.replicates, out / "replicates.csv")
    outputs = ["summary.csv", "replicates.csv"]
    for name, col in STUDY_TABLES.items():
        wide = res.summary.pivot_table(index=["scenario", "n", "parameter"], columns="method", values=col,
                                       sort=False).reset_index()
        wide.columns.name = None
        if name == "se":
            emp = res.summary[res.summary.method == "sandwich"][["scenario", "n", "parameter", "emp_se"]]
            wide = wide.merge(emp, on=["scenario", "n", "parameter"])
        write_csv(wide, out / f"{name}.csv")
        outputs.append(f"{name}.csv")
    man = new_manifest("study", None, seed, workers, _args_dict(args))
    man.arguments["design"] = design
    man.outputs = outputs + ["manifest.json"]
    man.timing["seconds"] = round(time.perf_counter() - t0, 3)
    man.write(out / "manifest.json")
    print(f"study finished: {len(design['cells'])} cells x {reps} replicates; output in {out}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    spec = builtin_scenario(args.preset)
    if args.rho is not None:
        spec = spec.with_rho(args.rho)
    seed = resolve_seed(args.seed)
    workers = args.threads or default_workers()
    tab = sensitivity_m_run(spec, args.n, _csv_list(args.m_list, int), seed,
                            reference_m=args.reference_m, workers=workers)
    if args.out:
        write_csv(tab, args.out)
    else:
        sys.stdout.write(tab.to_csv(index=False, float_format="%.6g", lineterminator="\n"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _args_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "threads")}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msmsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    seed_help = f"root seed, an integer or 'random' (default {DEFAULT_SEED})"
    threads_help = f"worker processes (default ${THREADS_ENV} or 1); results do not depend on it"

    s = sub.add_parser("simulate", help="simulate a cohort")
    s.add_argument("--scenario", help="scenario JSON file")
    s.add_argument("--preset", help=f"built-in scenario: {', '.join(PRESET_NAMES)}, {CT_PRESET}")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--engine", choices=["matched", "known-cdf", "ctmsm"], default="matched")
    s.add_argument("--m", type=int, help="match-pool size")
    s.add_argument("--grid-m", type=int, default=10_000, help="population size per grid (known-cdf)")
    s.add_argument("--grids", help="grid sidecar CSV to load (known-cdf)")
    s.add_argument("--regime", help="fixed treatment regime: 'always', 'never' or K+1 comma-separated values")
    s.add_argument("--blind", action="store_true", help="drop unobserved baseline columns")
    s.add_argument("--seed", default=str(DEFAULT_SEED), help=seed_help)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--threads", type=int, help=threads_help)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit an MSM to person-period data")
    f.add_argument("--data", required=True)
    f.add_argument("--msm", default="x1,x2,a", help="comma-separated MSM terms, e.g. x1,x2,a,x1*a")
    f.add_argument("--link", choices=["logit", "cloglog"], default="logit")
    f.add_argument("--weights", choices=["none", "iptw"], default="iptw")
    f.add_argument("--visit-intercepts", choices=["per-visit", "shared"], default="per-visit")
    f.add_argument("--den-terms", help="denominator treatment-model terms (default X, observed B, L, a.lag1)")
    f.add_argument("--num-terms", help="numerator treatment-model terms (default X, a.lag1)")
    f.add_argument("--truncate", help="weight truncation percentiles, e.g. 1,99 (default off)")
    f.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates (0 = none, else >= 100)")
    f.add_argument("--scenario", help="scenario JSON giving covariate roles")
    f.add_argument("--preset", help="preset giving covariate roles")
    f.add_argument("--seed", default=str(DEFAULT_SEED), help=seed_help)
    f.add_argument("--out", help="output CSV (default stdout)")
    f.set_defaults(func=cmd_fit)

    v = sub.add_parser("validate", help="run invariant checks")
    v.add_argument("--preset", default="logit-medium")
    v.add_argument("--level", choices=["quick", "full"], default="quick")
    v.add_argument("--seed", default=str(DEFAULT_SEED), help=seed_help)
    v.add_argument("--json", help="write a machine-readable report here")
    v.add_argument("--threads", type=int, help=threads_help)
    v.set_defaults(func=cmd_validate)

    st = sub.add_parser("study", help="repeated-sampling study")
    st.add_argument("--design", required=True, help="design JSON file")
    st.add_argument("--replicates", type=int)
    st.add_argument("--bootstrap", type=int, help="override the design's bootstrap replicates")
    st.add_argument("--seed", default=str(DEFAULT_SEED), help=seed_help)
    st.add_argument("--out-dir", required=True)
    st.add_argument("--threads", type=int, help=threads_help)
    st.set_defaults(func=cmd_study)

    se = sub.add_parser("sensitivity", help="agreement of failure visits across pool sizes")
    se.add_argument("--preset", required=True)
    se.add_argument("--m-list", required=True, help="comma-separated pool sizes")
    se.add_argument("--n", type=int, required=True)
    se.add_argument("--reference-m", type=int)
    se.add_argument("--rho", type=float, help="override the copula correlation")
    se.add_argument("--seed", default=str(DEFAULT_SEED), help=seed_help)
    se.add_argument("--out")
    se.add_argument("--threads", type=int, help=threads_help)
    se.set_defaults(func=cmd_sensitivity)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, MsmSimError, OSError, ValueError) as exc:
        print(f"msmsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
