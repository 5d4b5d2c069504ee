"""Study drivers: MSM refit verification and repeated-sampling studies.

``run_msm_validation`` simulates one large cohort, fits a working MSM that
adds visit interactions (true value 0) to the scenario's own terms, and
reports naive and IPTW estimates against the truth.  ``run_sim_study``
repeats simulate / fit / interval construction over many replicates and
summarises bias, standard errors, coverage and rejection rates.
"""

from __future__ import annotations

import math
import multiprocessing
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from . import rng as rngmod
from .engine import Cohort, default_workers, simulate_cohort
from .errors import MsmSimError, PlanningError, UnreliableIntervalError
from .estimation import MsmPipeline, bootstrap_ci, expand_person_period
from .scenario import PoolConfig, ScenarioSpec, builtin_scenario, coef_at, split_term

STUDY_COLUMNS = ["scenario", "n", "method", "parameter", "bias", "emp_se", "mean_se", "coverage",
                 "power", "mc_se"]
Z975 = 1.959963984540054


def _as_spec(scenario) -> ScenarioSpec:
    return builtin_scenario(scenario) if isinstance(scenario, str) else scenario


def fit_link(spec: ScenarioSpec) -> str:
    """Pooled-regression link matching the scenario's MSM."""
    if spec.msm.link == "additive":
        raise PlanningError("the additive-hazard MSM has no pooled binary-regression counterpart here")
    return spec.msm.link


def msm_truth(spec: ScenarioSpec, terms: Sequence[str]) -> dict:
    """True values of the per-visit intercepts and of ``terms``.

    Terms absent from the scenario's MSM are 0.  Slopes must be shared
    across visits.
    """
    truth = {}
    for k in range(spec.K + 1):
        base = coef_at(spec.msm.baseline, k)
        truth[f"visit{k}"] = math.log(base) if spec.msm.link == "cloglog" else base
    own = {_canonical(e): c for e, c in spec.msm.terms}
    for t in terms:
        c = own.get(_canonical(t), 0.0)
        if isinstance(c, tuple):
            raise PlanningError(f"term {t!r} has per-visit coefficients; no single true value")
        truth[t] = float(c)
    return truth


def _canonical(expr: str) -> tuple:
    return tuple(sorted(split_term(expr.replace(" ", ""))))


def working_terms_visit(spec: ScenarioSpec) -> list[str]:
    """MSM terms plus their interactions with the visit index."""
    own = [e for e, _ in spec.msm.terms]
    return own + [f"{e}*k" for e in own]


def working_terms_modifier(spec: ScenarioSpec) -> list[str]:
    """MSM terms plus any missing ``x*a`` interaction for each MSM covariate."""
    own = [e for e, _ in spec.msm.terms]
    have = {_canonical(e) for e in own}
    extra = [f"{x}*a" for x in spec.x_names if _canonical(f"{x}*a") not in have]
    return own + extra


# ---------------------------------------------------------------------------
# MSM refit verification
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    """Naive and IPTW refits of a working MSM on one simulated cohort."""

    scenario: str
    n: int
    table: pd.DataFrame
    failure_fraction: float
    seed: int
    meta: dict = field(default_factory=dict)

    def estimate(self, method: str, parameter: str) -> float:
        row = self.table.set_index("parameter").loc[parameter]
        return float(row[f"{method}_est"])


def validation_report(cohort: Cohort, terms: Sequence[str] | None = None) -> ValidationReport:
    """Fit the working MSM naively and with IPTW to an existing cohort."""
    spec = cohort.spec
    terms = list(terms) if terms is not None else working_terms_visit(spec)
    link = fit_link(spec)
    table = expand_person_period(cohort, terms)
    naive = MsmPipeline(table, terms, link, "none").run()
    iptw = MsmPipeline(table, terms, link, "iptw").run()
    truth = msm_truth(spec, terms)
    rows = []
    for j, name in enumerate(naive.names):
        t = truth.get(name, np.nan)
        rows.append({"parameter": name, "true": t,
                     "naive_est": naive.coef[j], "naive_se": naive.se("model")[j],
                     "iptw_est": iptw.coef[j], "iptw_se": iptw.se("sandwich")[j],
                     "naive_bias": naive.coef[j] - t, "iptw_bias": iptw.coef[j] - t})
    frame = pd.DataFrame(rows)
    meta = {"rows": len(table), "max_weight": float(iptw.weights.max())}
    return ValidationReport(spec.name, len(cohort), frame, float(np.mean(cohort.event)), cohort.seed, meta)


def run_msm_validation(scenario, n: int, m: int = 1000, seed: int | None = None, *,
                       restart_m: int | None = None, workers: int | None = None,
                       terms: Sequence[str] | None = None) -> ValidationReport:
    """Simulate ``n`` individuals and verify the MSM by refitting it.

    Parameters
    ----------
    scenario : str or ScenarioSpec
        Preset name (for example ``"logit-medium"``) or a scenario.
    n : int
    m : int
        Match-pool size.
    restart_m : int, optional
        Pool size after a restart (default ``20 m``).
    terms : sequence of str, optional
        Working-MSM terms (default: the MSM's terms plus their visit
        interactions).
    """
    spec = _as_spec(scenario)
    pool = PoolConfig(m=m, restart_fraction=spec.pool.restart_fraction,
                      restart_m=restart_m or 20 * m, max_restarts=spec.pool.max_restarts)
    cohort = simulate_cohort(spec, n, "matched", seed, workers=workers, pool=pool)
    report = validation_report(cohort, terms)
    report.meta["m"] = m
    return report


# ---------------------------------------------------------------------------
# repeated-sampling study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyCell:
    scenario: str
    n: int


@dataclass
class _StudyJob:
    spec: ScenarioSpec
    n: int
    pool: PoolConfig
    terms: list
    link: str
    B: int
    seed: int


_JOB: _StudyJob | None = None


def _one_replicate(job: _StudyJob, rep_seed: int) -> dict:
    """Estimates, standard errors and intervals of one replicate (NaN on failure)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cohort = simulate_cohort(job.spec, job.n, "matched", rep_seed, workers=1, pool=job.pool)
        table = expand_person_period(cohort, job.terms)
        out = {"failed": False, "boot_failed": 0, "boot_unreliable": False,
               "events": float(np.mean(cohort.event))}
        try:
            naive = MsmPipeline(table, job.terms, job.link, "none").run()
            pipe = MsmPipeline(table, job.terms, job.link, "iptw")
            iptw = pipe.run()
        except MsmSimError:
            out["failed"] = True
            return out
        sl = slice(len(naive.names) - len(job.terms), None)
        out["naive_est"] = naive.coef[sl]
        out["naive_se"] = naive.se("model")[sl]
        out["iptw_est"] = iptw.coef[sl]
        out["sand_se"] = iptw.se("sandwich")[sl]
        if job.B > 0:
            try:
                bs = bootstrap_ci(pipe, job.B, rngmod.child_seed(rep_seed, rngmod.BOOT), full_fit=iptw)
                out["boot_lo"], out["boot_hi"], out["boot_se"] = bs.lower[sl], bs.upper[sl], bs.se[sl]
                out["boot_failed"] = bs.n_failed
            except UnreliableIntervalError:
                out["boot_unreliable"] = True
    return out


def _job_worker(rep_seed: int) -> dict:
    assert _JOB is not None
    return _one_replicate(_JOB, rep_seed)


def _run_replicates(job: _StudyJob, seeds: list[int], workers: int) -> list[dict]:
    global _JOB
    if workers <= 1 or len(seeds) < 2:
        return [_one_replicate(job, s) for s in seeds]
    with warnings.catch_warnings():      # compile kernels before forking
        warnings.simplefilter("ignore")
        simulate_cohort(job.spec, 1, "matched", seeds[0], workers=1, pool=job.pool)
    _JOB = job
    try:
        mp = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=mp) as ex:
            return list(ex.map(_job_worker, seeds, chunksize=1))
    finally:
        _JOB = None


def summarise_replicates(results: list[dict], truth: dict, terms: Sequence[str], scenario: str,
                         n: int) -> pd.DataFrame:
    """Bias, empirical SE, mean estimated SE, coverage and rejection rate per method and parameter."""
    ok = [r for r in results if not r["failed"]]
    R = len(ok)
    rows = []
    true = np.array([truth[t] for t in terms])
    methods = [("naive", "naive_est", "naive_se", None), ("sandwich", "iptw_est", "sand_se", None),
               ("bootstrap", "iptw_est", "boot_se", ("boot_lo", "boot_hi"))]
    for method, est_key, se_key, ci_keys in methods:
        use = [r for r in ok if se_key in r]
        if not use:
            continue
        est = np.array([r[est_key] for r in use])
        se = np.array([r[se_key] for r in use])
        if ci_keys is None:
            lo, hi = est - Z975 * se, est + Z975 * se
        else:
            lo = np.array([r[ci_keys[0]] for r in use])
            hi = np.array([r[ci_keys[1]] for r in use])
        cover = (lo <= true) & (true <= hi)
        reject = (lo > 0) | (hi < 0)
        r_used = est.shape[0]
        emp = est.std(axis=0, ddof=1) if r_used > 1 else np.full(len(terms), np.nan)
        for j, t in enumerate(terms):
            cov_j = float(cover[:, j].mean())
            pow_j = float(reject[:, j].mean())
            rows.append({"scenario": scenario, "n": n, "method": method, "parameter": t,
                         "bias": float(est[:, j].mean() - true[j]), "emp_se": float(emp[j]),
                         "mean_se": float(se[:, j].mean()), "coverage": cov_j, "power": pow_j,
                         "mc_se": float(emp[j] / math.sqrt(r_used)) if r_used > 1 else np.nan,
                         "mc_se_coverage": math.sqrt(cov_j * (1 - cov_j) / r_used),
                         "mc_se_power": math.sqrt(pow_j * (1 - pow_j) / r_used),
                         "replicates": r_used, "true": float(true[j])})
    out = pd.DataFrame(rows)
    out.attrs["failed_replicates"] = len(results) - R
    return out


@dataclass
class StudyResult:
    """Summary table plus per-replicate diagnostics."""

    summary: pd.DataFrame
    replicates: pd.DataFrame


def run_sim_study(cells: Sequence[StudyCell | tuple | dict], replicates: int, seed: int, *, B: int = 0,
                  m: int = 1000, restart_m: int | None = None, workers: int | None = None,
                  terms: Sequence[str] | None = None) -> StudyResult:
    """Repeated-sampling study over a grid of ``(scenario, n)`` cells.

    For every replicate: simulate a cohort, fit the working MSM naively
    (model-based intervals) and with IPTW (sandwich intervals and, when
    ``B > 0``, percentile bootstrap intervals).  Replicate ``r`` of cell
    ``c`` uses root seed ``child_seed(seed, REPLICATE, c, r)``, so results do
    not depend on ``workers``.

    Returns
    -------
    StudyResult
        ``summary`` has columns ``scenario, n, method, parameter, bias,
        emp_se, mean_se, coverage, power, mc_se`` followed by diagnostic
        columns.  ``power`` is the fraction of intervals excluding zero.
    """
    workers = workers or default_workers()
    summaries, reps = [], []
    for c_idx, cell in enumerate(cells):
        if isinstance(cell, dict):
            cell = StudyCell(cell["scenario"], int(cell["n"]))
        elif isinstance(cell, tuple):
            cell = StudyCell(*cell)
        spec = _as_spec(cell.scenario)
        name = cell.scenario if isinstance(cell.scenario, str) else spec.name
        cell_terms = list(terms) if terms is not None else working_terms_modifier(spec)
        pool = PoolConfig(m=m, restart_fraction=spec.pool.restart_fraction,
                          restart_m=restart_m or 20 * m, max_restarts=spec.pool.max_restarts)
        job = _StudyJob(spec, cell.n, pool, cell_terms, fit_link(spec), B, seed)
        seeds = [rngmod.child_seed(seed, rngmod.REPLICATE, c_idx, r) for r in range(replicates)]
        results = _run_replicates(job, seeds, workers)
        truth = msm_truth(spec, cell_terms)
        summaries.append(summarise_replicates(results, truth, cell_terms, name, cell.n))
        for r, res in enumerate(results):
            row = {"scenario": name, "n": cell.n, "replicate": r, "seed": seeds[r],
                   "failed": res["failed"], "events": res.get("events", np.nan),
                   "boot_failed": res["boot_failed"], "boot_unreliable": res["boot_unreliable"]}
            for key in ("naive_est", "iptw_est", "sand_se", "boot_lo", "boot_hi"):
                if key in res:
                    for t, v in zip(cell_terms, res[key]):
                        row[f"{key}[{t}]"] = v
            reps.append(row)
    return StudyResult(pd.concat(summaries, ignore_index=True), pd.DataFrame(reps))
