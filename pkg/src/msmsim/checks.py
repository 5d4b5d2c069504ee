"""Statistical checks that simulated data follow the requested MSM.

Each check returns a :class:`CheckResult` with the statistic, the threshold
it is compared with and a pass flag.  The checks are used by the ``validate``
command and by the acceptance suite.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import ctmsm, rng as rngmod
from .engine import STATUS_OK, Cohort
from .numeric import copula_conditional_failure_prob, copula_total_probability
from .scenario import ScenarioSpec, eval_g_array

CHECK_STREAM = 11
TOTAL_PROB_G = (0.036, 0.1, 0.25, 0.5, 0.9)
TOTAL_PROB_RHO = (0.0, -0.5, -0.9)


@dataclass
class CheckResult:
    """Outcome of one statistical check."""

    name: str
    passed: bool
    statistic: float
    threshold: float
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = bool(self.passed)
        return d

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: statistic={self.statistic:.6g} threshold={self.threshold:.6g}"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _x_dict(cohort: Cohort) -> dict:
    return {name: cohort.x[:, j] for j, name in enumerate(cohort.spec.x_names)}


def _alive_at(cohort: Cohort, k: int) -> np.ndarray:
    fv = cohort.fail_visit
    return (cohort.status == STATUS_OK) & ((fv == -1) | (fv >= k))


def hazard_g(cohort: Cohort, k: int, rows: np.ndarray | None = None) -> np.ndarray:
    """MSM failure probability in ``(k, k+1]`` for each individual's own ``x`` and treatment history."""
    rows = np.arange(len(cohort)) if rows is None else rows
    x = {name: v[rows] for name, v in _x_dict(cohort).items()}
    a = cohort.a[rows, k]
    a_lag = cohort.a[rows, k - 1] if k > 0 else np.zeros(rows.shape[0])
    return eval_g_array(cohort.spec.msm, x, a, a_lag, k)


# ---------------------------------------------------------------------------
# numerical identity
# ---------------------------------------------------------------------------

def check_copula_total_probability(gs: Sequence[float] = TOTAL_PROB_G,
                                   rhos: Sequence[float] = TOTAL_PROB_RHO, tol: float = 1e-6) -> CheckResult:
    """Integral of the conditional failure probability over ``u`` equals ``g``."""
    worst, where = 0.0, None
    for g in gs:
        for r in rhos:
            err = abs(copula_total_probability(g, r) - g)
            if err >= worst:
                worst, where = err, (g, r)
    return CheckResult("copula total probability", worst < tol, worst, tol,
                       {"worst_g": where[0], "worst_rho": where[1], "grid_points": len(gs) * len(rhos)})


# ---------------------------------------------------------------------------
# risk-quantile and copula checks
# ---------------------------------------------------------------------------

def check_pool_quantile_uniformity(cohort: Cohort, alpha: float = 0.01) -> CheckResult:
    """KS of the pooled survivors' risk quantiles at every recorded visit.

    Needs a cohort simulated with ``record_pool=True``.
    """
    pools = cohort.meta.get("pool_u") or {}
    if not pools:
        raise ValueError("cohort has no recorded pools (simulate with record_pool=True)")
    min_p, tests = 1.0, 0
    for i, ind in enumerate(cohort.ids):
        U = pools[int(ind)]
        last = cohort.K if cohort.fail_visit[i] < 0 else int(cohort.fail_visit[i])
        for k in range(min(last, U.shape[0] - 1) + 1):
            p = stats.kstest(U[k], "uniform").pvalue
            min_p, tests = min(min_p, p), tests + 1
    return CheckResult("pooled-survivor risk-quantile uniformity (min KS p)", min_p >= alpha, min_p, alpha,
                       {"tests": tests, "m": U.shape[1]})


def check_slot_uniformity(cohort: Cohort, alpha: float = 0.01) -> CheckResult:
    """KS of the sampled individuals' risk quantiles among survivors, per visit.

    Only meaningful for a fixed-regime (potential-outcome) cohort, where each
    sampled individual is exchangeable with its matches.  Bonferroni over
    visits.
    """
    level = alpha / (cohort.K + 1)
    pvals = []
    for k in range(cohort.K + 1):
        u = cohort.u_h[_alive_at(cohort, k), k]
        pvals.append(stats.kstest(u, "uniform").pvalue if u.size >= 20 else 1.0)
    min_p = float(min(pvals))
    return CheckResult("sampled-individual risk-quantile uniformity (min KS p)", min_p >= level, min_p, level,
                       {"pvalues": pvals})


def copula_pit(cohort: Cohort, claimed: ScenarioSpec, seed: int = 0) -> np.ndarray:
    """Randomised probability-integral transform of every failure decision.

    For each individual alive at visit ``k`` the copula gives the failure
    probability ``p`` from ``(g, rho_k, u_h)``; a failure maps to ``U p`` and
    a survival to ``p + U (1 - p)``.  The values are i.i.d. Uniform(0, 1)
    exactly when failures were generated with ``claimed``'s correlation.
    """
    rng = rngmod.substream(seed, CHECK_STREAM, 0)
    out = []
    for k in range(cohort.K + 1):
        rows = np.flatnonzero(_alive_at(cohort, k))
        if rows.size == 0:
            continue
        g = hazard_g(cohort, k, rows)
        p = copula_conditional_failure_prob(g, claimed.rho[k], cohort.u_h[rows, k])
        fail = cohort.fail_visit[rows] == k
        v = rng.random(rows.size)
        out.append(np.where(fail, v * p, p + v * (1.0 - p)))
    return np.concatenate(out) if out else np.zeros(0)


def check_copula_pit(cohort: Cohort, claimed: ScenarioSpec | None = None, alpha: float = 0.01,
                     seed: int = 0) -> CheckResult:
    """KS of :func:`copula_pit` against Uniform(0, 1).

    A cohort generated with the wrong sign of ``rho`` fails this check.
    """
    claimed = claimed or cohort.spec
    v = copula_pit(cohort, claimed, seed)
    res = stats.kstest(v, "uniform")
    return CheckResult("copula failure-decision uniformity (KS p)", res.pvalue >= alpha, float(res.pvalue),
                       alpha, {"ks": float(res.statistic), "rows": int(v.size)})


# ---------------------------------------------------------------------------
# MSM compatibility
# ---------------------------------------------------------------------------

def hazard_table(cohort: Cohort, strata: int = 4) -> list[dict]:
    """Observed versus MSM failures per visit and per quantile stratum of ``g``."""
    rows = []
    for k in range(cohort.K + 1):
        idx = np.flatnonzero(_alive_at(cohort, k))
        if idx.size == 0:
            continue
        g = hazard_g(cohort, k, idx)
        fail = (cohort.fail_visit[idx] == k).astype(float)
        if strata > 1 and np.unique(g).size > 1:
            cuts = np.quantile(g, np.linspace(0, 1, strata + 1)[1:-1])
            lab = np.searchsorted(cuts, g, side="right")
        else:
            lab = np.zeros(idx.size, dtype=int)
        for s in np.unique(lab):
            sel = lab == s
            e, var = g[sel].sum(), (g[sel] * (1 - g[sel])).sum()
            o = fail[sel].sum()
            rows.append({"k": k, "stratum": int(s), "at_risk": int(sel.sum()), "observed": o, "expected": e,
                         "z": (o - e) / math.sqrt(var) if var > 0 else 0.0})
    return rows


def check_hazard_match(cohort: Cohort, strata: int = 4, z_max: float = 3.0) -> CheckResult:
    """Empirical interventional hazard versus the MSM, within ``z_max`` binomial SEs everywhere."""
    tab = hazard_table(cohort, strata)
    worst = max(abs(r["z"]) for r in tab)
    return CheckResult("interventional hazard matches the MSM (max |z|)", worst <= z_max, worst, z_max,
                       {"cells": len(tab), "over": int(sum(abs(r["z"]) > z_max for r in tab)),
                        "table": tab})


def within_visit_pit(cohort: Cohort) -> np.ndarray:
    """``(1 - (1-g)^(T-k)) / g`` for every failure, Uniform(0, 1) under the within-visit law."""
    out = []
    for k in range(cohort.K + 1):
        rows = np.flatnonzero((cohort.fail_visit == k) & (cohort.status == STATUS_OK))
        if rows.size == 0:
            continue
        g = hazard_g(cohort, k, rows)
        s = cohort.failure_time[rows] - k
        out.append(-np.expm1(s * np.log1p(-g)) / g)
    return np.concatenate(out) if out else np.zeros(0)


def check_within_visit_law(cohort: Cohort, alpha: float = 0.01, min_failures: int = 2000) -> CheckResult:
    """KS of failure times within their visit against the truncated exponential law."""
    v = within_visit_pit(cohort)
    inside = bool(np.all((v > 0) & (v <= 1)))
    p = float(stats.kstest(v, "uniform").pvalue) if v.size else 0.0
    return CheckResult("within-visit failure-time law (KS p)", inside and p >= alpha and v.size >= min_failures,
                       p, alpha, {"failures": int(v.size), "all_inside_interval": inside})


# ---------------------------------------------------------------------------
# continuous-time checks
# ---------------------------------------------------------------------------

def ct_pit(spec: ctmsm.CtScenarioSpec, records: Sequence[ctmsm.CtRecord], seed: int = 0) -> np.ndarray:
    """``F(T)`` from each record's own treatment path; censored records are randomised above ``F(tau)``."""
    rng = rngmod.substream(seed, CHECK_STREAM, 1)
    out = np.empty(len(records))
    v = rng.random(len(records))
    for i, r in enumerate(records):
        if r.event:
            out[i] = 1.0 - ctmsm.interventional_survival(spec, r.x, r.a_path, r.time)[0]
        else:
            f_tau = 1.0 - ctmsm.interventional_survival(spec, r.x, r.a_path, spec.tau)[0]
            out[i] = f_tau + v[i] * (1.0 - f_tau)
    return out


def check_ct_rho0(n: int = 10_000, m: int = 50, seed: int = 0, alpha: float = 0.01) -> CheckResult:
    """With ``rho = 0`` the matched algorithm reduces to direct inversion: KS of ``F(T)``."""
    spec = ctmsm.worked_example(rho=0.0, m=m)
    recs = ctmsm.simulate_ct_cohort(spec, n, seed)
    res = stats.kstest(ct_pit(spec, recs, seed), "uniform")
    return CheckResult("continuous time, rho = 0 reduces to inversion (KS p)", res.pvalue >= alpha,
                       float(res.pvalue), alpha, {"n": n, "events": int(sum(r.event for r in recs))})


def check_ct_poisson(n: int = 10_000, rate: float = 0.2, tau: float = 10.0, seed: int = 0,
                     z_max: float = 3.0) -> CheckResult:
    """Confounder change counts with constant intensity are Poisson(rate * tau)."""
    spec = ctmsm.worked_example(tau=tau, alpha_a=lambda x, b, a, l: np.zeros(np.shape(l)),
                                alpha_l=lambda x, b, a, l: np.full(np.shape(l), rate))
    rng = rngmod.substream(seed, CHECK_STREAM, 2)
    counts = np.empty(n)
    for i in range(n):
        b = spec.sample_b(np.zeros(0), 1, rng)[0]
        _, l_path = ctmsm.sample_event_paths(spec, np.zeros(0), b, rng)
        counts[i] = np.count_nonzero(l_path.times > 0)
    mean = rate * tau
    z = (counts.mean() - mean) / math.sqrt(mean / n)
    return CheckResult("continuous time, confounder change count is Poisson (|z| of mean)", abs(z) <= z_max,
                       abs(z), z_max, {"mean": float(counts.mean()), "var": float(counts.var(ddof=1)),
                                       "expected": mean})


def check_ct_survival(n: int = 2000, m: int = 100, rho: float = -0.5, seed: int = 0,
                      z_max: float = 3.0) -> CheckResult:
    """Always-treated interventional survival matches ``exp(-hazard t)`` at ``tau/4, tau/2, tau``."""
    spec = ctmsm.worked_example(rho=rho, m=m)
    regime = ctmsm.PiecewiseConstPath.constant(1.0, spec.tau)
    recs = ctmsm.simulate_ct_cohort(spec, n, seed, regime=regime)
    times = np.array([r.time if r.event else np.inf for r in recs])
    zs = {}
    for t in (spec.tau / 4, spec.tau / 2, spec.tau):
        s_true = float(ctmsm.interventional_survival(spec, np.zeros(0), regime, t)[0])
        s_hat = float(np.mean(times > t))
        zs[t] = (s_hat - s_true) / math.sqrt(s_true * (1 - s_true) / n)
    worst = max(abs(z) for z in zs.values())
    return CheckResult("continuous time, interventional survival band (max |z|)", worst <= z_max, worst, z_max,
                       {"z": {str(k): v for k, v in zs.items()}, "n": n, "m": m})
