"""Acceptance suite: ten end-to-end criteria with pinned sizes and tolerances.

Each ``criterion_<i>()`` returns a :class:`CriterionResult`; ``run_all``
runs them in order.  Sizes are the desk-scale ones (``n = 10^5`` refits,
``5 * 10^4`` potential-outcome arms, a 200-replicate study), so the full
suite takes tens of minutes on one core.
"""

from __future__ import annotations

import functools
import io as _io
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import checks
from .engine import default_workers, sensitivity_m_run, simulate_cohort, simulate_potential_arm
from .estimation import expand_person_period
from .io import person_period_frame, write_csv
from .scenario import PoolConfig, builtin_scenario
from .studies import run_msm_validation, run_sim_study

SEED = 20_240_917
DESK_POOL = PoolConfig(m=1000, restart_fraction=0.10, restart_m=20_000, max_restarts=5)
HAZARD_PRESET = "cox-high-high"


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} [{tag}] {self.title}: {self.summary} ({self.seconds:.0f} s)"


def _timed(number: int, title: str):
    def wrap(fn: Callable[..., tuple]):
        @functools.wraps(fn)
        def run(workers: int | None = None) -> CriterionResult:
            t0 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                passed, summary, detail = fn(workers or default_workers())
            return CriterionResult(number, title, bool(passed), summary, time.perf_counter() - t0, detail)
        return run
    return wrap


def _within(value: float, target: float, tol: float) -> bool:
    return abs(value - target) <= tol


@functools.lru_cache(maxsize=None)
def _arm(regime_value: int, n: int, workers: int):
    spec = builtin_scenario(HAZARD_PRESET).with_pool(**DESK_POOL.to_dict())
    return simulate_potential_arm(spec, [float(regime_value)] * (spec.K + 1), n, SEED + 3, workers=workers)


@_timed(1, "logit-medium refit at n = 1e5, m = 1000")
def criterion_1(workers: int):
    t0 = time.perf_counter()
    rep = run_msm_validation("logit-medium", 100_000, m=1000, seed=SEED + 1, restart_m=20_000, workers=workers)
    elapsed = time.perf_counter() - t0
    est = {p: rep.estimate("iptw", p) for p in ("x1", "x2", "a")}
    naive_a = rep.estimate("naive", "a")
    ok = (_within(est["x1"], 0.5, 0.05) and _within(est["x2"], 0.5, 0.05) and _within(est["a"], -1.0, 0.05)
          and 0.10 <= naive_a <= 0.40 and elapsed < 600)
    summary = (f"IPTW (x1, x2, a) = ({est['x1']:.3f}, {est['x2']:.3f}, {est['a']:.3f}) within 0.05 of "
               f"(0.5, 0.5, -1); naive a = {naive_a:.3f} in [0.10, 0.40]; {elapsed:.0f} s < 600 s")
    return ok, summary, {"table": rep.table.to_dict("records"), "elapsed": elapsed}


@_timed(2, "logit-low and logit-high refits at n = 1e5")
def criterion_2(workers: int):
    low = run_msm_validation("logit-low", 100_000, m=1000, seed=SEED + 2, restart_m=20_000, workers=workers)
    high = run_msm_validation("logit-high", 100_000, m=1000, seed=SEED + 2, restart_m=20_000, workers=workers)
    a_low, a_high = low.estimate("iptw", "a"), high.estimate("iptw", "a")
    ok = _within(a_low, -1.0, 0.08) and _within(a_high, -1.0, 0.05)
    summary = f"IPTW a: low {a_low:.3f} (tol 0.08), high {a_high:.3f} (tol 0.05)"
    return ok, summary, {"low": low.table.to_dict("records"), "high": high.table.to_dict("records")}


@_timed(3, "interventional hazards match the MSM (cox-high-high, always/never treat, n = 5e4)")
def criterion_3(workers: int):
    res = {name: checks.check_hazard_match(_arm(v, 50_000, workers), strata=4, z_max=3.0)
           for name, v in (("always", 1), ("never", 0))}
    ok = all(r.passed for r in res.values())
    summary = "; ".join(f"{k}: max |z| = {r.statistic:.2f} over {r.detail['cells']} cells" for k, r in res.items())
    return ok, summary, {k: r.to_dict() for k, r in res.items()}


@_timed(4, "copula law of total probability")
def criterion_4(workers: int):
    r = checks.check_copula_total_probability()
    return r.passed, f"max |integral - g| = {r.statistic:.2e} < 1e-6 over {r.detail['grid_points']} points", r.to_dict()


@_timed(5, "risk-quantile uniformity (logit-medium, m = 5000)")
def criterion_5(workers: int):
    spec = builtin_scenario("logit-medium").with_pool(m=5000, restart_m=100_000)
    pooled = simulate_cohort(spec, 20, "matched", SEED + 5, workers=workers, record_pool=True)
    r_pool = checks.check_pool_quantile_uniformity(pooled, alpha=0.01)
    arm = simulate_potential_arm(spec, [0.0] * (spec.K + 1), 5000, SEED + 5, workers=workers)
    r_slot = checks.check_slot_uniformity(arm, alpha=0.01)
    ok = r_pool.passed and r_slot.passed
    summary = (f"pooled survivors: min KS p = {r_pool.statistic:.3f} over {r_pool.detail['tests']} visit pools; "
               f"sampled individuals (never-treat arm, n = 5000): min KS p = {r_slot.statistic:.3f} "
               f">= {r_slot.threshold:.4f}")
    return ok, summary, {"pool": r_pool.to_dict(), "slot": r_slot.to_dict()}


@_timed(6, "within-visit failure-time law (cox-high-high never-treat arm)")
def criterion_6(workers: int):
    r = checks.check_within_visit_law(_arm(0, 50_000, workers), alpha=0.01, min_failures=2000)
    return r.passed, f"KS p = {r.statistic:.3f} >= 0.01 with {r.detail['failures']} failures", r.to_dict()


@_timed(7, "study cell cox-high-high, n = 500, 200 replicates, B = 500")
def criterion_7(workers: int):
    t0 = time.perf_counter()
    res = run_sim_study([("cox-high-high", 500)], 200, SEED + 7, B=500, m=1000, restart_m=20_000,
                        workers=workers)
    elapsed = time.perf_counter() - t0
    s = res.summary.set_index(["method", "parameter"])
    bias = float(s.loc[("sandwich", "a"), "bias"])
    cov_s = float(s.loc[("sandwich", "a"), "coverage"])
    cov_b = float(s.loc[("bootstrap", "a"), "coverage"])
    ok = (abs(bias) <= 0.15 and 0.87 <= cov_s <= 0.97 and 0.87 <= cov_b <= 0.97 and cov_b >= cov_s - 0.03
          and elapsed < 7200)
    summary = (f"IPTW bias(a) = {bias:.3f} (|.| <= 0.15); coverage(a) sandwich {cov_s:.3f}, bootstrap "
               f"{cov_b:.3f} (both in [0.87, 0.97], boot >= sand - 0.03); {elapsed:.0f} s")
    return ok, summary, {"summary": res.summary.to_dict("records"), "elapsed": elapsed}


@_timed(8, "pool-size sensitivity ordering (logit-high, n = 1e4)")
def criterion_8(workers: int):
    spec = builtin_scenario("logit-high")
    t9 = sensitivity_m_run(spec, 10_000, [10, 500, 5000], SEED + 8, reference_m=5000, workers=workers)
    t5 = sensitivity_m_run(spec.with_rho(-0.5), 10_000, [500], SEED + 8, reference_m=5000, workers=workers)
    ag = dict(zip(t9["m"], t9["agreement"]))
    a05 = float(t5["agreement"].iloc[0])
    ok = ag[10] < ag[500] < ag[5000] and a05 > ag[500]
    summary = (f"agreement % at rho -0.9: m=10 {ag[10]:.1f} < m=500 {ag[500]:.1f} < m=5000 {ag[5000]:.1f}; "
               f"m=500 at rho -0.5 {a05:.1f} > {ag[500]:.1f}")
    return ok, summary, {"rho_-0.9": t9.to_dict("records"), "rho_-0.5": t5.to_dict("records")}


@_timed(9, "continuous-time property suite")
def criterion_9(workers: int):
    rs = [checks.check_ct_rho0(n=10_000, m=50, seed=SEED + 9),
          checks.check_ct_poisson(n=10_000, seed=SEED + 9),
          checks.check_ct_survival(n=4000, m=100, seed=SEED + 9)]
    ok = all(r.passed for r in rs)
    summary = (f"rho=0 KS p = {rs[0].statistic:.3f}; Poisson |z| = {rs[1].statistic:.2f}; "
               f"survival band max |z| = {rs[2].statistic:.2f}")
    return ok, summary, {r.name: r.to_dict() for r in rs}


def _cohort_bytes(c) -> bytes:
    buf = _io.StringIO()
    table = expand_person_period(c)
    person_period_frame(table).to_csv(buf, index=False, float_format="%.17g")
    arrays = [c.ids, c.x, c.b, c.l, c.a, c.u_h, c.fail_visit, c.failure_time, c.censor_time, c.restarts,
              c.status]
    return buf.getvalue().encode() + b"".join(np.ascontiguousarray(a).tobytes() for a in arrays)


@_timed(10, "byte-identical outputs for 1 and 8 workers")
def criterion_10(workers: int):
    spec = builtin_scenario("cox-high-high").with_pool(**DESK_POOL.to_dict())
    one = _cohort_bytes(simulate_cohort(spec, 400, "matched", SEED + 10, workers=1))
    eight = _cohort_bytes(simulate_cohort(spec, 400, "matched", SEED + 10, workers=8))
    studies = []
    for w in (1, 8):
        res = run_sim_study([("cox-high-high", 200)], 8, SEED + 10, B=100, m=500, workers=w)
        buf = _io.StringIO()
        write_csv(res.summary, buf)
        studies.append(buf.getvalue())
    ok = one == eight and studies[0] == studies[1]
    summary = (f"cohort (n = 400) identical: {one == eight}; study table (8 replicates, B = 100) identical: "
               f"{studies[0] == studies[1]}")
    return ok, summary, {}


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 11)}


def run_all(workers: int | None = None, numbers=None, echo: Callable[[str], None] | None = print):
    """Run the selected criteria (default all) and return their results."""
    out = []
    for i in (numbers or sorted(CRITERIA)):
        r = CRITERIA[i](workers)
        if echo:
            echo(r.line())
        out.append(r)
    return out
