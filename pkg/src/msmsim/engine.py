"""Simulation engines for discrete-visit scenarios.

Two engines generate individuals whose interventional hazards follow the MSM
of the scenario exactly:

``matched``
    The risk-score CDF among interventional survivors is estimated on the fly
    from a pool of ``m - 1`` synthetic matches that share the sampled
    individual's ``X`` and treatment path.  Failed matches are replaced by
    copies of survivors, and the pool is rebuilt at a larger size when too
    few distinct lineages remain.
``known-cdf``
    The CDF is supplied by the caller, either as estimated quantile grids
    (:mod:`msmsim.cdf`) or as an analytic function.

Both engines consume the same per-individual random streams for the sampled
individual (see :mod:`msmsim.rng`), so they produce identical trajectories
whenever the copula correlation is zero.
"""

from __future__ import annotations

import math
import multiprocessing
import os
import types
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterator, Sequence

import numba
import numpy as np
import pandas as pd

from . import _kernels, rng as rngmod
from ._kernels import (BAD_HAZARD, BAD_SCORE, EXHAUSTED, I_BAD_VISIT, I_FAIL_VISIT, I_LEN,
                       I_NEED_N, I_NEED_U, I_RESTARTS, I_STATUS, NEED_MORE, F_LEN, F_TIME, F_UY)
from .errors import (DomainError, InvalidHazardError, MsmSimError, PlanningError,
                     PoolExhaustedError, ScenarioError)
from .numeric import conditional_failure_from_table, odds_ratio_table_option2
from .program import Program, compile_scenario, slot_buffer_size
from .scenario import PoolConfig, ScenarioSpec

ENGINES = ("matched", "known-cdf")
THREADS_ENV = "MSMSIM_THREADS"

STATUS_OK = 0
STATUS_EXHAUSTED = 1

_HALF_EPS = np.finfo(float).eps / 2.0


# ---------------------------------------------------------------------------
# risk-score hooks
# ---------------------------------------------------------------------------

_HOOKS: dict[str, Callable] = {}
_HOOKED_KERNELS: dict[str, types.SimpleNamespace] = {}
_KERNEL_NAMES = ("_pass", "run_matched", "run_pool_cdf", "slot_visit")


def register_risk_score_hook(name: str, fn: Callable) -> None:
    """Register a custom risk score under ``name``.

    Parameters
    ----------
    name : str
        Identifier referenced by ``RiskScoreSpec.hook``.
    fn : callable
        A numba-compilable function ``fn(linear_score, state) -> scores``.
        ``linear_score`` has shape ``(n,)`` and holds the scenario's linear
        risk score; ``state`` has shape ``(P, n)`` with rows laid out as in
        :func:`msmsim.program.state_columns`.  It must return ``n`` finite
        scores.  Plain Python functions are compiled with ``numba.njit``.
    """
    if not isinstance(fn, numba.core.registry.CPUDispatcher):
        fn = numba.njit(fn)
    _HOOKS[name] = fn
    _HOOKED_KERNELS.pop(name, None)


def registered_hooks() -> list[str]:
    return sorted(_HOOKS)


def _build_hooked(name: str) -> types.SimpleNamespace:
    hook = _HOOKS[name]
    eval_lp = _kernels.eval_lp

    @numba.njit
    def score_members(prog, k, S, n, out):
        eval_lp(prog, prog.score_lp, k, S, n, out)
        res = hook(out[:n], S[:, :n])
        for j in range(n):
            out[j] = res[j]

    glb = dict(_kernels.__dict__)
    glb["score_members"] = score_members
    ns = types.SimpleNamespace()
    for kname in _KERNEL_NAMES:
        py = getattr(_kernels, kname).py_func
        fn = types.FunctionType(py.__code__, glb, kname, py.__defaults__, py.__closure__)
        glb[kname] = numba.njit(fn)
        setattr(ns, kname, glb[kname])
    return ns


def kernels_for(spec: ScenarioSpec):
    """The compiled kernel set for the scenario's risk score."""
    hook = spec.risk_score.hook
    if hook is None:
        return _kernels
    if hook not in _HOOKS:
        raise ScenarioError(f"risk_score.hook {hook!r} is not registered "
                            f"(known: {registered_hooks()})")
    if hook not in _HOOKED_KERNELS:
        _HOOKED_KERNELS[hook] = _build_hooked(hook)
    return _HOOKED_KERNELS[hook]


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass
class IndividualRecord:
    """One simulated trajectory.

    Attributes
    ----------
    id : int
    x, b : ndarray
        Baseline values.
    l : ndarray, shape (K+1, n_l)
        Confounders; NaN at visits after failure.
    a : ndarray, shape (K+1,)
        Treatments; NaN at visits after failure.
    u_h : ndarray, shape (K+1,)
        Risk quantile of the individual at each visit reached.
    fail_visit : int
        Visit ``k`` such that failure occurred in ``(k, k+1]``; -1 if the
        individual survived past visit ``K``.
    failure_time : float
        ``k + 1`` in discrete time, the exact time in ``(k, k+1]`` in
        continuous time, ``inf`` without failure.
    censor_time : float
        ``min(C, K + 1)`` with ``C`` the random censoring time.
    restarts : int
        Number of pool restarts used (matched engine).
    status : int
        0 normally, 1 when the match pool died out (only with
        ``on_exhausted="record"``).
    """

    id: int
    x: np.ndarray
    b: np.ndarray
    l: np.ndarray
    a: np.ndarray
    u_h: np.ndarray
    fail_visit: int
    failure_time: float
    censor_time: float
    restarts: int = 0
    status: int = STATUS_OK

    @property
    def K(self) -> int:
        return self.a.shape[0] - 1

    @property
    def y(self) -> np.ndarray:
        """``Y_k = I(T >= k)`` for ``k = 0..K+1``."""
        kk = np.arange(self.K + 2)
        if self.fail_visit < 0:
            return np.ones(self.K + 2, dtype=np.int8)
        return (kk <= self.fail_visit).astype(np.int8)

    @property
    def observed_time(self) -> float:
        return min(self.failure_time, self.censor_time)

    @property
    def event(self) -> bool:
        return bool(self.failure_time <= self.censor_time)


@dataclass
class Cohort:
    """Column-oriented collection of simulated individuals, ordered by id."""

    spec: ScenarioSpec
    ids: np.ndarray
    x: np.ndarray            # (n, n_x)
    b: np.ndarray            # (n, n_b)
    l: np.ndarray            # (n, K+1, n_l)
    a: np.ndarray            # (n, K+1)
    u_h: np.ndarray          # (n, K+1)
    fail_visit: np.ndarray   # (n,)
    failure_time: np.ndarray
    censor_time: np.ndarray
    restarts: np.ndarray
    status: np.ndarray
    seed: int = 0
    engine: str = "matched"
    regime: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def K(self) -> int:
        return self.spec.K

    def record(self, i: int) -> IndividualRecord:
        return IndividualRecord(
            id=int(self.ids[i]), x=self.x[i].copy(), b=self.b[i].copy(), l=self.l[i].copy(),
            a=self.a[i].copy(), u_h=self.u_h[i].copy(), fail_visit=int(self.fail_visit[i]),
            failure_time=float(self.failure_time[i]), censor_time=float(self.censor_time[i]),
            restarts=int(self.restarts[i]), status=int(self.status[i]))

    def __iter__(self) -> Iterator[IndividualRecord]:
        for i in range(len(self)):
            yield self.record(i)

    @property
    def observed_time(self) -> np.ndarray:
        return np.minimum(self.failure_time, self.censor_time)

    @property
    def event(self) -> np.ndarray:
        return self.failure_time <= self.censor_time

    def take(self, idx) -> "Cohort":
        """Sub-cohort (with repetition allowed); ids are kept."""
        idx = np.asarray(idx)
        return replace(self, ids=self.ids[idx], x=self.x[idx], b=self.b[idx], l=self.l[idx],
                       a=self.a[idx], u_h=self.u_h[idx], fail_visit=self.fail_visit[idx],
                       failure_time=self.failure_time[idx], censor_time=self.censor_time[idx],
                       restarts=self.restarts[idx], status=self.status[idx])

    def summary_frame(self) -> pd.DataFrame:
        """One row per individual: id, event time, event indicator, censor reason."""
        K = self.K
        obs = self.observed_time
        reason = np.where(self.event, "", np.where(self.censor_time >= K + 1, "administrative", "random"))
        reason = np.where(self.status == STATUS_EXHAUSTED, "pool_exhausted", reason)
        return pd.DataFrame({"id": self.ids, "event_time": obs, "event": self.event.astype(int),
                             "censor_reason": reason})


def concat_cohorts(parts: Sequence[Cohort]) -> Cohort:
    first = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts], axis=0)  # noqa: E731
    return replace(first, ids=cat("ids"), x=cat("x"), b=cat("b"), l=cat("l"), a=cat("a"),
                   u_h=cat("u_h"), fail_visit=cat("fail_visit"), failure_time=cat("failure_time"),
                   censor_time=cat("censor_time"), restarts=cat("restarts"), status=cat("status"))


# ---------------------------------------------------------------------------
# per-individual simulation
# ---------------------------------------------------------------------------

@dataclass
class _Context:
    spec: ScenarioSpec
    prog: Program
    kernels: Any
    engine: str
    seed: int
    pool: PoolConfig
    forced: bool
    regime: np.ndarray
    pool_tag: int = 0
    censor: bool = True
    on_exhausted: str = "raise"
    cdf: Any = None
    record_pool: bool = False


@dataclass
class _SlotDraws:
    slot_n: np.ndarray
    slot_u: np.ndarray
    trt_n: np.ndarray
    trt_u: np.ndarray
    lat_w: np.ndarray
    lat_e: np.ndarray


def _slot_draws(prog: Program, seed: int, ind: int) -> _SlotDraws:
    K = prog.K
    ns = slot_buffer_size(prog)
    cov = rngmod.substream(seed, ind, rngmod.COV)
    trt = rngmod.substream(seed, ind, rngmod.TRT)
    slot_n = cov.standard_normal(ns)
    slot_u = cov.random(ns)
    trt_u = trt.random(K + 1)
    trt_n = trt.standard_normal(K + 1)
    lat_w = rngmod.substream(seed, ind, rngmod.JITTER).random(K + 1)
    lat_e = rngmod.substream(seed, ind, rngmod.NOISE).standard_normal(K + 1)
    return _SlotDraws(slot_n, slot_u, trt_n, trt_u, lat_w, lat_e)


def _censor_time(spec: ScenarioSpec, seed: int, ind: int, censor: bool) -> float:
    admin = float(spec.K + 1)
    if not censor or spec.censoring_rate <= 0.0:
        return admin
    c = rngmod.substream(seed, ind, rngmod.CENSOR).exponential(1.0 / spec.censoring_rate)
    return min(float(c), admin)


def _pool_sizes(prog: Program, m: int) -> tuple[int, int]:
    per_n = prog.nb + (prog.K + 1) * (prog.nl + 1)
    per_u = prog.nb + (prog.K + 1) * (prog.nl + 3)
    return m * per_n, m * per_u


def _pool_buffers(seed: int, ind: int, tag: int, nn: int, nu: int):
    pn = rngmod.substream(seed, ind, rngmod.POOL, tag, 0).standard_normal(nn)
    pu = rngmod.substream(seed, ind, rngmod.POOL, tag, 1).random(nu)
    return pn, pu


def _raise_status(status: int, ind: int, visit: int, m: int):
    if status == BAD_HAZARD:
        raise InvalidHazardError(f"individual {ind}: additive hazard is not positive at visit {visit}")
    if status == BAD_SCORE:
        raise DomainError(f"individual {ind}: risk score is not finite (or not a valid category) "
                          f"at visit {visit}")
    if status == EXHAUSTED:
        raise PoolExhaustedError(
            f"individual {ind}: every match failed at visit {visit} with m = {m}; "
            "increase pool.m or enable restarts (pool.restart_fraction > 0)")
    raise MsmSimError(f"individual {ind}: kernel returned status {status}")  # pragma: no cover


def _matched_one(ctx: _Context, ind: int, out: dict, row: int) -> None:
    prog = ctx.prog
    K = prog.K
    d = _slot_draws(prog, ctx.seed, ind)
    pool = ctx.pool
    nn, nu = _pool_sizes(prog, pool.m)
    out_xb = np.zeros(prog.nx + prog.nb)
    out_l = np.empty((K + 1, prog.nl))
    out_a = np.empty(K + 1)
    out_uh = np.empty(K + 1)
    out_i = np.zeros(I_LEN, dtype=np.int64)
    out_f = np.zeros(F_LEN)
    U_rec = np.zeros((K + 1, pool.m)) if ctx.record_pool else np.zeros((0, 0))
    thr = pool.restart_threshold
    while True:
        pn, pu = _pool_buffers(ctx.seed, ind, ctx.pool_tag, nn, nu)
        ctx.kernels.run_matched(prog, pool.m, thr, pool.restart_m, pool.max_restarts, ctx.forced,
                                ctx.regime, d.slot_n, d.slot_u, d.trt_n, d.trt_u, d.lat_w, d.lat_e,
                                pn, pu, out_xb, out_l, out_a, out_uh, out_i, out_f, U_rec)
        if out_i[I_STATUS] != NEED_MORE:
            break
        if out_i[I_NEED_N] > nn:
            nn = max(int(out_i[I_NEED_N]), int(1.25 * nn))
        if out_i[I_NEED_U] > nu:
            nu = max(int(out_i[I_NEED_U]), int(1.25 * nu))
    status = int(out_i[I_STATUS])
    rec_status = STATUS_OK
    if status != 0:
        if status == EXHAUSTED and ctx.on_exhausted == "record":
            rec_status = STATUS_EXHAUSTED
        else:
            _raise_status(status, ind, int(out_i[I_BAD_VISIT]), pool.m)
    out["x"][row] = out_xb[:prog.nx]
    out["b"][row] = out_xb[prog.nx:]
    out["l"][row] = out_l
    out["a"][row] = out_a
    out["u_h"][row] = out_uh
    out["restarts"][row] = out_i[I_RESTARTS]
    out["status"][row] = rec_status
    if rec_status == STATUS_EXHAUSTED:
        out["fail_visit"][row] = -2
        out["failure_time"][row] = np.nan
    else:
        out["fail_visit"][row] = out_i[I_FAIL_VISIT]
        out["failure_time"][row] = out_f[F_TIME]
    out["censor_time"][row] = _censor_time(ctx.spec, ctx.seed, ind, ctx.censor)
    if ctx.record_pool:
        out.setdefault("pool_u", {})[ind] = U_rec


def _known_quantile(ctx: _Context, x: tuple, a_hist: tuple, k: int, h: float, w: float) -> float:
    disc = ctx.spec.risk_score.discrete
    if disc == "option1":
        lo = float(ctx.cdf(x, a_hist, k, h - 1))
        hi = float(ctx.cdf(x, a_hist, k, h))
        if not hi > lo:
            raise DomainError(f"risk score {h} has zero probability at visit {k}")
        u = lo + w * (hi - lo)
    else:
        u = float(ctx.cdf(x, a_hist, k, h))
    return min(max(u, _HALF_EPS), 1.0 - _HALF_EPS)


def _odds_ratio_p0(ctx: _Context, x: tuple, a_hist: tuple, k: int, h: float, g: float) -> float:
    ors = ctx.spec.risk_score.odds_ratios
    J = len(ors) + 1
    if h != int(h) or not 0 <= h < J:
        raise DomainError(f"risk score {h} is not a category in 0..{J - 1}")
    cdf_vals = np.array([float(ctx.cdf(x, a_hist, k, j)) for j in range(J)])
    mh = np.diff(np.concatenate([[0.0], cdf_vals]))
    mh = mh / mh.sum()
    table = odds_ratio_table_option2(g, mh, ors)
    return conditional_failure_from_table(table, int(h))


def _known_one(ctx: _Context, ind: int, out: dict, row: int) -> None:
    prog = ctx.prog
    K = prog.K
    kern = ctx.kernels
    d = _slot_draws(prog, ctx.seed, ind)
    S1 = np.zeros((prog.P, 1))
    out_xb = np.zeros(prog.nx + prog.nb)
    out_l = np.full((K + 1, prog.nl), np.nan)
    out_a = np.full(K + 1, np.nan)
    out_uh = np.full(K + 1, np.nan)
    tmp = np.empty(1)
    _kernels.slot_baseline(prog, S1, d.slot_n, d.slot_u, out_xb)
    x = tuple(float(v) for v in out_xb[:prog.nx])
    fail_visit, t_fail = -1, math.inf
    for k in range(K + 1):
        h, g, ok = kern.slot_visit(prog, k, S1, ctx.forced, ctx.regime, d.slot_n, d.slot_u,
                                   d.trt_n, d.trt_u, out_l, out_a, tmp)
        if not ok:
            raise InvalidHazardError(f"individual {ind}: additive hazard is not positive at visit {k}")
        if not math.isfinite(h):
            raise DomainError(f"individual {ind}: risk score is not finite at visit {k}")
        a_hist = tuple(float(v) for v in out_a[:k + 1])
        pc = 0.0
        if ctx.spec.risk_score.discrete == "odds_ratio":
            pc = _odds_ratio_p0(ctx, x, a_hist, k, h, g)
            u = math.nan
        else:
            u = _known_quantile(ctx, x, a_hist, k, h, d.lat_w[k])
        out_uh[k] = u
        failed, t, _ = _kernels.slot_outcome(prog, k, u, d.lat_e[k], g, pc)
        if failed:
            fail_visit, t_fail = k, t
            break
    out["x"][row] = out_xb[:prog.nx]
    out["b"][row] = out_xb[prog.nx:]
    out["l"][row] = out_l
    out["a"][row] = out_a
    out["u_h"][row] = out_uh
    out["restarts"][row] = 0
    out["status"][row] = STATUS_OK
    out["fail_visit"][row] = fail_visit
    out["failure_time"][row] = t_fail
    out["censor_time"][row] = _censor_time(ctx.spec, ctx.seed, ind, ctx.censor)


def _alloc(prog: Program, n: int) -> dict:
    K = prog.K
    return {
        "x": np.zeros((n, prog.nx)), "b": np.zeros((n, prog.nb)),
        "l": np.zeros((n, K + 1, prog.nl)), "a": np.zeros((n, K + 1)), "u_h": np.zeros((n, K + 1)),
        "fail_visit": np.zeros(n, dtype=np.int64), "failure_time": np.zeros(n),
        "censor_time": np.zeros(n), "restarts": np.zeros(n, dtype=np.int64),
        "status": np.zeros(n, dtype=np.int8),
    }


def _run_block(ctx: _Context, ids: np.ndarray) -> dict:
    out = _alloc(ctx.prog, len(ids))
    one = _matched_one if ctx.engine == "matched" else _known_one
    for row, ind in enumerate(ids):
        one(ctx, int(ind), out, row)
    out["ids"] = np.asarray(ids, dtype=np.int64)
    return out


_WORKER_CTX: _Context | None = None


def _worker_block(ids: np.ndarray) -> dict:
    assert _WORKER_CTX is not None
    return _run_block(_WORKER_CTX, ids)


def default_workers() -> int:
    """Worker count from the ``MSMSIM_THREADS`` environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _blocks(ids: np.ndarray, workers: int) -> list[np.ndarray]:
    n = len(ids)
    n_blocks = max(1, min(n, workers * 8))
    return [b for b in np.array_split(ids, n_blocks) if len(b)]


def _execute(ctx: _Context, ids: np.ndarray, workers: int) -> dict:
    global _WORKER_CTX
    if workers <= 1 or len(ids) < 2:
        return _run_block(ctx, ids)
    # warm up the kernels in the parent so forked workers inherit compiled code
    _run_block(ctx, ids[:1])
    blocks = _blocks(ids, workers)
    _WORKER_CTX = ctx
    try:
        mp = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=mp) as ex:
            parts = list(ex.map(_worker_block, blocks))
    finally:
        _WORKER_CTX = None
    out = {key: np.concatenate([p[key] for p in parts], axis=0)
           for key in parts[0] if key != "pool_u"}
    if ctx.record_pool:
        out["pool_u"] = {k: v for p in parts for k, v in p.get("pool_u", {}).items()}
    return out


def _regime_array(spec: ScenarioSpec, regime) -> tuple[bool, np.ndarray]:
    if regime is None:
        return False, np.zeros(spec.K + 1)
    arr = np.asarray(regime, dtype=float)
    if arr.shape != (spec.K + 1,):
        raise DomainError(f"treatment regime must have length K+1 = {spec.K + 1}, got {arr.shape}")
    if spec.treatment.kind == "binary" and not np.all((arr == 0) | (arr == 1)):
        raise DomainError("binary treatment regime must contain only 0 and 1")
    return True, arr


def _pool_warning(spec: ScenarioSpec, pool: PoolConfig) -> None:
    if pool.m < 1000 and min(spec.rho) <= -0.7:
        warnings.warn(f"pool size m = {pool.m} is below 1000 with rho <= -0.7; generated failure "
                      "times are noticeably sensitive to the matches at this size", stacklevel=3)


def simulate_cohort(spec: ScenarioSpec, n: int, engine: str = "matched", seed: int | None = None,
                    *, workers: int | None = None, pool: PoolConfig | None = None, regime=None,
                    cdf=None, censor: bool = True, pool_tag: int = 0, on_exhausted: str = "raise",
                    first_id: int = 0, record_pool: bool = False) -> Cohort:
    """Simulate ``n`` independent individuals.

    Parameters
    ----------
    spec : ScenarioSpec
    n : int
        Number of individuals; ids are ``first_id .. first_id + n - 1``.
    engine : {"matched", "known-cdf"}
    seed : int, optional
        Root seed; defaults to ``spec.seed``.
    workers : int, optional
        Worker processes; defaults to ``$MSMSIM_THREADS`` or 1.  Results do not
        depend on this value.
    pool : PoolConfig, optional
        Overrides ``spec.pool`` (matched engine).
    regime : array_like, optional
        Fixed treatment path ``a_0..a_K``.  When given the treatment model is
        not used and the output is the interventional (potential-outcome)
        world for that regime.
    cdf : callable, optional
        ``cdf(x, a_hist, k, h) -> P(H_k <= h | survivors)`` for the known-CDF
        engine, e.g. a :class:`msmsim.cdf.GridSet`.
    censor : bool
        Apply the scenario's exponential censoring.
    pool_tag : int
        Selects an independent set of match streams while keeping every
        slot-1 stream fixed.
    on_exhausted : {"raise", "record"}
        What to do when every match dies: raise :class:`PoolExhaustedError`
        or flag the individual (``status == 1``, ``failure_time`` NaN).
    record_pool : bool
        Keep every member's risk quantiles from the first pool pass
        (``cohort.meta["pool_u"][id]``, shape ``(K+1, m)``).  Diagnostic use.

    Returns
    -------
    Cohort
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if engine not in ENGINES:
        raise DomainError(f"engine must be one of {ENGINES}, got {engine!r}")
    if on_exhausted not in ("raise", "record"):
        raise DomainError("on_exhausted must be 'raise' or 'record'")
    seed = spec.seed if seed is None else rngmod.resolve_seed(seed)
    pool = pool or spec.pool
    forced, reg = _regime_array(spec, regime)
    if engine == "known-cdf":
        if cdf is None:
            raise PlanningError("the known-cdf engine needs a risk-score CDF (grids or a function)")
    else:
        _pool_warning(spec, pool)
    ctx = _Context(spec=spec, prog=compile_scenario(spec), kernels=kernels_for(spec), engine=engine,
                   seed=seed, pool=pool, forced=forced, regime=reg, pool_tag=pool_tag, censor=censor,
                   on_exhausted=on_exhausted, cdf=cdf, record_pool=record_pool)
    ids = np.arange(first_id, first_id + n, dtype=np.int64)
    out = _execute(ctx, ids, workers or default_workers())
    meta = {"pool": pool.to_dict(), "pool_tag": pool_tag}
    if record_pool:
        meta["pool_u"] = out.get("pool_u", {})
    return Cohort(spec=spec, ids=out["ids"], x=out["x"], b=out["b"], l=out["l"], a=out["a"],
                  u_h=out["u_h"], fail_visit=out["fail_visit"], failure_time=out["failure_time"],
                  censor_time=out["censor_time"], restarts=out["restarts"], status=out["status"],
                  seed=seed, engine=engine, regime=reg if forced else None, meta=meta)


def simulate_potential_arm(spec: ScenarioSpec, regime, n: int, seed: int | None = None,
                           engine: str = "matched", **kwargs) -> Cohort:
    """Interventional trajectories with treatment forced to ``regime``.

    Censoring is not applied: this is the potential-outcome world used to
    check the MSM directly.
    """
    kwargs.setdefault("censor", False)
    return simulate_cohort(spec, n, engine=engine, seed=seed, regime=regime, **kwargs)


def simulate_individual_matched(spec: ScenarioSpec, ind: int = 0, seed: int | None = None,
                                pool: PoolConfig | None = None, regime=None) -> IndividualRecord:
    """Simulate the individual with id ``ind`` using the match-pool engine."""
    c = simulate_cohort(spec, 1, "matched", seed, workers=1, pool=pool, regime=regime, first_id=ind)
    return c.record(0)


def simulate_individual_known_cdf(spec: ScenarioSpec, cdf, ind: int = 0, seed: int | None = None,
                                  regime=None) -> IndividualRecord:
    """Simulate the individual with id ``ind`` given the risk-score CDF."""
    c = simulate_cohort(spec, 1, "known-cdf", seed, workers=1, cdf=cdf, regime=regime, first_id=ind)
    return c.record(0)


# ---------------------------------------------------------------------------
# sensitivity to the pool size
# ---------------------------------------------------------------------------

def sensitivity_pool(m: int) -> PoolConfig:
    """Pool settings used when comparing pool sizes.

    A restart threshold of 10 % with a restart pool of ``20 m``; no restart
    for pools smaller than 100, where a 10 % threshold would be below one
    lineage.
    """
    if m < 100:
        return PoolConfig(m=m, restart_fraction=0.0, restart_m=m, max_restarts=0)
    return PoolConfig(m=m, restart_fraction=0.10, restart_m=20 * m, max_restarts=5)


def sensitivity_m_run(spec: ScenarioSpec, n: int, m_list: Sequence[int], seed: int | None = None,
                      *, reference_m: int | None = None, workers: int | None = None) -> pd.DataFrame:
    """Agreement of failure visits across pool sizes with pinned slot-1 streams.

    The sampled individual's covariates, treatments, rank jitter and copula
    noise come from streams that do not depend on the pool, so across runs
    only the matches change.  Each ``m`` in ``m_list`` is compared with a run
    at ``reference_m`` (default: the largest ``m``); the reference itself is
    compared with a second run using independent match streams.  Individuals
    whose pool died out count as disagreements and are reported.

    Returns
    -------
    pandas.DataFrame
        Columns ``m, reference_m, agreement, mc_se, n, exhausted``; agreement
        is a percentage.
    """
    if not len(m_list):
        raise DomainError("m_list must be nonempty")
    ref_m = int(reference_m or max(m_list))
    seed = spec.seed if seed is None else rngmod.resolve_seed(seed)

    def run(m: int, tag: int) -> Cohort:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return simulate_cohort(spec, n, "matched", seed, workers=workers, pool=sensitivity_pool(m),
                                   censor=False, pool_tag=tag, on_exhausted="record")

    ref = run(ref_m, 0)
    rows = []
    for m in m_list:
        other = run(int(m), 1 if int(m) == ref_m else 0)
        bad = (ref.status != STATUS_OK) | (other.status != STATUS_OK)
        same = (ref.fail_visit == other.fail_visit) & ~bad
        p = float(same.mean())
        rows.append({"m": int(m), "reference_m": ref_m, "agreement": 100.0 * p,
                     "mc_se": 100.0 * math.sqrt(p * (1 - p) / n), "n": n,
                     "exhausted": int((other.status != STATUS_OK).sum())})
    return pd.DataFrame(rows)
