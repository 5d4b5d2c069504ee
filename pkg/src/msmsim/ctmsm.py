"""Continuous-time MSM generator.

Treatment ``A(t)`` and a scalar confounder ``L(t)`` are jump processes whose
intensities and jump laws depend on the current state; between jumps they
are constant.  The interventional hazard ``alpha*(x, a)`` of failure given
``X`` under a treatment path is piecewise constant along that path.

The sampled individual's failure time is generated segment by segment.  At
the start ``t`` of each segment its risk quantile among the still-surviving
matches (which share ``X`` and the treatment path) is linked through a
Gaussian copula to a uniform ``U_T``, and a candidate failure time is drawn
by inverting ``F(t' | T > t) = 1 - exp(-int_t^t' alpha*)``.  Segments end at
the next change point of any surviving member, at the first failure among
them, or at the horizon ``tau``.  Matches are not replaced when they fail.

Beyond ``tau`` the CDF is extended as ``min(F(tau) + t - tau, 1)``; a time
above ``tau`` means administrative censoring at ``tau``.

All model callables are vectorised over pool members: ``b`` has shape
``(n, n_b)`` and ``a``/``l`` have shape ``(n,)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
import pandas as pd

from . import rng as rngmod
from ._kernels import clamp_u
from ._normal import ndtr, ndtr_upper, ndtri
from .errors import DomainError, MsmSimError, PoolExhaustedError

CT_OK = 0
CT_NEED_MORE = 1
CT_EXHAUSTED = 3

CT_PATHS = 9
CT_POOL = 10


@dataclass(frozen=True)
class PiecewiseConstPath:
    """Right-continuous step function on ``[0, tau]``.

    ``values[i]`` holds on ``[times[i], times[i+1])``; ``times[0] == 0``.
    """

    times: np.ndarray
    values: np.ndarray
    tau: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0 or t[0] != 0.0:
            raise DomainError("path needs matching 1-d times/values with times[0] == 0")
        if np.any(np.diff(t) <= 0):
            raise DomainError("path change times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def n_changes(self) -> int:
        return int(self.times.shape[0] - 1)

    def value_at(self, t):
        """``X(t)`` (right-continuous)."""
        i = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.clip(i, 0, None)]

    def left_limit(self, t):
        """``X(t-)``."""
        i = np.searchsorted(self.times, t, side="left") - 1
        return self.values[np.clip(i, 0, None)]

    def truncate(self, t_end: float) -> "PiecewiseConstPath":
        """Drop changes at or after ``t_end``."""
        keep = self.times < t_end
        keep[0] = True
        return PiecewiseConstPath(self.times[keep], self.values[keep], self.tau)

    @classmethod
    def constant(cls, value: float, tau: float) -> "PiecewiseConstPath":
        return cls(np.array([0.0]), np.array([float(value)]), tau)


@dataclass(frozen=True)
class CtScenarioSpec:
    """Continuous-time data-generating mechanism.

    Parameters
    ----------
    tau : float
        Administrative censoring time.
    sample_x : callable ``(rng) -> ndarray (n_x,)``
    sample_b : callable ``(x, n, rng) -> ndarray (n, n_b)``
    initial_l : callable ``(x, b, rng) -> ndarray (n,)``
    initial_a : callable ``(x, b, l0, rng) -> ndarray (n,)``
    alpha_a, alpha_l : callable ``(x, b, a, l) -> ndarray (n,)``
        Intensities of a treatment and of a confounder change given the
        current state.  Must be non-negative.
    jump_a, jump_l : callable ``(x, b, a, l, rng) -> ndarray (n,)``
        New value at a change.
    hazard : callable ``(x, a) -> float``
        Interventional failure hazard given ``X = x`` while treatment is ``a``.
    risk_score : callable ``(x, b, l, a) -> ndarray (n,)``
        Evaluated only at change points, so it is constant between them.
    rho : float
        Copula correlation in ``(-1, 0]``.
    m : int
        Pool size including the sampled individual.
    """

    tau: float
    sample_x: Callable
    sample_b: Callable
    initial_l: Callable
    initial_a: Callable
    alpha_a: Callable
    alpha_l: Callable
    jump_a: Callable
    jump_l: Callable
    hazard: Callable
    risk_score: Callable
    rho: float = -0.5
    m: int = 500
    name: str = ""

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        if not -1.0 < self.rho <= 0.0:
            raise DomainError(f"rho out of range: rho = {self.rho}")
        if self.m < 2:
            raise DomainError("m must be >= 2")


# ---------------------------------------------------------------------------
# path sampling
# ---------------------------------------------------------------------------

@dataclass
class _PathBatch:
    """Change events of ``n`` members, sorted by member then time."""

    l0: np.ndarray
    a0: np.ndarray
    l_member: np.ndarray
    l_time: np.ndarray
    l_value: np.ndarray
    a_member: np.ndarray
    a_time: np.ndarray
    a_value: np.ndarray

    def l_path(self, j: int, tau: float) -> PiecewiseConstPath:
        sel = self.l_member == j
        return PiecewiseConstPath(np.concatenate([[0.0], self.l_time[sel]]),
                                  np.concatenate([[self.l0[j]], self.l_value[sel]]), tau)

    def a_path(self, j: int, tau: float) -> PiecewiseConstPath:
        sel = self.a_member == j
        return PiecewiseConstPath(np.concatenate([[0.0], self.a_time[sel]]),
                                  np.concatenate([[self.a0[j]], self.a_value[sel]]), tau)


def _rates(fn, x, b, a, l, what: str) -> np.ndarray:
    r = np.broadcast_to(np.asarray(fn(x, b, a, l), dtype=float), a.shape).copy()
    if np.any(~(r >= 0)):
        raise DomainError(f"{what} intensity is negative or not a number")
    return r


def _sample_batch(spec: CtScenarioSpec, x: np.ndarray, b: np.ndarray, rng: np.random.Generator,
                  fixed: PiecewiseConstPath | None) -> _PathBatch:
    n = b.shape[0]
    tau = spec.tau
    l = np.asarray(spec.initial_l(x, b, rng), dtype=float).reshape(n).copy()
    if fixed is None:
        a = np.asarray(spec.initial_a(x, b, l, rng), dtype=float).reshape(n).copy()
    else:
        a = np.full(n, float(fixed.values[0]))
    l0, a0 = l.copy(), a.copy()
    t = np.zeros(n)
    active = np.arange(n)
    lm, lt, lv, am, at, av = [], [], [], [], [], []
    while active.size:
        ba, aa, la, ta = b[active], a[active], l[active], t[active]
        rl = _rates(spec.alpha_l, x, ba, aa, la, "confounder")
        el = rng.standard_exponential(active.size)
        with np.errstate(divide="ignore"):
            cand_l = np.where(rl > 0, ta + el / np.where(rl > 0, rl, 1.0), np.inf)
        if fixed is None:
            ra = _rates(spec.alpha_a, x, ba, aa, la, "treatment")
            ea = rng.standard_exponential(active.size)
            cand_a = np.where(ra > 0, ta + ea / np.where(ra > 0, ra, 1.0), np.inf)
        else:
            nxt = np.searchsorted(fixed.times, ta, side="right")
            cand_a = np.where(nxt < fixed.times.shape[0],
                              fixed.times[np.minimum(nxt, fixed.times.shape[0] - 1)], np.inf)
        t_next = np.minimum(cand_l, cand_a)
        done = t_next >= tau
        is_l = (cand_l <= cand_a) & ~done
        is_a = ~is_l & ~done
        if is_l.any():
            w = active[is_l]
            new = np.asarray(spec.jump_l(x, b[w], a[w], l[w], rng), dtype=float).reshape(w.size)
            lm.append(w)
            lt.append(t_next[is_l])
            lv.append(new)
            l[w] = new
            t[w] = t_next[is_l]
        if is_a.any():
            w = active[is_a]
            if fixed is None:
                new = np.asarray(spec.jump_a(x, b[w], a[w], l[w], rng), dtype=float).reshape(w.size)
                am.append(w)
                at.append(t_next[is_a])
                av.append(new)
            else:
                new = fixed.value_at(t_next[is_a])
            a[w] = new
            t[w] = t_next[is_a]
        active = active[~done]

    def cat(parts, dtype=float):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    lm_, lt_, lv_ = cat(lm, np.int64), cat(lt), cat(lv)
    o = np.lexsort((lt_, lm_))
    am_, at_, av_ = cat(am, np.int64), cat(at), cat(av)
    p = np.lexsort((at_, am_))
    return _PathBatch(l0, a0, lm_[o], lt_[o], lv_[o], am_[p], at_[p], av_[p])


def sample_event_paths(spec: CtScenarioSpec, x, b, rng: np.random.Generator,
                       fixed_treatment: PiecewiseConstPath | None = None
                       ) -> tuple[PiecewiseConstPath, PiecewiseConstPath]:
    """Sample one individual's treatment and confounder paths on ``[0, tau]``.

    Competing exponentials: from the current state draw candidate times to
    the next treatment change and the next confounder change at the current
    intensities, keep the earlier one, apply its jump law, and repeat until
    ``tau``.  With ``fixed_treatment`` only the confounder is sampled, and
    its intensity follows the given treatment path.

    Returns
    -------
    (treatment path, confounder path)
    """
    x = np.asarray(x, dtype=float)
    b2 = np.asarray(b, dtype=float).reshape(1, -1)
    batch = _sample_batch(spec, x, b2, rng, fixed_treatment)
    a_path = fixed_treatment if fixed_treatment is not None else batch.a_path(0, spec.tau)
    return a_path, batch.l_path(0, spec.tau)


# ---------------------------------------------------------------------------
# interventional failure-time inversion
# ---------------------------------------------------------------------------

def hazard_knots(spec: CtScenarioSpec, x, a_path: PiecewiseConstPath):
    """Knots, rates and cumulative hazard of ``alpha*`` along ``a_path`` up to ``tau``."""
    times = a_path.times[a_path.times < spec.tau]
    rates = np.array([float(spec.hazard(np.asarray(x, dtype=float), v)) for v in a_path.values[:times.size]])
    if np.any(~(rates >= 0)):
        raise DomainError("interventional hazard must be non-negative")
    knots = np.concatenate([times, [spec.tau]])
    lam = np.concatenate([[0.0], np.cumsum(rates * np.diff(knots))])
    return knots, rates, lam


@numba.njit(cache=True)
def _cum_at(knots, rates, lam, t):
    n = rates.shape[0]
    i = np.searchsorted(knots, t, side="right") - 1
    if i < 0:
        i = 0
    if i >= n:
        return lam[n]
    return lam[i] + rates[i] * (t - knots[i])


@numba.njit(cache=True)
def _invert(knots, rates, lam, s, neg_log_surv, u):
    """Time ``t > s`` with ``F(t | T > s) = u``; ``neg_log_surv = -log(1 - u)``."""
    n = rates.shape[0]
    tau = knots[n]
    i = np.searchsorted(knots, s, side="right") - 1
    if i < 0:
        i = 0
    t = s
    remaining = neg_log_surv
    res = np.inf
    while i < n:
        seg_end = knots[i + 1]
        if seg_end > t:
            inc = rates[i] * (seg_end - t)
            if rates[i] > 0.0 and inc >= remaining:
                res = t + remaining / rates[i]
                break
            remaining -= inc
            t = seg_end
        i += 1
    if res == np.inf:
        # linear extension beyond tau: F(t) = F(tau) + t - tau
        f_tau = -math.expm1(-(lam[n] - _cum_at(knots, rates, lam, s)))
        res = tau + max(u - f_tau, 0.0)
        if not res > tau:
            res = np.nextafter(tau, np.inf)
    if not res > s:
        res = np.nextafter(s, np.inf)
    return res


def interventional_time_inverse(spec: CtScenarioSpec, x, a_path: PiecewiseConstPath, s: float,
                                u: float) -> float:
    """Invert ``F(t | X=x, T > s)`` for the treatment path ``a_path``.

    Parameters
    ----------
    u : float
        Probability in (0, 1).

    Returns
    -------
    float
        A time ``> s``.  Values above ``tau`` come from the linear extension
        ``min(F(tau) + t - tau, 1)`` and mean censoring at ``tau``.
    """
    if not 0.0 < u < 1.0:
        raise DomainError("u must lie in (0, 1)")
    if not s < spec.tau:
        raise DomainError("s must be below tau")
    knots, rates, lam = hazard_knots(spec, x, a_path)
    return float(_invert(knots, rates, lam, float(s), -math.log1p(-u), float(u)))


def interventional_survival(spec: CtScenarioSpec, x, a_path: PiecewiseConstPath, t) -> np.ndarray:
    """``P(T > t | X = x)`` under the treatment path, for ``t <= tau``."""
    knots, rates, lam = hazard_knots(spec, x, a_path)
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    return np.exp(-np.array([_cum_at(knots, rates, lam, v) for v in tt]))


# ---------------------------------------------------------------------------
# matched kernel
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _ct_kernel(tau, rho, knots, rates, lam, score0, ev_ptr, ev_time, ev_score,
               slot_w, slot_e, pool_u, pool_n, out_f, out_i):
    """Segment loop; member 0 is the sampled individual.

    out_f: [T_1, min alive fraction]; out_i: [status, segments, n_slot_draws,
    need_u, need_n].
    """
    m = score0.shape[0]
    s = math.sqrt(1.0 - rho * rho)
    alive = np.ones(m, dtype=np.bool_)
    cur = score0.copy()
    nxt = ev_ptr[:m].copy()
    T = np.empty(m)
    idx = np.empty(m, dtype=np.int64)
    rank = np.empty(m, dtype=np.int64)
    vals = np.empty(m)
    pu = 0
    pn = 0
    seg = 0
    t = 0.0
    min_frac = 1.0
    while True:
        b = tau
        n_alive = 0
        for j in range(m):
            if alive[j]:
                idx[n_alive] = j
                vals[n_alive] = cur[j]
                n_alive += 1
                if nxt[j] < ev_ptr[j + 1] and ev_time[nxt[j]] < b:
                    b = ev_time[nxt[j]]
        if seg >= slot_w.shape[0]:
            out_i[0] = CT_NEED_MORE
            out_i[2] = 2 * slot_w.shape[0]
            return
        if pu + 2 * n_alive > pool_u.shape[0] or pn + n_alive > pool_n.shape[0]:
            out_i[0] = CT_NEED_MORE
            out_i[3] = 2 * pool_u.shape[0]
            out_i[4] = 2 * pool_n.shape[0]
            return
        # ranks among survivors, ties shuffled
        order = np.argsort(vals[:n_alive])
        i = 0
        while i < n_alive:
            k = i + 1
            while k < n_alive and vals[order[k]] == vals[order[i]]:
                k += 1
            for r in range(k - 1, i, -1):
                q = i + int(pool_u[pu] * (r - i + 1))
                pu += 1
                if q > r:
                    q = r
                tmp = order[r]
                order[r] = order[q]
                order[q] = tmp
            i = k
        for r in range(n_alive):
            rank[order[r]] = r + 1
        tmin = np.inf
        for r in range(n_alive):
            j = idx[r]
            if j == 0:
                w = slot_w[seg]
                e = slot_e[seg]
            else:
                w = pool_u[pu]
                pu += 1
                e = pool_n[pn]
                pn += 1
            u = clamp_u((rank[r] - w) / n_alive)
            z = rho * ndtri(u) + s * e
            T[j] = _invert(knots, rates, lam, t, -math.log(ndtr_upper(z)), ndtr(z))
            if T[j] < tmin:
                tmin = T[j]
        seg += 1
        if tmin < b:
            b = tmin
        if not (T[0] > b and b < tau):
            out_f[0] = T[0]
            out_f[1] = min_frac
            out_i[0] = CT_OK
            out_i[1] = seg
            return
        n_left = 0
        for j in range(1, m):
            if alive[j] and T[j] <= b:
                alive[j] = False
            if alive[j]:
                n_left += 1
        if n_left == 0:
            out_f[0] = b
            out_i[0] = CT_EXHAUSTED
            out_i[1] = seg
            return
        frac = n_left / (m - 1)
        if frac < min_frac:
            min_frac = frac
        t = b
        for j in range(m):
            while alive[j] and nxt[j] < ev_ptr[j + 1] and ev_time[nxt[j]] <= t:
                cur[j] = ev_score[nxt[j]]
                nxt[j] += 1


def _member_scores(spec: CtScenarioSpec, x, b: np.ndarray, batch: _PathBatch,
                   a_path: PiecewiseConstPath):
    """Initial scores and per-member (time, score-after) event lists.

    Each member's events are its own confounder changes and the shared
    treatment changes, so scores are re-evaluated only at change points.
    """
    m = b.shape[0]
    tau = spec.tau
    a_times = a_path.times[1:][a_path.times[1:] < tau]
    score0 = np.asarray(spec.risk_score(x, b, batch.l0, np.full(m, a_path.values[0])),
                        dtype=float).reshape(m)
    mem = np.concatenate([batch.l_member, np.repeat(np.arange(m), a_times.size)])
    tim = np.concatenate([batch.l_time, np.tile(a_times, m)])
    lval = np.concatenate([batch.l_value, np.full(m * a_times.size, np.nan)])
    order = np.lexsort((np.isnan(lval), tim, mem))
    mem, tim, lval = mem[order], tim[order], lval[order]
    # forward-fill the confounder within each member, starting from l0
    start = np.searchsorted(mem, np.arange(m), side="left")
    pos = np.arange(mem.size)
    have = ~np.isnan(lval)
    last = np.where(have, pos, -1)
    last = np.maximum.accumulate(last) if last.size else last
    first_of = start[mem] if mem.size else mem
    use_own = last >= first_of
    lfill = np.where(use_own, lval[np.maximum(last, 0)] if last.size else lval, batch.l0[mem])
    afill = a_path.value_at(tim)
    scores = np.asarray(spec.risk_score(x, b[mem], lfill, afill), dtype=float).reshape(mem.size)
    ptr = np.concatenate([[0], np.cumsum(np.bincount(mem, minlength=m))]).astype(np.int64)
    if not (np.all(np.isfinite(score0)) and np.all(np.isfinite(scores))):
        raise DomainError("risk score is not finite")
    return score0, ptr, tim.astype(float), scores


@dataclass
class CtRecord:
    """One continuous-time trajectory.

    ``time`` is the failure time when ``event`` is true, otherwise ``tau``.
    Paths are truncated at ``time``.
    """

    id: int
    x: np.ndarray
    b: np.ndarray
    a_path: PiecewiseConstPath
    l_path: PiecewiseConstPath
    time: float
    event: bool
    segments: int = 0
    min_alive_fraction: float = 1.0


def _slot_stream_draws(seed: int, ind: int, n: int):
    w = rngmod.substream(seed, ind, rngmod.JITTER).random(n)
    e = rngmod.substream(seed, ind, rngmod.NOISE).standard_normal(n)
    return w, e


def simulate_individual_ct(spec: CtScenarioSpec, ind: int = 0, seed: int = 0, *,
                           regime: PiecewiseConstPath | None = None, cdf: Callable | None = None,
                           pool_tag: int = 0) -> CtRecord:
    """Simulate one continuous-time individual.

    Parameters
    ----------
    spec : CtScenarioSpec
    ind : int
        Individual id (selects the random streams).
    seed : int
        Root seed.
    regime : PiecewiseConstPath, optional
        Forced treatment path; otherwise treatment follows its intensity.
    cdf : callable, optional
        Known survivor CDF of the risk score, ``cdf(x, a_path, t, h)``.
        When given no matches are used.
    pool_tag : int
        Selects independent match streams.

    Raises
    ------
    PoolExhaustedError
        All matches failed before the sampled individual's outcome was
        resolved.
    """
    tau = spec.tau
    paths_rng = rngmod.substream(seed, ind, CT_PATHS)
    x = np.asarray(spec.sample_x(paths_rng), dtype=float).reshape(-1)
    b1 = np.asarray(spec.sample_b(x, 1, paths_rng), dtype=float).reshape(1, -1)
    slot = _sample_batch(spec, x, b1, paths_rng, regime)
    a_path = regime if regime is not None else slot.a_path(0, tau)
    l_path = slot.l_path(0, tau)
    knots, rates, lam = hazard_knots(spec, x, a_path)
    if cdf is not None:
        return _known_ct(spec, ind, seed, x, b1[0], a_path, l_path, knots, rates, lam, cdf)

    m = spec.m
    pool_rng = rngmod.substream(seed, ind, CT_POOL, pool_tag, 0)
    bm = np.asarray(spec.sample_b(x, m - 1, pool_rng), dtype=float).reshape(m - 1, -1)
    matches = _sample_batch(spec, x, bm, pool_rng, a_path)
    b_all = np.vstack([b1, bm])
    batch = _PathBatch(
        np.concatenate([slot.l0, matches.l0]), np.concatenate([slot.a0, matches.a0]),
        np.concatenate([slot.l_member, matches.l_member + 1]),
        np.concatenate([slot.l_time, matches.l_time]), np.concatenate([slot.l_value, matches.l_value]),
        np.zeros(0, np.int64), np.zeros(0), np.zeros(0))
    score0, ptr, ev_t, ev_s = _member_scores(spec, x, b_all, batch, a_path)

    # every segment ends at a change point, a failure or tau
    n_slot = int(ptr[-1]) + m + 1
    n_n = m * n_slot
    n_u = 2 * n_n
    out_f = np.zeros(2)
    out_i = np.zeros(5, dtype=np.int64)
    while True:
        w, e = _slot_stream_draws(seed, ind, n_slot)
        pu = rngmod.substream(seed, ind, CT_POOL, pool_tag, 1).random(n_u)
        pn = rngmod.substream(seed, ind, CT_POOL, pool_tag, 2).standard_normal(n_n)
        out_i[:] = 0
        _ct_kernel(float(tau), float(spec.rho), knots, rates, lam, score0, ptr, ev_t, ev_s,
                   w, e, pu, pn, out_f, out_i)
        if out_i[0] != CT_NEED_MORE:
            break
        n_slot = max(n_slot, int(out_i[2]))
        n_u = max(n_u, int(out_i[3]))
        n_n = max(n_n, int(out_i[4]))
    if out_i[0] == CT_EXHAUSTED:
        raise PoolExhaustedError(
            f"individual {ind}: all {m - 1} matches failed by t = {out_f[0]:.4g} before the "
            "sampled individual's outcome was resolved; increase m")
    if out_f[1] < 0.10:
        warnings.warn(f"individual {ind}: surviving matches fell to {100 * out_f[1]:.1f}% of the "
                      "pool; consider a larger m", stacklevel=2)
    T1 = float(out_f[0])
    event = T1 <= tau
    end = T1 if event else tau
    return CtRecord(ind, x, b1[0], a_path.truncate(end), l_path.truncate(end), end, event,
                    int(out_i[1]), float(out_f[1]))


def _known_ct(spec, ind, seed, x, b, a_path, l_path, knots, rates, lam, cdf) -> CtRecord:
    tau = spec.tau
    rho = spec.rho
    s = math.sqrt(1.0 - rho * rho)
    change = np.union1d(a_path.times[1:], l_path.times[1:])
    change = change[change < tau]
    n_seg = change.size + 1
    w, e = _slot_stream_draws(seed, ind, max(64, n_seg))
    t = 0.0
    for seg in range(n_seg):
        bnd = change[seg] if seg < change.size else tau
        h = float(np.asarray(spec.risk_score(x, b.reshape(1, -1), np.atleast_1d(l_path.value_at(t)),
                                             np.atleast_1d(a_path.value_at(t)))).reshape(-1)[0])
        u = min(max(float(cdf(x, a_path, t, h)), np.finfo(float).eps / 2), 1 - np.finfo(float).eps / 2)
        z = rho * float(ndtri(u)) + s * e[seg]
        T = float(_invert(knots, rates, lam, t, -math.log(float(ndtr_upper(z))), float(ndtr(z))))
        if not (T > bnd and bnd < tau):
            event = T <= tau
            end = T if event else tau
            return CtRecord(ind, x, b, a_path.truncate(end), l_path.truncate(end), end, event, seg + 1)
        t = bnd
    raise MsmSimError("segment loop ended without resolution")  # pragma: no cover


def simulate_ct_cohort(spec: CtScenarioSpec, n: int, seed: int = 0, *, regime=None, cdf=None,
                       pool_tag: int = 0, first_id: int = 0) -> list[CtRecord]:
    """``n`` independent continuous-time individuals (ids ``first_id..``)."""
    out = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for i in range(first_id, first_id + n):
            out.append(simulate_individual_ct(spec, i, seed, regime=regime, cdf=cdf, pool_tag=pool_tag))
    low = [w for w in caught if "surviving matches" in str(w.message)]
    if low:
        warnings.warn(f"{len(low)} of {n} individuals saw surviving matches drop below 10% of m",
                      stacklevel=2)
    return out


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

EVENT_COLUMNS = ["id", "time", "variable", "value"]


def records_to_events(records: Sequence[CtRecord]) -> pd.DataFrame:
    """Event-list table: initial values at time 0, one row per change, and a
    terminal ``failure`` or ``censored`` row."""
    rows = []
    for r in records:
        for j, v in enumerate(r.x):
            rows.append((r.id, 0.0, f"x{j + 1}", float(v)))
        for j, v in enumerate(r.b):
            rows.append((r.id, 0.0, f"b{j + 1}", float(v)))
        for t, v in zip(r.a_path.times, r.a_path.values):
            rows.append((r.id, float(t), "a", float(v)))
        for t, v in zip(r.l_path.times, r.l_path.values):
            rows.append((r.id, float(t), "l", float(v)))
        rows.append((r.id, float(r.time), "failure" if r.event else "censored", 1.0 if r.event else 0.0))
    df = pd.DataFrame(rows, columns=EVENT_COLUMNS)
    order = {"failure": 2, "censored": 2}
    df["_o"] = df["variable"].map(order).fillna(0)
    return df.sort_values(["id", "time", "_o"], kind="stable").drop(columns="_o").reset_index(drop=True)


# ---------------------------------------------------------------------------
# worked example
# ---------------------------------------------------------------------------

def _expit(v):
    return 1.0 / (1.0 + np.exp(-v))


def worked_example(tau: float = 10.0, rho: float = -0.5, m: int = 200,
                   hazard_a0: float = 0.08, hazard_a1: float = 0.04,
                   alpha_a: Callable | None = None, alpha_l: Callable | None = None) -> CtScenarioSpec:
    """Binary treatment, ternary confounder.

    ``B = L(0)`` is uniform on {0, 1, 2}; ``P(A(0) = 1 | B) = expit(-1 + 0.5 B)``;
    treatment switches with intensity ``0.1 + 0.05 L`` and the confounder moves
    to one of its other two values (equally likely) with intensity
    ``0.2 - 0.1 A``.  The interventional hazard is ``hazard_a0`` while
    untreated and ``hazard_a1`` while treated, and the risk score is the
    current confounder value.
    """

    def sample_b(x, n, rng):
        return rng.integers(0, 3, size=(n, 1)).astype(float)

    def initial_l(x, b, rng):
        return b[:, 0].copy()

    def initial_a(x, b, l0, rng):
        return (rng.random(l0.shape[0]) < _expit(-1.0 + 0.5 * b[:, 0])).astype(float)

    def jump_l(x, b, a, l, rng):
        step = rng.integers(1, 3, size=l.shape[0])
        return np.mod(l + step, 3).astype(float)

    def jump_a(x, b, a, l, rng):
        return 1.0 - a

    def hazard(x, a):
        return hazard_a1 if a >= 0.5 else hazard_a0

    def score(x, b, l, a):
        return np.asarray(l, dtype=float)

    return CtScenarioSpec(
        tau=tau, sample_x=lambda rng: np.zeros(0), sample_b=sample_b, initial_l=initial_l,
        initial_a=initial_a,
        alpha_a=alpha_a or (lambda x, b, a, l: 0.1 + 0.05 * l),
        alpha_l=alpha_l or (lambda x, b, a, l: 0.2 - 0.1 * a),
        jump_a=jump_a, jump_l=jump_l, hazard=hazard, risk_score=score, rho=rho, m=m,
        name="worked-example")
