"""Compiled inner loops of the simulation engines.

Random numbers are not drawn here.  The Python driver fills buffers from
per-individual NumPy streams and passes them in; the kernels consume the
buffers in a fixed order.  This keeps the kernels cacheable (numba cannot
cache functions that take ``np.random.Generator`` arguments) and makes the
consumption pattern explicit:

* slot buffers (``slot_n``/``slot_u``): one entry per slot-1 covariate draw,
  laid out as x, b, then l at visits 0..K;
* treatment buffers (``trt_n``/``trt_u``) and the slot-1 jitter ``lat_w`` and
  copula noise ``lat_e``: one entry per visit;
* pool buffers (``pool_n``/``pool_u``): consumed sequentially by the matches.
  If a pool buffer would run out the kernel stops with ``NEED_MORE`` and the
  driver retries with longer buffers; the outcome does not depend on the
  buffer length because longer buffers extend the same stream.
"""

import math

import numba
import numpy as np

from ._normal import ndtr, ndtr_upper, ndtri

OK = 0
NEED_MORE = 1
EXHAUSTED = 3
BAD_HAZARD = 4
BAD_SCORE = 5
RESTART = 10

# out_i layout
I_STATUS = 0
I_FAIL_VISIT = 1
I_RESTARTS = 2
I_RESTART_K = 3
I_NEED_N = 4
I_NEED_U = 5
I_BAD_VISIT = 6
I_LEN = 8

# out_f layout
F_TIME = 0
F_UY = 1
F_G = 2
F_LEN = 3

_HALF_EPS = np.finfo(np.float64).eps / 2.0


@numba.njit(cache=True)
def expit(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@numba.njit(cache=True)
def clamp_u(u):
    if u < _HALF_EPS:
        return _HALF_EPS
    if u > 1.0 - _HALF_EPS:
        return 1.0 - _HALF_EPS
    return u


@numba.njit(cache=True)
def eval_lp(prog, lp, k, S, n, out):
    """out[j] = intercept[k] + sum_t coef_t[k] * prod(S[factors_t, j]) for j < n."""
    c0 = prog.lp_icpt[lp, k]
    for j in range(n):
        out[j] = c0
    for t in range(prog.lp_tptr[lp], prog.lp_tptr[lp + 1]):
        c = prog.term_coef[t, k]
        f0 = prog.term_fptr[t]
        f1 = prog.term_fptr[t + 1]
        if f1 - f0 == 1:
            row = prog.factor_idx[f0]
            for j in range(n):
                out[j] += c * S[row, j]
        else:
            for j in range(n):
                v = c
                for f in range(f0, f1):
                    v *= S[prog.factor_idx[f], j]
                out[j] += v


@numba.njit(cache=True)
def draw_value(kind, eta, sd, zn, zu):
    if kind == 0:
        return eta + sd * zn
    return 1.0 if zu < expit(eta) else 0.0


@numba.njit(cache=True)
def link_g(link, eta):
    """Return (g, ok) for a linear predictor under the MSM link."""
    if link == 0:
        return expit(eta), True
    if link == 1:
        return -math.expm1(-math.exp(eta)), True
    if not eta > 0.0:
        return 0.0, False
    return -math.expm1(-eta), True


@numba.njit(cache=True)
def score_members(prog, k, S, n, out):
    eval_lp(prog, prog.score_lp, k, S, n, out)


@numba.njit(cache=True)
def rank_members(H, n, rank, pool_u, pos):
    """1-based ranks of H[:n]; tied runs are shuffled with pool uniforms."""
    order = np.argsort(H[:n])
    i = 0
    while i < n:
        j = i + 1
        hi = H[order[i]]
        while j < n and H[order[j]] == hi:
            j += 1
        if j - i > 1:
            for t in range(j - 1, i, -1):
                u = pool_u[pos[1]]
                pos[1] += 1
                r = i + int(u * (t - i + 1))
                if r > t:
                    r = t
                tmp = order[t]
                order[t] = order[r]
                order[r] = tmp
        i = j
    for t in range(n):
        rank[order[t]] = t + 1


@numba.njit(cache=True)
def slot_outcome(prog, k, u1, e1, g, p_cat):
    """Failure decision for the sampled individual at visit ``k``.

    Returns ``(failed, failure_time, u_y)``.  ``p_cat`` is ``P(Y=0 | H=h)``
    and is only used by the odds-ratio construction.
    """
    if prog.discrete == 2:
        uy = ndtr(e1)
        failed = uy < p_cat
        log1m = math.log1p(-g * uy / p_cat) if failed else 0.0
    else:
        rho = prog.rho[k]
        zy = rho * ndtri(u1) + math.sqrt(1.0 - rho * rho) * e1
        failed = zy < ndtri(g)
        uy = ndtr(zy)
        log1m = math.log(ndtr_upper(zy))
    t = np.inf
    if failed:
        if prog.continuous_time == 1:
            frac = log1m / math.log1p(-g)
            if frac > 1.0:
                frac = 1.0
            if not frac > 0.0:
                frac = np.nextafter(0.0, 1.0)
            t = k + frac
        else:
            t = k + 1.0
    return failed, t, uy


@numba.njit(cache=True)
def _category_fail_probs(prog, H, m, g, p0):
    """P(Y=0 | H=h) for the odds-ratio construction; returns False on bad scores."""
    J = prog.odds_ratios.shape[0] + 1
    counts = np.zeros(J)
    for j in range(m):
        h = H[j]
        if h != math.floor(h) or h < 0 or h >= J:
            return False
        counts[int(h)] += 1.0
    mh = counts / m
    t = np.ones((2, J))
    for j in range(1, J):
        t[1, j] = prog.odds_ratios[j - 1]
    rows0 = g
    rows1 = 1.0 - g
    for it in range(10000):
        s0 = 0.0
        s1 = 0.0
        for j in range(J):
            s0 += t[0, j]
            s1 += t[1, j]
        for j in range(J):
            if s0 > 0.0:
                t[0, j] *= rows0 / s0
            if s1 > 0.0:
                t[1, j] *= rows1 / s1
        err = 0.0
        for j in range(J):
            s = t[0, j] + t[1, j]
            if s > 0.0:
                t[0, j] *= mh[j] / s
                t[1, j] *= mh[j] / s
        s0 = 0.0
        s1 = 0.0
        for j in range(J):
            s0 += t[0, j]
            s1 += t[1, j]
        err = max(abs(s0 - rows0), abs(s1 - rows1))
        if err < 1e-10:
            break
    for j in range(J):
        s = t[0, j] + t[1, j]
        p0[j] = t[0, j] / s if s > 0.0 else g
    return True


@numba.njit(cache=True)
def _pass(prog, m, has_slot, kstar, thr, allow_restart, forced, regime, x_vals,
          slot_n, slot_u, trt_n, trt_u, lat_w, lat_e, pool_n, pool_u, pos,
          out_xb, out_l, out_a, out_uh, out_i, out_f, H_rec, U_rec):
    """One pass of the pool algorithm with ``m`` members.

    With ``has_slot`` the sampled individual occupies column 0; visits up to
    ``kstar`` replay the retained slot-1 history (restart), later visits draw
    it.  Without ``has_slot`` every column is an interventional trajectory
    under ``regime`` and baseline ``x_vals`` (CDF pre-estimation).
    """
    K = prog.K
    nx = prog.nx
    nb = prog.nb
    nl = prog.nl
    first = 1 if has_slot else 0
    S = np.zeros((prog.P, m))
    for j in range(m):
        S[0, j] = 1.0
    for v in range(nx):
        val = out_xb[v] if has_slot else x_vals[v]
        for j in range(m):
            S[prog.i_x + v, j] = val
    tmp = np.empty(m)
    H = np.empty(m)
    rank = np.empty(m, dtype=np.int64)
    failed = np.zeros(m, dtype=np.bool_)
    label = np.arange(m)
    cnt = np.ones(m, dtype=np.int64)
    distinct = m - first
    surv = np.empty(m, dtype=np.int64)
    J = prog.odds_ratios.shape[0] + 1
    p0 = np.empty(J)
    rec_h = H_rec.shape[0] > 0 and H_rec.shape[1] == m
    rec_u = U_rec.shape[0] > 0 and U_rec.shape[1] == m

    if pos[0] + m * nb > pool_n.shape[0] or pos[1] + m * nb > pool_u.shape[0]:
        out_i[I_NEED_N] = pos[0] + m * (nb + (K + 1) * (nl + 1))
        out_i[I_NEED_U] = pos[1] + m * (nb + (K + 1) * (nl + 3))
        out_i[I_STATUS] = NEED_MORE
        return
    for v in range(nb):
        eval_lp(prog, prog.b_lp[v], 0, S, m, tmp)
        t = prog.i_b + v
        kind = prog.b_kind[v]
        sd = prog.b_sd[v]
        if has_slot:
            S[t, 0] = out_xb[nx + v]
        for j in range(first, m):
            if kind == 0:
                S[t, j] = tmp[j] + sd * pool_n[pos[0]]
                pos[0] += 1
            else:
                S[t, j] = 1.0 if pool_u[pos[1]] < expit(tmp[j]) else 0.0
                pos[1] += 1

    for k in range(K + 1):
        need_n = m * (nl + 1)
        need_u = m * (nl + 3)
        if pos[0] + need_n > pool_n.shape[0] or pos[1] + need_u > pool_u.shape[0]:
            out_i[I_NEED_N] = pos[0] + need_n * (K + 1 - k)
            out_i[I_NEED_U] = pos[1] + need_u * (K + 1 - k)
            out_i[I_STATUS] = NEED_MORE
            return
        for j in range(m):
            S[prog.i_k, j] = k
        if k > 0:
            a_prev = out_a[k - 1] if has_slot else regime[k - 1]
            for v in range(nl):
                for j in range(m):
                    S[prog.i_llag + v, j] = S[prog.i_l + v, j]
            for j in range(m):
                S[prog.i_alag, j] = a_prev
        for v in range(nl):
            if k == 0:
                kind = prog.l0_kind[v]
                lp = prog.l0_lp[v]
                sd = prog.l0_sd[v]
            else:
                kind = prog.l_kind[v]
                lp = prog.l_lp[v]
                sd = prog.l_sd[v]
            eval_lp(prog, lp, k, S, m, tmp)
            t = prog.i_l + v
            if has_slot:
                if k > kstar:
                    idx = nx + nb + k * nl + v
                    out_l[k, v] = draw_value(kind, tmp[0], sd, slot_n[idx], slot_u[idx])
                S[t, 0] = out_l[k, v]
            for j in range(first, m):
                if kind == 0:
                    S[t, j] = tmp[j] + sd * pool_n[pos[0]]
                    pos[0] += 1
                else:
                    S[t, j] = 1.0 if pool_u[pos[1]] < expit(tmp[j]) else 0.0
                    pos[1] += 1
        if has_slot:
            if k > kstar:
                if forced:
                    out_a[k] = regime[k]
                else:
                    eval_lp(prog, prog.trt_lp, k, S, 1, tmp)
                    if prog.trt_kind == 1:
                        out_a[k] = 1.0 if trt_u[k] < expit(tmp[0]) else 0.0
                    else:
                        out_a[k] = tmp[0] + prog.trt_sd * trt_n[k]
            a = out_a[k]
        else:
            a = regime[k]
        for j in range(m):
            S[prog.i_a, j] = a

        score_members(prog, k, S, m, H)
        for j in range(m):
            if not math.isfinite(H[j]):
                out_i[I_BAD_VISIT] = k
                out_i[I_STATUS] = BAD_SCORE
                return
        eval_lp(prog, prog.msm_lp, k, S, 1, tmp)
        g, ok = link_g(prog.link, tmp[0])
        if not ok:
            out_i[I_BAD_VISIT] = k
            out_i[I_STATUS] = BAD_HAZARD
            return
        rank_members(H, m, rank, pool_u, pos)
        if rec_h:
            for j in range(m):
                H_rec[k, j] = H[j]
        rho = prog.rho[k]
        s = math.sqrt(1.0 - rho * rho)
        zg = ndtri(g)
        if prog.discrete == 2:
            if not _category_fail_probs(prog, H, m, g, p0):
                out_i[I_BAD_VISIT] = k
                out_i[I_STATUS] = BAD_SCORE
                return
        for j in range(first, m):
            u = clamp_u((rank[j] - pool_u[pos[1]]) / m)
            pos[1] += 1
            e = pool_n[pos[0]]
            pos[0] += 1
            if prog.discrete == 2:
                failed[j] = ndtr(e) < p0[int(H[j])]
            else:
                failed[j] = rho * ndtri(u) + s * e < zg
            if rec_u:
                U_rec[k, j] = u
        if has_slot and k > kstar:
            u1 = clamp_u((rank[0] - lat_w[k]) / m)
            out_uh[k] = u1
            if rec_u:
                U_rec[k, 0] = u1
            pc = p0[int(H[0])] if prog.discrete == 2 else 0.0
            fail1, t1, uy = slot_outcome(prog, k, u1, lat_e[k], g, pc)
            if fail1:
                out_i[I_FAIL_VISIT] = k
                out_f[F_UY] = uy
                out_f[F_G] = g
                out_f[F_TIME] = t1
                out_i[I_STATUS] = OK
                return
        if k == K:
            if has_slot:
                out_i[I_FAIL_VISIT] = -1
                out_f[F_TIME] = np.inf
            out_i[I_STATUS] = OK
            return
        ns = 0
        for j in range(first, m):
            if not failed[j]:
                surv[ns] = j
                ns += 1
        if ns == 0:
            out_i[I_BAD_VISIT] = k
            out_i[I_STATUS] = EXHAUSTED
            return
        for j in range(first, m):
            if failed[j]:
                r = surv[min(int(pool_u[pos[1]] * ns), ns - 1)]
                pos[1] += 1
                for p in range(prog.P):
                    S[p, j] = S[p, r]
                old = label[j]
                cnt[old] -= 1
                if cnt[old] == 0:
                    distinct -= 1
                new = label[r]
                label[j] = new
                cnt[new] += 1
                failed[j] = False
        if has_slot and allow_restart and k > kstar and distinct <= thr:
            out_i[I_RESTART_K] = k
            out_i[I_STATUS] = RESTART
            return
    out_i[I_STATUS] = OK


@numba.njit(cache=True)
def slot_baseline(prog, S1, slot_n, slot_u, out_xb):
    """Draw slot-1 x and b into the one-column state ``S1`` and ``out_xb``."""
    tmp = np.empty(1)
    S1[0, 0] = 1.0
    for v in range(prog.nx):
        eval_lp(prog, prog.x_lp[v], 0, S1, 1, tmp)
        val = draw_value(prog.x_kind[v], tmp[0], prog.x_sd[v], slot_n[v], slot_u[v])
        S1[prog.i_x + v, 0] = val
        out_xb[v] = val
    for v in range(prog.nb):
        idx = prog.nx + v
        eval_lp(prog, prog.b_lp[v], 0, S1, 1, tmp)
        val = draw_value(prog.b_kind[v], tmp[0], prog.b_sd[v], slot_n[idx], slot_u[idx])
        S1[prog.i_b + v, 0] = val
        out_xb[idx] = val


@numba.njit(cache=True)
def run_matched(prog, m0, thr, restart_m, max_restarts, forced, regime,
                slot_n, slot_u, trt_n, trt_u, lat_w, lat_e, pool_n, pool_u,
                out_xb, out_l, out_a, out_uh, out_i, out_f, U_rec):
    """Simulate one sampled individual with the match-pool algorithm."""
    K = prog.K
    S1 = np.zeros((prog.P, 1))
    slot_baseline(prog, S1, slot_n, slot_u, out_xb)
    for k in range(K + 1):
        out_a[k] = np.nan
        out_uh[k] = np.nan
        for v in range(prog.nl):
            out_l[k, v] = np.nan
    out_i[:] = 0
    out_f[:] = 0.0
    pos = np.zeros(2, dtype=np.int64)
    empty_x = np.zeros(0)
    empty_rec = np.zeros((0, 0))
    kstar = -1
    m = m0
    restarts = 0
    while True:
        allow = restarts <= max_restarts
        _pass(prog, m, True, kstar, thr, allow, forced, regime, empty_x,
              slot_n, slot_u, trt_n, trt_u, lat_w, lat_e, pool_n, pool_u, pos,
              out_xb, out_l, out_a, out_uh, out_i, out_f, empty_rec, U_rec)
        if out_i[I_STATUS] == RESTART:
            need_n = pos[0] + restart_m * (prog.nb + (K + 1) * (prog.nl + 1))
            need_u = pos[1] + restart_m * (prog.nb + (K + 1) * (prog.nl + 3))
            if need_n > pool_n.shape[0] or need_u > pool_u.shape[0]:
                out_i[I_NEED_N] = need_n
                out_i[I_NEED_U] = need_u
                out_i[I_STATUS] = NEED_MORE
                return
            kstar = out_i[I_RESTART_K]
            m = restart_m
            restarts += 1
            continue
        out_i[I_RESTARTS] = restarts
        return


@numba.njit(cache=True)
def run_pool_cdf(prog, m, x_vals, regime, pool_n, pool_u, out_i, H_rec):
    """Interventional pool under a fixed regime, recording scores per visit."""
    K = prog.K
    pos = np.zeros(2, dtype=np.int64)
    e1 = np.zeros(0)
    e2 = np.zeros((0, 0))
    out_l = np.zeros((K + 1, prog.nl))
    out_a = np.zeros(K + 1)
    out_f = np.zeros(F_LEN)
    out_i[:] = 0
    _pass(prog, m, False, -1, 0, False, True, regime, x_vals,
          e1, e1, e1, e1, e1, e1, pool_n, pool_u, pos,
          e1, out_l, out_a, e1, out_i, out_f, H_rec, e2)


@numba.njit(cache=True)
def slot_visit(prog, k, S1, forced, regime, slot_n, slot_u, trt_n, trt_u, out_l, out_a, tmp):
    """Advance a single individual to visit ``k``: draw l, a; return (h, g, ok)."""
    nl = prog.nl
    S1[prog.i_k, 0] = k
    if k > 0:
        for v in range(nl):
            S1[prog.i_llag + v, 0] = S1[prog.i_l + v, 0]
        S1[prog.i_alag, 0] = out_a[k - 1]
    for v in range(nl):
        if k == 0:
            kind = prog.l0_kind[v]
            lp = prog.l0_lp[v]
            sd = prog.l0_sd[v]
        else:
            kind = prog.l_kind[v]
            lp = prog.l_lp[v]
            sd = prog.l_sd[v]
        eval_lp(prog, lp, k, S1, 1, tmp)
        idx = prog.nx + prog.nb + k * nl + v
        val = draw_value(kind, tmp[0], sd, slot_n[idx], slot_u[idx])
        S1[prog.i_l + v, 0] = val
        out_l[k, v] = val
    if forced:
        a = regime[k]
    else:
        eval_lp(prog, prog.trt_lp, k, S1, 1, tmp)
        if prog.trt_kind == 1:
            a = 1.0 if trt_u[k] < expit(tmp[0]) else 0.0
        else:
            a = tmp[0] + prog.trt_sd * trt_n[k]
    out_a[k] = a
    S1[prog.i_a, 0] = a
    score_members(prog, k, S1, 1, tmp)
    h = tmp[0]
    eval_lp(prog, prog.msm_lp, k, S1, 1, tmp)
    g, ok = link_g(prog.link, tmp[0])
    return h, g, ok
