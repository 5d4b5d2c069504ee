"""Scalar numerical building blocks.

Standard-normal CDF and quantile, the Gaussian-copula conditional failure
probability and sampler, rank-jitter risk quantiles, and the two constructions
available when the risk score is discrete (a "modified copula" that spreads a
discrete score uniformly over its CDF step, and a 2 x J contingency table
built from marginals and odds ratios).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numba
import numpy as np

from . import _normal
from .errors import ConvergenceError, DomainError

#: Half machine epsilon; risk quantiles are clamped to [HALF_EPS, 1 - HALF_EPS].
HALF_EPS = np.finfo(float).eps / 2.0

IPF_MAX_ITER = 10_000
IPF_TOL = 1e-10


def std_normal_cdf(z):
    """Standard-normal CDF, elementwise.

    Parameters
    ----------
    z : float or array_like

    Returns
    -------
    float or ndarray
    """
    out = _normal.ndtr_vec(np.asarray(z, dtype=float))
    return out if np.ndim(out) else float(out)


def std_normal_quantile(p):
    """Standard-normal quantile function, elementwise.

    Uses a rational approximation with one Halley refinement step, giving
    close to full double precision on (1e-300, 1 - 1e-16).

    Raises
    ------
    DomainError
        If any ``p`` is not strictly inside (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise DomainError("normal quantile requires probabilities strictly inside (0, 1)")
    out = _normal.ndtri_vec(arr)
    return out if np.ndim(out) else float(out)


def clamp_quantile(u):
    """Clamp risk quantiles into [HALF_EPS, 1 - HALF_EPS]."""
    return np.clip(u, HALF_EPS, 1.0 - HALF_EPS)


def _check_rho(rho):
    if not (-1.0 < rho < 1.0):
        raise DomainError(f"copula correlation must lie in (-1, 1), got {rho!r}")


def copula_conditional_failure_prob(g, rho, u_h):
    """Probability of failure given the risk quantile under the Gaussian copula.

    ``P(U_Y < g | U_H = u_h) = Phi((Phi^-1(g) - rho Phi^-1(u_h)) / sqrt(1 - rho^2))``.

    Parameters
    ----------
    g : float or array_like
        Marginal failure probability, in (0, 1).
    rho : float
        Copula correlation.  The simulation only uses ``-1 < rho <= 0``; positive
        values are accepted here so that sign errors can be studied.
    u_h : float or array_like
        Risk quantile in (0, 1); clamped by half machine epsilon.

    Returns
    -------
    float or ndarray
    """
    _check_rho(rho)
    g = np.asarray(g, dtype=float)
    if np.any(~((g > 0.0) & (g < 1.0))):
        raise DomainError("g must lie strictly inside (0, 1)")
    u = np.asarray(u_h, dtype=float)
    if np.any(~((u >= 0.0) & (u <= 1.0))):
        raise DomainError("u_h must lie in [0, 1]")
    z = (_normal.ndtri_vec(g) - rho * _normal.ndtri_vec(clamp_quantile(u))) / math.sqrt(1.0 - rho * rho)
    out = _normal.ndtr_vec(z)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class CopulaDraw:
    """One draw of the latent failure variable.

    Attributes
    ----------
    z_h : float
        Probit of the risk quantile.
    z_y : float
        Draw from ``Normal(rho * z_h, 1 - rho^2)``.
    u_y : float
        ``Phi(z_y)``; the individual fails in the interval when ``u_y < g``.
    """

    z_h: float
    z_y: float
    u_y: float


def copula_sample(rho: float, u_h: float, rng: np.random.Generator) -> CopulaDraw:
    """Draw the failure-determining uniform given a risk quantile."""
    _check_rho(rho)
    if not 0.0 <= u_h <= 1.0:
        raise DomainError("u_h must lie in [0, 1]")
    z_h = float(_normal.ndtri(float(clamp_quantile(u_h))))
    z_y = rho * z_h + math.sqrt(1.0 - rho * rho) * rng.standard_normal()
    return CopulaDraw(z_h=z_h, z_y=z_y, u_y=float(_normal.ndtr(z_y)))


def copula_total_probability(g: float, rho: float) -> float:
    """Integrate the conditional failure probability over a uniform risk quantile.

    The integrand is smooth in probit space, so the integral is computed as
    ``E[p(Phi(Z))]`` with ``Z`` standard normal using adaptive quadrature.
    Equals ``g`` for every ``rho``, which is why the MSM holds marginally.
    """
    from scipy import integrate

    _check_rho(rho)
    s = math.sqrt(1.0 - rho * rho)
    zg = float(_normal.ndtri(g))

    def integrand(z):
        return float(_normal.ndtr((zg - rho * z) / s)) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

    val, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


def ranks_with_random_ties(scores, rng: np.random.Generator) -> np.ndarray:
    """1-based ranks with ties broken uniformly at random.

    The scores are permuted at random before a stable sort, so tied scores end
    up in uniformly random relative order.
    """
    scores = np.asarray(scores, dtype=float)
    m = scores.shape[0]
    perm = rng.permutation(m)
    order = perm[np.argsort(scores[perm], kind="stable")]
    ranks = np.empty(m, dtype=np.int64)
    ranks[order] = np.arange(1, m + 1)
    return ranks


def rank_jitter_quantiles(scores, rng: np.random.Generator) -> np.ndarray:
    """Risk quantiles ``U_j = (R_j - W_j) / m`` from ranks plus uniform jitter.

    Parameters
    ----------
    scores : array_like, shape (m,)
    rng : numpy.random.Generator

    Returns
    -------
    ndarray, shape (m,)
        Values in (0, 1).  Uniform(0, 1) marginally whenever the scores are
        exchangeable.
    """
    scores = np.asarray(scores, dtype=float)
    m = scores.shape[0]
    if m < 1:
        raise DomainError("need at least one score")
    ranks = ranks_with_random_ties(scores, rng)
    w = rng.random(m)
    return clamp_quantile((ranks - w) / m)


def discrete_quantile_option1(score_value: int, cdf_at: Callable[[int], float],
                              rng: np.random.Generator) -> float:
    """Risk quantile for a discrete score: uniform over the CDF step at ``h``.

    Parameters
    ----------
    score_value : int
        Observed score ``h``.
    cdf_at : callable
        ``cdf_at(j)`` returns ``F(j) = P(H <= j)``.  ``F(h - 1)`` is read as 0
        below the support.
    rng : numpy.random.Generator

    Returns
    -------
    float
        A draw from ``Uniform(F(h - 1), F(h))``.
    """
    lo = float(cdf_at(score_value - 1))
    hi = float(cdf_at(score_value))
    if not hi > lo:
        raise DomainError(f"score {score_value} has zero probability (F(h-1)={lo}, F(h)={hi})")
    return float(clamp_quantile(lo + (hi - lo) * rng.random()))


@numba.njit(cache=True)
def _ipf_table(marginal_y, marginals_h, odds_ratios, max_iter, tol):
    # Row 0 is Y = 0 (failure), row 1 is Y = 1 (survival).  Seeding the table
    # with (1, OR_j) in column j fixes every odds ratio relative to column 0;
    # proportional row/column scaling preserves them.
    J = marginals_h.shape[0]
    t = np.ones((2, J))
    for j in range(1, J):
        t[1, j] = odds_ratios[j - 1]
    rows = np.array([marginal_y, 1.0 - marginal_y])
    for it in range(max_iter):
        for y in range(2):
            s = t[y, :].sum()
            if s > 0.0:
                for j in range(J):
                    t[y, j] *= rows[y] / s
        for j in range(J):
            s = t[0, j] + t[1, j]
            if s > 0.0:
                t[0, j] *= marginals_h[j] / s
                t[1, j] *= marginals_h[j] / s
        err = 0.0
        for y in range(2):
            err = max(err, abs(t[y, :].sum() - rows[y]))
        for j in range(J):
            err = max(err, abs(t[0, j] + t[1, j] - marginals_h[j]))
        if err < tol:
            return t, it + 1
    return t, -1


def _plackett_cell(p_y0: float, p_h0: float, psi: float) -> float:
    """Solve for ``p00`` in a 2 x 2 table with given margins and odds ratio.

    With ``a = P(Y=0, H=0)`` the odds ratio ``psi = P11 P00 / (P10 P01)``
    (rows Y, columns H) gives a quadratic in ``a``; the admissible root is the
    one inside the Frechet bounds.
    """
    r, c = p_y0, p_h0
    if psi == 1.0:
        return r * c
    # psi (r - a)(c - a) = a (1 - r - c + a)
    A = psi - 1.0
    B = -(psi * (r + c) + 1.0 - r - c)
    C = psi * r * c
    disc = B * B - 4.0 * A * C
    root = math.sqrt(max(disc, 0.0))
    lo = max(0.0, r + c - 1.0)
    hi = min(r, c)
    best = None
    for a in ((-B - root) / (2.0 * A), (-B + root) / (2.0 * A)):
        if lo - 1e-15 <= a <= hi + 1e-15:
            best = min(max(a, lo), hi)
    if best is None:  # pragma: no cover - guarded by the Frechet argument
        raise ConvergenceError("no admissible root for the 2x2 table")
    return best


def odds_ratio_table_option2(marginal_y: float, marginals_h: Sequence[float],
                             odds_ratios: Sequence[float]) -> np.ndarray:
    """Build the 2 x J table of ``P(Y = y, H = j | X)`` from margins and odds ratios.

    Parameters
    ----------
    marginal_y : float
        ``P(Y = 0 | X)``, the failure probability; row 0 of the table.
    marginals_h : sequence of float, length J
        ``P(H = j | X, survivors)``.
    odds_ratios : sequence of float, length J - 1
        ``OR_j = [P(Y=1|H=j) / P(Y=0|H=j)] / [P(Y=1|H=0) / P(Y=0|H=0)]``
        for ``j = 1..J-1``.

    Returns
    -------
    ndarray, shape (2, J)
        Closed form for J = 2, iterative proportional fitting otherwise.

    Raises
    ------
    DomainError
        Invalid margins or non-positive odds ratios.
    ConvergenceError
        IPF did not reach a marginal discrepancy of 1e-10 within 10^4 sweeps.
    """
    mh = np.asarray(marginals_h, dtype=float)
    ors = np.asarray(odds_ratios, dtype=float)
    J = mh.shape[0]
    if J < 1 or ors.shape[0] != J - 1:
        raise DomainError("need J >= 1 score categories and J - 1 odds ratios")
    if not 0.0 <= marginal_y <= 1.0 or np.any(mh < 0) or abs(mh.sum() - 1.0) > 1e-9:
        raise DomainError("marginals must be probabilities summing to one")
    if np.any(~(ors > 0)):
        raise DomainError("odds ratios must be positive")
    if J == 1:
        return np.array([[marginal_y], [1.0 - marginal_y]])
    if J == 2 and 0.0 < marginal_y < 1.0 and 0.0 < mh[0] < 1.0:
        # The odds ratio convention above, for a 2x2 table with rows (Y=0, Y=1)
        # and columns (H=0, H=1), is p11 p00 / (p10 p01).
        a = _plackett_cell(marginal_y, mh[0], float(ors[0]))
        return np.array([[a, marginal_y - a], [mh[0] - a, 1.0 - marginal_y - mh[0] + a]])
    table, iters = _ipf_table(float(marginal_y), mh, ors, IPF_MAX_ITER, IPF_TOL)
    if iters < 0:
        raise ConvergenceError(f"IPF did not converge in {IPF_MAX_ITER} iterations")
    return table


def conditional_failure_from_table(table, h: int) -> float:
    """``P(Y = 0 | H = h)`` from a 2 x J table."""
    t = np.asarray(table, dtype=float)
    col = t[0, h] + t[1, h]
    if not col > 0.0:
        raise DomainError(f"score category {h} has zero probability mass")
    return float(t[0, h] / col)
