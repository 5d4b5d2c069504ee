"""Verification harness: person-period data, pooled binary regression and IPTW.

The discrete-time hazard of failure in ``(k, k+1]`` is fitted as a pooled
binary regression over person-period rows.  A logit link recovers a
logistic MSM; a complementary log-log link with one intercept per visit
recovers a Cox-type MSM with piecewise-constant baseline hazard (the
intercepts estimate ``log lambda_k0``).

Bootstrap resampling of individuals is implemented through integer
frequency weights, which give exactly the same estimates as physically
replicating the resampled individuals' rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from . import rng as rngmod
from .engine import STATUS_OK, Cohort
from .errors import (ConvergenceError, DomainError, MsmSimError, RankDeficientError,
                     SchemaMismatchError, SeparationError, UnreliableIntervalError)
from .scenario import ScenarioSpec, split_term

LINKS = ("logit", "cloglog")
SEPARATION_BOUND = 30.0
SCORE_TOL = 1e-8
DEVIANCE_TOL = 1e-10
PROB_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Person-period data
# ---------------------------------------------------------------------------

@dataclass
class PersonPeriodTable:
    """Long-format data: one row per individual and visit while at risk.

    ``frame`` has columns ``id, k, y, <x names>, <b names>, <l names>, a,
    weight, t_event, censored``.  Row ``(i, k)`` is present when individual
    ``i`` is alive at ``k`` and either still uncensored at ``k + 1`` or fails
    in ``(k, k+1]`` before being censored; ``y`` is 1 for failure in
    ``(k, k+1]``.  Rows of each individual are contiguous and start at
    ``k = 0``.

    ``terms`` and ``visit_intercepts`` are the default regression basis used
    by :meth:`design`.
    """

    frame: pd.DataFrame
    x_names: tuple
    b_names: tuple
    l_names: tuple
    K: int
    terms: tuple = ()
    visit_intercepts: str = "per-visit"

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def ids(self) -> np.ndarray:
        return self.frame["id"].to_numpy()

    @property
    def y(self) -> np.ndarray:
        return self.frame["y"].to_numpy(dtype=float)

    @property
    def weight(self) -> np.ndarray:
        return self.frame["weight"].to_numpy(dtype=float)

    def with_weights(self, w: np.ndarray) -> "PersonPeriodTable":
        w = np.asarray(w, dtype=float)
        if w.shape != (len(self),) or np.any(~(w > 0)):
            raise DomainError("weights must be positive, one per row")
        frame = self.frame.copy()
        frame["weight"] = w
        return replace(self, frame=frame)

    def column(self, name: str, lag: int = 0) -> np.ndarray:
        """Values of a variable (``k``, ``a`` or a covariate), optionally lagged by one visit.

        The lag at ``k = 0`` is 0.
        """
        if name not in self.frame.columns:
            raise SchemaMismatchError(f"unknown variable {name!r}; table columns: {list(self.frame.columns)}")
        v = self.frame[name].to_numpy(dtype=float)
        if not lag:
            return v
        prev = np.empty_like(v)
        prev[0] = 0.0
        prev[1:] = v[:-1]
        return np.where(self.frame["k"].to_numpy() == 0, 0.0, prev)

    def term(self, expr: str) -> np.ndarray:
        """Evaluate a product term such as ``"x1*a"`` or ``"a*k"``."""
        out = np.ones(len(self))
        for name, lag in split_term(expr.replace(" ", "")):
            out = out * self.column(name, lag)
        return out

    def design(self, terms: Sequence[str] | None = None,
               visit_intercepts: str | None = None) -> tuple[np.ndarray, list[str]]:
        """Design matrix and column names.

        Parameters
        ----------
        terms : sequence of str, optional
            Product terms (default ``self.terms``).
        visit_intercepts : {"per-visit", "shared"}, optional
            One intercept per visit present in the table, or a single one.
        """
        terms = self.terms if terms is None else tuple(terms)
        mode = self.visit_intercepts if visit_intercepts is None else visit_intercepts
        k = self.frame["k"].to_numpy()
        cols, names = [], []
        if mode == "per-visit":
            for v in np.unique(k):
                cols.append((k == v).astype(float))
                names.append(f"visit{int(v)}")
        elif mode == "shared":
            cols.append(np.ones(len(self)))
            names.append("intercept")
        else:
            raise DomainError(f"visit_intercepts must be 'per-visit' or 'shared', got {mode!r}")
        for t in terms:
            cols.append(self.term(t))
            names.append(t.replace(" ", ""))
        return np.column_stack(cols) if cols else np.zeros((len(self), 0)), names


PP_BASE_COLUMNS = ("id", "k", "y")
PP_TAIL_COLUMNS = ("a", "weight", "t_event", "censored")


def person_period_mask(failure_time: np.ndarray, censor_time: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusion mask and outcome for the ``(n, K+1)`` individual-visit grid.

    Returns
    -------
    include, outcome : ndarray of bool, shape (n, K+1)
    """
    T = np.asarray(failure_time, dtype=float)[:, None]
    C = np.asarray(censor_time, dtype=float)[:, None]
    k = np.arange(K + 1, dtype=float)[None, :]
    include = (np.minimum(T, C) > k) & ((C >= k + 1) | (T <= C))
    outcome = include & (T <= k + 1) & (T <= C)
    return include, outcome


def expand_person_period(cohort: Cohort, msm_terms: Sequence[str] = (),
                         visit_intercepts: str = "per-visit") -> PersonPeriodTable:
    """Expand a cohort into person-period rows.

    Individuals whose match pool was exhausted (recorded rather than raised)
    are dropped with a warning.

    Examples
    --------
    An individual failing at time 2.4 gives rows ``k = 0, 1, 2`` with
    outcomes ``0, 0, 1``; one censored at 1.5 gives the single row
    ``k = 0`` with outcome 0.
    """
    spec = cohort.spec
    ok = cohort.status == STATUS_OK
    if not np.all(ok):
        warnings.warn(f"dropping {int((~ok).sum())} individuals with exhausted match pools", stacklevel=2)
        cohort = cohort.take(np.flatnonzero(ok))
    K = cohort.K
    include, outcome = person_period_mask(cohort.failure_time, cohort.censor_time, K)
    ii, kk = np.nonzero(include)          # row-major: grouped by individual, k ascending
    data = {"id": cohort.ids[ii].astype(np.int64), "k": kk.astype(np.int64),
            "y": outcome[ii, kk].astype(np.int64)}
    for j, name in enumerate(spec.x_names):
        data[name] = cohort.x[ii, j]
    for j, name in enumerate(spec.b_names):
        data[name] = cohort.b[ii, j]
    for j, name in enumerate(spec.l_names):
        data[name] = cohort.l[ii, kk, j]
    data["a"] = cohort.a[ii, kk]
    data["weight"] = np.ones(ii.shape[0])
    data["t_event"] = cohort.observed_time[ii]
    data["censored"] = (~cohort.event[ii]).astype(np.int64)
    frame = pd.DataFrame(data)
    return PersonPeriodTable(frame, tuple(spec.x_names), tuple(spec.b_names), tuple(spec.l_names), K,
                             tuple(msm_terms), visit_intercepts)


def table_from_frame(frame: pd.DataFrame, x_names: Sequence[str], b_names: Sequence[str],
                     l_names: Sequence[str], K: int | None = None, terms: Sequence[str] = (),
                     visit_intercepts: str = "per-visit") -> PersonPeriodTable:
    """Wrap an existing person-period frame after checking its columns and row order."""
    need = list(PP_BASE_COLUMNS) + list(x_names) + list(l_names) + ["a"]
    missing = [c for c in need if c not in frame.columns]
    if missing:
        raise SchemaMismatchError(f"person-period data lacks columns {missing}; found {list(frame.columns)}")
    frame = frame.sort_values(["id", "k"], kind="stable").reset_index(drop=True)
    ids = frame["id"].to_numpy()
    k = frame["k"].to_numpy()
    first = np.r_[True, ids[1:] != ids[:-1]]
    expect = np.where(first, 0, np.r_[0, k[:-1] + 1])
    if np.any(k != expect):
        raise SchemaMismatchError("each individual's rows must cover visits 0, 1, ... without gaps")
    if "weight" not in frame.columns:
        frame = frame.assign(weight=1.0)
    K = int(k.max()) if K is None else int(K)
    return PersonPeriodTable(frame, tuple(x_names), tuple(b for b in b_names if b in frame.columns),
                             tuple(l_names), K, tuple(terms), visit_intercepts)


# ---------------------------------------------------------------------------
# Pooled binary regression
# ---------------------------------------------------------------------------

def _mean_and_deriv(eta: np.ndarray, link: str) -> tuple[np.ndarray, np.ndarray]:
    if link == "logit":
        mu = 1.0 / (1.0 + np.exp(-eta))
        return mu, mu * (1.0 - mu)
    e = np.exp(np.minimum(eta, 700.0))
    mu = -np.expm1(-e)
    return mu, e * np.exp(-e)


def _deviance(y, mu, w) -> float:
    mu = np.clip(mu, 1e-300, 1.0 - 1e-16)
    return float(-2.0 * np.sum(w * (y * np.log(mu) + (1.0 - y) * np.log1p(-mu))))


def _row_scores(X, y, w, eta, link) -> np.ndarray:
    """Per-row weighted score contributions ``w (y - mu) mu' / V x``."""
    mu, d = _mean_and_deriv(eta, link)
    var = np.clip(mu * (1.0 - mu), 1e-300, None)
    return X * (w * (y - mu) * d / var)[:, None]


def _information(X, w, eta, link) -> np.ndarray:
    mu, d = _mean_and_deriv(eta, link)
    var = np.clip(mu * (1.0 - mu), 1e-300, None)
    W = w * d * d / var
    return (X * W[:, None]).T @ X


@dataclass
class FitResult:
    """Pooled binary regression fit.

    Attributes
    ----------
    names : list of str
    coef : ndarray
    cov_model : ndarray
        Inverse of the weighted expected information.
    cov_sandwich : ndarray or None
        Cluster-robust covariance (clusters are individuals).
    converged : bool
    n_iter : int
    loglik : float
        Weighted binomial log-likelihood.
    score_norm : float
        Euclidean norm of the weighted score at the estimate.
    """

    names: list
    coef: np.ndarray
    cov_model: np.ndarray
    cov_sandwich: np.ndarray | None
    converged: bool
    n_iter: int
    loglik: float
    score_norm: float
    link: str
    n_obs: int
    n_clusters: int = 0
    weights: np.ndarray | None = None

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def se(self, kind: str = "sandwich") -> np.ndarray:
        cov = self.cov_sandwich if kind == "sandwich" else self.cov_model
        if cov is None:
            raise DomainError(f"no {kind} covariance available")
        return np.sqrt(np.clip(np.diag(cov), 0.0, None))

    def conf_int(self, kind: str = "sandwich", z: float = 1.959963984540054) -> np.ndarray:
        se = self.se(kind)
        return np.column_stack([self.coef - z * se, self.coef + z * se])

    def to_frame(self) -> pd.DataFrame:
        out = pd.DataFrame({"parameter": self.names, "estimate": self.coef,
                            "se_model": self.se("model")})
        if self.cov_sandwich is not None:
            out["se_sandwich"] = self.se("sandwich")
        return out


def _check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    if X.shape[0] < X.shape[1]:
        raise RankDeficientError(f"{X.shape[0]} rows for {X.shape[1]} parameters")
    scale = np.sqrt(np.sum(X * X, axis=0))
    if np.any(scale == 0):
        bad = [n for n, s in zip(names, scale) if s == 0]
        raise RankDeficientError(f"design columns {bad} are identically zero")
    s = np.linalg.svd(X / scale, compute_uv=False)
    if s[-1] <= s[0] * 1e-10:
        raise RankDeficientError("design matrix does not have full column rank")


def irls(X: np.ndarray, y: np.ndarray, w: np.ndarray | None = None, link: str = "logit",
         start: np.ndarray | None = None, max_iter: int = 100,
         names: Sequence[str] | None = None, check_rank: bool = True) -> FitResult:
    """Maximise the weighted binomial log-likelihood by Fisher scoring.

    Converges when the score norm drops below 1e-8, or when the relative
    deviance change stays below 1e-10 for two consecutive iterations.  A
    step that increases the deviance is halved (up to 30 times).

    Raises
    ------
    RankDeficientError
        The design (restricted to rows with positive weight) is rank deficient.
    SeparationError
        A coefficient exceeds 30 in absolute value, or the outcome is constant.
    ConvergenceError
        Step-halving cannot reduce the deviance.
    """
    if link not in LINKS:
        raise DomainError(f"link must be one of {LINKS}, got {link!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(y.shape[0]) if w is None else np.asarray(w, dtype=float)
    names = list(names) if names is not None else [f"b{j}" for j in range(X.shape[1])]
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DomainError("weights must be finite and non-negative")
    keep = w > 0
    if not np.all(keep):
        X, y, w = X[keep], y[keep], w[keep]
    if check_rank:
        _check_rank(X, names)
    if np.all(y == 0) or np.all(y == 1):
        # The likelihood has no maximum; IRLS would stop on a tiny score long
        # before any coefficient reaches the separation bound.
        raise SeparationError(f"outcome is constant ({int(y[0])}) on all rows with positive weight")
    p = X.shape[1]
    if start is None:
        ybar = np.clip(np.sum(w * y) / np.sum(w), 1e-4, 1 - 1e-4)
        eta0 = np.log(ybar / (1 - ybar)) if link == "logit" else np.log(-np.log1p(-ybar))
        beta = np.linalg.lstsq(X, np.full(X.shape[0], eta0), rcond=None)[0]
    else:
        beta = np.asarray(start, dtype=float).copy()
    eta = X @ beta
    dev = _deviance(y, _mean_and_deriv(eta, link)[0], w)
    converged, small_steps, it = False, 0, 0
    score = _row_scores(X, y, w, eta, link).sum(axis=0)
    for it in range(1, max_iter + 1):
        info = _information(X, w, eta, link)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise RankDeficientError("weighted information matrix is singular") from exc
        t = 1.0
        for _ in range(31):
            new_beta = beta + t * step
            new_eta = X @ new_beta
            new_dev = _deviance(y, _mean_and_deriv(new_eta, link)[0], w)
            if np.isfinite(new_dev) and new_dev <= dev * (1 + 1e-12) + 1e-12:
                break
            t *= 0.5
        else:
            if np.max(np.abs(beta)) > SEPARATION_BOUND:
                raise SeparationError(_separation_message(names, beta))
            raise ConvergenceError("step-halving failed to reduce the deviance")
        rel = abs(dev - new_dev) / (abs(new_dev) + 0.1)
        beta, eta, dev = new_beta, new_eta, new_dev
        score = _row_scores(X, y, w, eta, link).sum(axis=0)
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError(_separation_message(names, beta))
        if np.linalg.norm(score) < SCORE_TOL:
            converged = True
            break
        small_steps = small_steps + 1 if rel < DEVIANCE_TOL else 0
        if small_steps >= 2:
            converged = True
            break
    info = _information(X, w, eta, link)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("weighted information matrix is singular") from exc
    cov = 0.5 * (cov + cov.T)
    return FitResult(names, beta, cov, None, converged, it, -0.5 * dev,
                     float(np.linalg.norm(score)), link, int(X.shape[0]))


def _separation_message(names, beta) -> str:
    j = int(np.argmax(np.abs(beta)))
    return (f"coefficient {names[j]!r} diverged to {beta[j]:.3g}; the outcome is (quasi-)separated "
            "by the design")


def sandwich_variance(X: np.ndarray, y: np.ndarray, w: np.ndarray | None, coef: np.ndarray,
                      link: str, clusters: np.ndarray | None = None) -> np.ndarray:
    """Cluster-robust covariance ``B M B``.

    ``B`` is the inverse weighted expected information and ``M`` the sum over
    clusters of outer products of cluster-summed weighted scores.  Without
    ``clusters`` every row is its own cluster.  Uncertainty from estimating
    the weights is not accounted for.

    Raises
    ------
    RankDeficientError
        The information matrix is singular.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(y.shape[0]) if w is None else np.asarray(w, dtype=float)
    eta = X @ np.asarray(coef, dtype=float)
    info = _information(X, w, eta, link)
    try:
        bread = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("weighted information matrix is singular") from exc
    U = _row_scores(X, y, w, eta, link)
    if clusters is not None:
        _, inv = np.unique(np.asarray(clusters), return_inverse=True)
        Uc = np.zeros((int(inv.max()) + 1 if inv.size else 0, X.shape[1]))
        np.add.at(Uc, inv, U)
        U = Uc
    meat = U.T @ U
    out = bread @ meat @ bread
    return 0.5 * (out + out.T)


def fit_pooled_binary(table: PersonPeriodTable, link: str = "logit", weights: np.ndarray | None = None,
                      terms: Sequence[str] | None = None, visit_intercepts: str | None = None,
                      sandwich: bool = True, start: np.ndarray | None = None) -> FitResult:
    """Fit the pooled discrete-time hazard model to a person-period table.

    Parameters
    ----------
    table : PersonPeriodTable
    link : {"logit", "cloglog"}
    weights : ndarray, optional
        Row weights (for example stabilised IPT weights).  Defaults to the
        table's ``weight`` column.
    terms, visit_intercepts
        Override the table's regression basis.
    sandwich : bool
        Also compute the cluster-robust covariance (clusters = individuals).
    """
    X, names = table.design(terms, visit_intercepts)
    w = table.weight if weights is None else np.asarray(weights, dtype=float)
    fit = irls(X, table.y, w, link, start=start, names=names)
    if sandwich:
        fit.cov_sandwich = sandwich_variance(X, table.y, w, fit.coef, link, table.ids)
        fit.n_clusters = int(np.unique(table.ids).shape[0])
    return fit


# ---------------------------------------------------------------------------
# Stabilised weights
# ---------------------------------------------------------------------------

def default_treatment_terms(table: PersonPeriodTable, spec: ScenarioSpec | None = None) -> tuple[list, list]:
    """Denominator and numerator treatment-model terms.

    The denominator uses ``X``, the observed ``B``, the current ``L`` and
    the previous treatment; the numerator keeps only ``X`` and the previous
    treatment.
    """
    if spec is not None:
        b_obs = [c.name for c in spec.baseline_b if c.observed]
    else:
        b_obs = list(table.b_names)
    b_obs = [b for b in b_obs if b in table.frame.columns]
    den = list(table.x_names) + b_obs + list(table.l_names) + ["a.lag1"]
    num = list(table.x_names) + ["a.lag1"]
    return den, num


@dataclass
class WeightModels:
    """Fitted treatment models and the resulting per-row weights."""

    weights: np.ndarray
    ratio: np.ndarray
    denominator: FitResult
    numerator: FitResult
    min_prob: float


def _realised_prob(X, coef, a) -> np.ndarray:
    p1 = 1.0 / (1.0 + np.exp(-(X @ coef)))
    return np.where(a == 1, p1, 1.0 - p1)


def _cumprod_by_visit(ratio: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Cumulative product within individuals (each block of rows starts at ``k = 0``)."""
    logs = np.log(ratio)
    cs = np.cumsum(logs)
    start = np.flatnonzero(k == 0)
    offset = np.zeros_like(cs)
    base = np.r_[0.0, cs[start[1:] - 1]] if start.size else np.zeros(0)
    lengths = np.diff(np.r_[start, len(k)])
    offset = np.repeat(base, lengths)
    return np.exp(cs - offset)


def truncate_weights(w: np.ndarray, percentiles: tuple[float, float],
                     mask: np.ndarray | None = None) -> np.ndarray:
    """Clip weights at the given percentiles (computed over ``mask`` rows)."""
    ref = w if mask is None else w[mask]
    lo, hi = np.percentile(ref, percentiles)
    return np.clip(w, lo, hi)


def _weights_from_designs(den, num, a, k, freq, start, truncate, check_rank=True) -> WeightModels:
    (Xd, nd), (Xn, nn) = den, num
    s = start or (None, None)
    fd = irls(Xd, a, freq, "logit", start=s[0], names=nd, check_rank=check_rank)
    fn = irls(Xn, a, freq, "logit", start=s[1], names=nn, check_rank=check_rank)
    if not (fd.converged and fn.converged):
        raise ConvergenceError("a treatment model did not converge")
    pd_ = _realised_prob(Xd, fd.coef, a)
    pn = _realised_prob(Xn, fn.coef, a)
    mask = None if freq is None else freq > 0
    sel = slice(None) if mask is None else mask
    min_prob = float(min(pd_[sel].min(), pn[sel].min())) if a.size else 1.0
    if min_prob < PROB_FLOOR:
        warnings.warn(f"fitted treatment probability {min_prob:.3g} is below {PROB_FLOOR:g}; "
                      "weights may be extreme (truncation is off unless requested)", stacklevel=3)
    ratio = pn / np.maximum(pd_, 1e-300)
    w = _cumprod_by_visit(ratio, k)
    if truncate is not None:
        w = truncate_weights(w, truncate, mask)
    return WeightModels(w, ratio, fd, fn, min_prob)


def stabilized_weights(table: PersonPeriodTable, denominator_terms: Sequence[str] | None = None,
                       numerator_terms: Sequence[str] | None = None, *,
                       freq: np.ndarray | None = None, truncate: tuple[float, float] | None = None,
                       return_models: bool = False):
    """Stabilised inverse-probability-of-treatment weights, one per row.

    Both treatment models are logistic regressions pooled over visits with a
    separate intercept for each visit and shared slopes.  The weight at
    visit ``k`` is the product over ``j <= k`` of the numerator over the
    denominator fitted probability of the realised treatment ``A_j``.

    Parameters
    ----------
    table : PersonPeriodTable
    denominator_terms, numerator_terms : sequence of str, optional
        Defaults from :func:`default_treatment_terms`.
    freq : ndarray, optional
        Row frequency weights used when fitting the treatment models.
    truncate : (float, float), optional
        Percentiles at which to clip the weights; off by default.
    return_models : bool
        Return a :class:`WeightModels` instead of the weight array.

    Warns
    -----
    UserWarning
        A fitted probability of the realised treatment is below 1e-12.
    """
    d_def, n_def = default_treatment_terms(table)
    den_terms = d_def if denominator_terms is None else list(denominator_terms)
    num_terms = n_def if numerator_terms is None else list(numerator_terms)
    a = table.column("a")
    if not np.all((a == 0) | (a == 1)):
        raise DomainError("stabilised weights need a binary treatment")
    res = _weights_from_designs(table.design(den_terms, "per-visit"), table.design(num_terms, "per-visit"),
                                a, table.frame["k"].to_numpy(), freq, None, truncate)
    return res if return_models else res.weights


# ---------------------------------------------------------------------------
# Fit pipeline and bootstrap
# ---------------------------------------------------------------------------

@dataclass
class MsmPipeline:
    """Weight estimation plus MSM fit on a fixed person-period table.

    ``run(freq)`` repeats the whole analysis with individual-level frequency
    weights, which is how bootstrap replicates are evaluated.
    """

    table: PersonPeriodTable
    msm_terms: Sequence[str]
    link: str = "logit"
    weighting: str = "iptw"
    visit_intercepts: str = "per-visit"
    denominator_terms: Sequence[str] | None = None
    numerator_terms: Sequence[str] | None = None
    truncate: tuple | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.weighting not in ("none", "iptw"):
            raise DomainError("weighting must be 'none' or 'iptw'")
        d_def, n_def = default_treatment_terms(self.table)
        self.denominator_terms = d_def if self.denominator_terms is None else list(self.denominator_terms)
        self.numerator_terms = n_def if self.numerator_terms is None else list(self.numerator_terms)
        X, names = self.table.design(self.msm_terms, self.visit_intercepts)
        self._cache.update(X=X, names=names, y=self.table.y, ids=self.table.ids,
                           a=self.table.column("a"), k=self.table.frame["k"].to_numpy())
        if self.weighting == "iptw":
            if not np.all((self._cache["a"] == 0) | (self._cache["a"] == 1)):
                raise DomainError("stabilised weights need a binary treatment")
            self._cache["Xd"] = self.table.design(self.denominator_terms, "per-visit")
            self._cache["Xn"] = self.table.design(self.numerator_terms, "per-visit")
        _, self._cache["cluster"] = np.unique(self._cache["ids"], return_inverse=True)

    @property
    def n_clusters(self) -> int:
        return int(self._cache["cluster"].max()) + 1 if len(self.table) else 0

    @property
    def names(self) -> list:
        return list(self._cache["names"])

    def weights(self, freq: np.ndarray | None = None, start=None) -> tuple[np.ndarray, tuple]:
        """Row weights and the fitted ``(denominator, numerator)`` coefficients."""
        if self.weighting == "none":
            return np.ones(len(self.table)), (None, None)
        c = self._cache
        res = _weights_from_designs(c["Xd"], c["Xn"], c["a"], c["k"], freq, start, self.truncate,
                                    check_rank=start is None or start[0] is None)
        return res.weights, (res.denominator.coef, res.numerator.coef)

    def run(self, freq: np.ndarray | None = None, sandwich: bool = True, start=None) -> FitResult:
        """Estimate weights and fit the MSM.

        Parameters
        ----------
        freq : ndarray, optional
            Per-row frequency weights (bootstrap multiplicities).
        start : tuple, optional
            ``(msm, denominator, numerator)`` starting coefficients.
        """
        c = self._cache
        s = start or (None, None, None)
        w, tcoef = self.weights(freq, s[1:])
        self._cache["last_treatment_coef"] = tcoef
        total = w if freq is None else w * freq
        fit = irls(c["X"], c["y"], total, self.link, start=s[0], names=c["names"],
                   check_rank=s[0] is None)
        if sandwich:
            keep = total > 0
            fit.cov_sandwich = sandwich_variance(c["X"][keep], c["y"][keep], total[keep], fit.coef,
                                                 self.link, c["cluster"][keep])
            fit.n_clusters = int(np.unique(c["cluster"][keep]).shape[0])
        fit.weights = w
        return fit


@dataclass
class BootstrapResult:
    """Percentile bootstrap intervals.

    Attributes
    ----------
    names : list of str
    lower, upper : ndarray
        2.5% and 97.5% percentiles of the replicate estimates.
    se : ndarray
        Standard deviation of the replicate estimates.
    replicates : ndarray, shape (B_ok, p)
    n_failed : int
    """

    names: list
    lower: np.ndarray
    upper: np.ndarray
    se: np.ndarray
    replicates: np.ndarray
    n_failed: int
    B: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"parameter": self.names, "boot_lower": self.lower, "boot_upper": self.upper,
                             "boot_se": self.se})


def bootstrap_ci(pipeline: MsmPipeline, B: int, seed: int, *, level: float = 0.95,
                 max_failed_fraction: float = 0.10, full_fit: FitResult | None = None) -> BootstrapResult:
    """Percentile bootstrap over individuals.

    Each replicate draws ``n`` individuals with replacement (stream
    ``(seed, BOOT, b)``), refits both treatment models and the MSM, and
    records the MSM coefficients.  Replicates whose fits fail are excluded
    and counted.

    Raises
    ------
    DomainError
        ``B < 100``.
    UnreliableIntervalError
        More than 10% of the replicates failed.
    """
    if B < 100:
        raise DomainError("the bootstrap needs B >= 100 replicates")
    full = full_fit if full_fit is not None else pipeline.run(sandwich=False)
    tcoef = pipeline._cache.get("last_treatment_coef", (None, None))
    start = (full.coef, tcoef[0], tcoef[1])
    cluster = pipeline._cache["cluster"]
    n = pipeline.n_clusters
    reps, failed = [], 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for b in range(B):
            draw = rngmod.substream(seed, rngmod.BOOT, b).integers(0, n, n)
            counts = np.bincount(draw, minlength=n).astype(float)
            freq = counts[cluster]
            try:
                fit = pipeline.run(freq, sandwich=False, start=start)
            except MsmSimError:
                failed += 1
                continue
            if not fit.converged:
                failed += 1
                continue
            reps.append(fit.coef)
    if failed > max_failed_fraction * B:
        raise UnreliableIntervalError(f"{failed} of {B} bootstrap replicates failed to fit")
    R = np.asarray(reps)
    alpha = 100 * (1 - level) / 2
    lower, upper = np.percentile(R, [alpha, 100 - alpha], axis=0)
    se = R.std(axis=0, ddof=1) if R.shape[0] > 1 else np.zeros(R.shape[1])
    return BootstrapResult(pipeline.names, lower, upper, se, R, failed, B)
