"""Declarative description of the data-generating mechanism.

A scenario fixes, for visits ``k = 0..K``:

* baseline MSM covariates ``X`` and other baseline variables ``B``;
* time-varying confounders ``L_k`` generated in a fixed order;
* a treatment model for ``A_k``;
* the marginal structural model for the interventional hazard
  ``g_{k+1}(a_0..a_k, x)`` of failing in ``(k, k+1]``;
* a risk score ranking individuals by their interventional hazard;
* the Gaussian-copula correlation ``rho_k``, optional exponential censoring
  and the match-pool settings.

Linear predictors are written as an intercept plus terms, each term a product of
variable references such as ``"x1"``, ``"l1.lag1"``, ``"a"`` or ``"x1*a"``.  The
reserved names are ``a`` (treatment at the current visit) and ``k`` (visit
index).  The suffix ``.lag1`` refers to the previous visit; at visit 0 lagged
values are 0.  Any coefficient may be given per visit as a list of ``K + 1``
numbers.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import InvalidHazardError, ScenarioError, UnknownPresetError

SCHEMA_VERSION = 1
DEFAULT_SEED = 20240611

Coef = Union[float, tuple]

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_RESERVED = {"a", "k"}
LINKS = ("logit", "cloglog", "additive")


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def _coef(value, where: str) -> Coef:
    if isinstance(value, (list, tuple)):
        try:
            out = tuple(float(v) for v in value)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}: per-visit coefficients must be numbers") from exc
        if not all(math.isfinite(v) for v in out):
            raise ScenarioError(f"{where}: coefficients must be finite")
        return out
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where}: expected a number or a list of numbers, got {value!r}")
    if not math.isfinite(float(value)):
        raise ScenarioError(f"{where}: coefficients must be finite")
    return float(value)


def _terms(terms, where: str) -> tuple:
    if terms is None:
        return ()
    if isinstance(terms, Mapping):
        items = list(terms.items())
    else:
        items = [tuple(t) for t in terms]
    out = []
    for expr, value in items:
        if not isinstance(expr, str):
            raise ScenarioError(f"{where}: term names must be strings, got {expr!r}")
        out.append((expr.replace(" ", ""), _coef(value, f"{where}[{expr}]")))
    names = [e for e, _ in out]
    if len(set(names)) != len(names):
        raise ScenarioError(f"{where}: duplicate terms in {names}")
    # Canonical (sorted) order, so that serialising and parsing is the identity.
    return tuple(sorted(out, key=lambda t: t[0]))


def split_term(expr: str) -> list[tuple[str, int]]:
    """Split a term like ``"x1*l2.lag1"`` into ``[("x1", 0), ("l2", 1)]``."""
    factors = []
    for part in expr.split("*"):
        name, lag = part, 0
        if part.endswith(".lag1"):
            name, lag = part[: -len(".lag1")], 1
        if not _NAME_RE.match(name):
            raise ScenarioError(f"malformed term {expr!r}")
        factors.append((name, lag))
    return factors


@dataclass(frozen=True)
class LinearPredictor:
    """Intercept plus a sum of coefficient-weighted product terms."""

    intercept: Coef = 0.0
    terms: tuple = ()

    @classmethod
    def make(cls, intercept: Coef = 0.0, terms=None, where: str = "predictor") -> "LinearPredictor":
        return cls(_coef(intercept, f"{where}.intercept"), _terms(terms, f"{where}.terms"))

    def to_dict(self) -> dict:
        return {"intercept": _dump_coef(self.intercept), "terms": {e: _dump_coef(c) for e, c in self.terms}}


def _dump_coef(c: Coef):
    return list(c) if isinstance(c, tuple) else c


def coef_at(c: Coef, k: int) -> float:
    """Value of a scalar-or-per-visit coefficient at visit ``k``."""
    return c[k] if isinstance(c, tuple) else c


@dataclass(frozen=True)
class Law:
    """Conditional distribution of one generated variable.

    ``kind`` is ``"normal"`` (mean = linear predictor, standard deviation
    ``sd``) or ``"bernoulli"`` (probability = inverse logit of the predictor).
    """

    kind: str
    predictor: LinearPredictor
    sd: float = 1.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, **self.predictor.to_dict()}
        if self.kind == "normal":
            d["sd"] = self.sd
        return d


@dataclass(frozen=True)
class CovariateSpec:
    """A generated covariate.

    Parameters
    ----------
    name : str
    law : Law
        Distribution at every visit (for confounders: visits ``k >= 1``, and
        visit 0 too unless ``initial`` is given).
    initial : Law, optional
        Confounders only: distribution at visit 0.
    observed : bool
        Whether an analyst would see the variable.  Unobserved variables are
        dropped from exported tables in blind mode.
    """

    name: str
    law: Law
    initial: Law | None = None
    observed: bool = True

    def to_dict(self) -> dict:
        d = {"name": self.name, **self.law.to_dict()}
        if self.initial is not None:
            d["initial"] = self.initial.to_dict()
        if not self.observed:
            d["observed"] = False
        return d


@dataclass(frozen=True)
class TreatmentSpec:
    """Treatment model: ``"binary"`` (logistic) or ``"normal"`` (linear-normal)."""

    kind: str
    predictor: LinearPredictor
    sd: float = 1.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, **self.predictor.to_dict()}
        if self.kind == "normal":
            d["sd"] = self.sd
        return d


@dataclass(frozen=True)
class MsmSpec:
    """Marginal structural model for the interventional hazard.

    Parameters
    ----------
    link : {"logit", "cloglog", "additive"}
        ``logit``: ``g = expit(beta_k0 + sum beta_j q_j)``.
        ``cloglog``: per-interval hazard ``lambda = lambda_k0 exp(sum beta_j q_j)``.
        ``additive``: ``lambda = lambda_k0 + sum beta_j q_j`` (must stay positive).
        For both hazard links ``g = 1 - exp(-lambda)``.
    baseline : float or tuple
        ``beta_k0`` for the logit link, ``lambda_k0 > 0`` for hazard links.
    terms : tuple of (expr, coef)
        Basis functions built from ``x`` components, ``a``, ``a.lag1`` and ``k``.
    continuous_time : bool
        Draw exact failure times within the failure interval (hazard links only).
    """

    link: str
    baseline: Coef
    terms: tuple = ()
    continuous_time: bool = False

    def to_dict(self) -> dict:
        return {"link": self.link, "baseline": _dump_coef(self.baseline),
                "terms": {e: _dump_coef(c) for e, c in self.terms},
                "continuous_time": self.continuous_time}


@dataclass(frozen=True)
class RiskScoreSpec:
    """Risk score ``h`` used to rank pool members.

    Parameters
    ----------
    predictor : LinearPredictor
        Linear score.  Products with ``a`` let coefficients switch on the
        current treatment.
    discrete : None, "option1" or "odds_ratio"
        ``None``: continuous score.  ``"option1"``: integer score handled by
        spreading each value uniformly over its CDF step.  ``"odds_ratio"``:
        integer score in ``0..J-1``; failure is drawn from a 2 x J table with
        the given ``odds_ratios`` instead of the copula.
    odds_ratios : tuple of float
        Required for ``"odds_ratio"``.
    hook : str, optional
        Name of a scoring function registered with
        :func:`msmsim.engine.register_risk_score_hook`.
    """

    predictor: LinearPredictor
    discrete: str | None = None
    odds_ratios: tuple = ()
    hook: str | None = None

    def to_dict(self) -> dict:
        d = self.predictor.to_dict()
        d["discrete"] = self.discrete
        if self.discrete == "odds_ratio":
            d["odds_ratios"] = list(self.odds_ratios)
        if self.hook is not None:
            d["hook"] = self.hook
        return d


@dataclass(frozen=True)
class PoolConfig:
    """Match-pool settings.

    Parameters
    ----------
    m : int
        Pool size including the sampled individual.
    restart_fraction : float
        Restart when the number of distinct surviving match lineages drops to
        ``restart_fraction * m`` or fewer.  0 disables restarts.
    restart_m : int
        Pool size after a restart.
    max_restarts : int
        Further restarts (at ``restart_m``) allowed after the first.
    """

    m: int = 5000
    restart_fraction: float = 0.10
    restart_m: int = 100_000
    max_restarts: int = 5

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ScenarioError("pool.m must be an integer >= 2")
        if not 0.0 <= self.restart_fraction < 1.0:
            raise ScenarioError("pool.restart_fraction must lie in [0, 1)")
        if self.restart_m < self.m:
            raise ScenarioError("pool.restart_m must be >= pool.m")
        if self.max_restarts < 0:
            raise ScenarioError("pool.max_restarts must be >= 0")

    @property
    def restart_threshold(self) -> int:
        return int(math.floor(self.restart_fraction * self.m + 1e-9))

    def to_dict(self) -> dict:
        return {"m": self.m, "restart_fraction": self.restart_fraction,
                "restart_m": self.restart_m, "max_restarts": self.max_restarts}


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete, validated data-generating mechanism.  Immutable."""

    K: int
    baseline_x: tuple
    baseline_b: tuple
    confounders: tuple
    treatment: TreatmentSpec
    msm: MsmSpec
    risk_score: RiskScoreSpec
    rho: tuple
    censoring_rate: float = 0.0
    pool: PoolConfig = field(default_factory=PoolConfig)
    seed: int = DEFAULT_SEED
    name: str = ""

    # -- convenience --------------------------------------------------------
    @property
    def n_visits(self) -> int:
        """Number of visits, ``K + 1``."""
        return self.K + 1

    @property
    def x_names(self) -> list[str]:
        return [c.name for c in self.baseline_x]

    @property
    def b_names(self) -> list[str]:
        return [c.name for c in self.baseline_b]

    @property
    def l_names(self) -> list[str]:
        return [c.name for c in self.confounders]

    def with_pool(self, **kwargs) -> "ScenarioSpec":
        return replace(self, pool=replace(self.pool, **kwargs))

    def with_rho(self, rho) -> "ScenarioSpec":
        return validate(replace(self, rho=_rho_tuple(rho, self.K)))

    def to_dict(self) -> dict:
        return serialize(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON encoding."""
        return hashlib.sha256(dumps(self).encode()).hexdigest()


def _rho_tuple(rho, K: int) -> tuple:
    if isinstance(rho, (list, tuple)):
        vals = tuple(float(r) for r in rho)
        if len(vals) != K + 1:
            raise ScenarioError(f"rho: expected {K + 1} per-visit values, got {len(vals)}")
        return vals
    if isinstance(rho, bool) or not isinstance(rho, (int, float)):
        raise ScenarioError(f"rho: expected a number or list, got {rho!r}")
    return (float(rho),) * (K + 1)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check_coef_lengths(pred: LinearPredictor, K: int, where: str):
    for label, c in [("intercept", pred.intercept)] + [(e, c) for e, c in pred.terms]:
        if isinstance(c, tuple) and len(c) != K + 1:
            raise ScenarioError(f"{where}.{label}: per-visit coefficient needs {K + 1} values, got {len(c)}")


def _check_refs(pred: LinearPredictor, allowed: Mapping[str, set], where: str):
    """``allowed`` maps a variable name to the set of lags it may be used with."""
    for expr, _ in pred.terms:
        for name, lag in split_term(expr):
            if name not in allowed:
                raise ScenarioError(f"{where}: term {expr!r} references {name!r}, which is unknown "
                                    "or not yet generated at this point")
            if lag not in allowed[name]:
                raise ScenarioError(f"{where}: term {expr!r} may not use {name!r} with lag {lag}")


def _check_law(law: Law, where: str):
    if law.kind not in ("normal", "bernoulli"):
        raise ScenarioError(f"{where}.kind must be 'normal' or 'bernoulli', got {law.kind!r}")
    if law.kind == "normal" and not (law.sd > 0 and math.isfinite(law.sd)):
        raise ScenarioError(f"{where}.sd must be positive")


def validate(spec: ScenarioSpec) -> ScenarioSpec:
    """Check every scenario invariant; return ``spec`` unchanged or raise."""
    K = spec.K
    if int(K) != K or K < 0:
        raise ScenarioError("visits must be a positive integer (K >= 0)")
    names = [c.name for c in spec.baseline_x + spec.baseline_b + spec.confounders]
    for nm in names:
        if not _NAME_RE.match(nm) or nm in _RESERVED:
            raise ScenarioError(f"invalid or reserved variable name {nm!r}")
    if len(set(names)) != len(names):
        raise ScenarioError("variable names must be unique")

    allowed: dict[str, set] = {}
    for i, c in enumerate(spec.baseline_x):
        where = f"baseline_x[{i}]"
        if c.initial is not None:
            raise ScenarioError(f"{where}: baseline variables take no 'initial' law")
        _check_law(c.law, where)
        _check_refs(c.law.predictor, allowed, where)
        allowed[c.name] = {0}
    x_allowed = dict(allowed)
    for i, c in enumerate(spec.baseline_b):
        where = f"baseline_b[{i}]"
        if c.initial is not None:
            raise ScenarioError(f"{where}: baseline variables take no 'initial' law")
        _check_law(c.law, where)
        _check_refs(c.law.predictor, allowed, where)
        allowed[c.name] = {0}
    for c in spec.baseline_x + spec.baseline_b:
        for label, coef in [("intercept", c.law.predictor.intercept)] + list(c.law.predictor.terms):
            if isinstance(coef, tuple):
                raise ScenarioError(f"baseline variable {c.name!r}: coefficients cannot vary by visit")

    base_allowed = dict(allowed)
    l_names = [c.name for c in spec.confounders]
    init_allowed = dict(base_allowed)
    upd_allowed = dict(base_allowed)
    upd_allowed["k"] = {0}
    upd_allowed["a"] = {1}
    for nm in l_names:
        upd_allowed[nm] = {1}
    for i, c in enumerate(spec.confounders):
        where = f"confounders[{i}]"
        _check_law(c.law, where)
        _check_coef_lengths(c.law.predictor, K, where)
        _check_refs(c.law.predictor, upd_allowed, where)
        if c.initial is not None:
            _check_law(c.initial, where + ".initial")
            _check_coef_lengths(c.initial.predictor, K, where + ".initial")
            _check_refs(c.initial.predictor, init_allowed, where + ".initial")
        init_allowed[c.name] = {0}
        upd_allowed[c.name] = {0, 1}

    t = spec.treatment
    if t.kind not in ("binary", "normal"):
        raise ScenarioError("treatment.kind must be 'binary' or 'normal'")
    if t.kind == "normal" and not t.sd > 0:
        raise ScenarioError("treatment.sd must be positive")
    _check_coef_lengths(t.predictor, K, "treatment")
    _check_refs(t.predictor, upd_allowed, "treatment")

    score_allowed = dict(upd_allowed)
    score_allowed["a"] = {0, 1}
    rs = spec.risk_score
    _check_coef_lengths(rs.predictor, K, "risk_score")
    _check_refs(rs.predictor, score_allowed, "risk_score")
    if rs.discrete not in (None, "option1", "odds_ratio"):
        raise ScenarioError("risk_score.discrete must be null, 'option1' or 'odds_ratio'")
    if rs.discrete == "odds_ratio":
        if len(rs.odds_ratios) < 1 or any(not (o > 0) for o in rs.odds_ratios):
            raise ScenarioError("risk_score.odds_ratios must be a non-empty list of positive numbers")

    msm = spec.msm
    if msm.link not in LINKS:
        raise ScenarioError(f"msm.link must be one of {LINKS}, got {msm.link!r}")
    msm_allowed = dict(x_allowed)
    msm_allowed["a"] = {0, 1}
    msm_allowed["k"] = {0}
    for expr, _ in msm.terms:
        for name, lag in split_term(expr):
            if (name in base_allowed and name not in x_allowed) or name in l_names:
                raise ScenarioError(f"msm: term {expr!r} references {name!r}; MSM terms may depend only "
                                    "on x, the treatment history and the visit index, never on B or L")
    _check_refs(LinearPredictor(0.0, msm.terms), msm_allowed, "msm")
    _check_coef_lengths(LinearPredictor(msm.baseline, msm.terms), K, "msm")
    if msm.link != "logit":
        base = msm.baseline if isinstance(msm.baseline, tuple) else (msm.baseline,)
        if any(not (b > 0) for b in base):
            raise ScenarioError("msm.baseline: baseline hazards must be positive for hazard links")
    if msm.continuous_time and msm.link == "logit":
        raise ScenarioError("msm.continuous_time requires a hazard link (cloglog or additive)")

    if len(spec.rho) != K + 1:
        raise ScenarioError(f"rho: expected {K + 1} values")
    for kk, r in enumerate(spec.rho):
        if not (-1.0 < r <= 0.0):
            raise ScenarioError(f"rho out of range: rho[{kk}] = {r} is not in (-1, 0]")
    if not (spec.censoring_rate >= 0.0 and math.isfinite(spec.censoring_rate)):
        raise ScenarioError("censoring rate must be a finite number >= 0")
    if int(spec.seed) != spec.seed or spec.seed < 0:
        raise ScenarioError("seed must be a non-negative integer")
    return spec


# ---------------------------------------------------------------------------
# Parsing and serialisation
# ---------------------------------------------------------------------------

_TOP_KEYS = {"schema_version", "name", "visits", "baseline_x", "baseline_b", "confounders",
             "treatment", "msm", "risk_score", "rho", "censoring", "pool", "seed"}


def _law_from(d: Mapping, where: str) -> Law:
    if not isinstance(d, Mapping):
        raise ScenarioError(f"{where}: expected an object")
    unknown = set(d) - {"name", "kind", "intercept", "terms", "sd", "initial", "observed"}
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(unknown)}")
    if "kind" not in d:
        raise ScenarioError(f"{where}.kind is required")
    return Law(kind=d["kind"], predictor=LinearPredictor.make(d.get("intercept", 0.0), d.get("terms"), where),
               sd=float(d.get("sd", 1.0)))


def _covariate_from(d: Mapping, where: str) -> CovariateSpec:
    if not isinstance(d, Mapping) or "name" not in d:
        raise ScenarioError(f"{where}.name is required")
    initial = d.get("initial")
    return CovariateSpec(name=d["name"], law=_law_from(d, where),
                         initial=None if initial is None else _law_from(initial, where + ".initial"),
                         observed=bool(d.get("observed", True)))


def from_dict(doc: Mapping[str, Any]) -> ScenarioSpec:
    """Build and validate a scenario from a JSON-like mapping."""
    if not isinstance(doc, Mapping):
        raise ScenarioError("scenario document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ScenarioError(f"unknown top-level field(s) {sorted(unknown)}")
    for key in ("visits", "treatment", "msm", "risk_score", "rho"):
        if key not in doc:
            raise ScenarioError(f"missing required field {key!r}")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version!r}")
    visits = doc["visits"]
    if isinstance(visits, bool) or not isinstance(visits, int) or visits < 1:
        raise ScenarioError("visits must be an integer >= 1 (number of visits, K + 1)")
    K = visits - 1

    t = doc["treatment"]
    if not isinstance(t, Mapping):
        raise ScenarioError("treatment: expected an object")
    unknown = set(t) - {"kind", "intercept", "terms", "sd"}
    if unknown:
        raise ScenarioError(f"treatment: unknown field(s) {sorted(unknown)}")
    treatment = TreatmentSpec(kind=t.get("kind", "binary"),
                              predictor=LinearPredictor.make(t.get("intercept", 0.0), t.get("terms"), "treatment"),
                              sd=float(t.get("sd", 1.0)))

    msm_d = doc["msm"]
    if not isinstance(msm_d, Mapping):
        raise ScenarioError("msm: expected an object")
    unknown = set(msm_d) - {"link", "baseline", "log_baseline", "terms", "continuous_time"}
    if unknown:
        raise ScenarioError(f"msm: unknown field(s) {sorted(unknown)}")
    if ("baseline" in msm_d) == ("log_baseline" in msm_d):
        raise ScenarioError("msm: give exactly one of 'baseline' or 'log_baseline'")
    if "baseline" in msm_d:
        baseline = _coef(msm_d["baseline"], "msm.baseline")
    else:
        lb = _coef(msm_d["log_baseline"], "msm.log_baseline")
        baseline = tuple(math.exp(v) for v in lb) if isinstance(lb, tuple) else math.exp(lb)
    msm = MsmSpec(link=msm_d.get("link", "logit"), baseline=baseline,
                  terms=_terms(msm_d.get("terms"), "msm.terms"),
                  continuous_time=bool(msm_d.get("continuous_time", False)))

    rs_d = doc["risk_score"]
    if not isinstance(rs_d, Mapping):
        raise ScenarioError("risk_score: expected an object")
    unknown = set(rs_d) - {"intercept", "terms", "discrete", "odds_ratios", "hook"}
    if unknown:
        raise ScenarioError(f"risk_score: unknown field(s) {sorted(unknown)}")
    risk = RiskScoreSpec(predictor=LinearPredictor.make(rs_d.get("intercept", 0.0), rs_d.get("terms"), "risk_score"),
                         discrete=rs_d.get("discrete"),
                         odds_ratios=tuple(float(o) for o in rs_d.get("odds_ratios", ())),
                         hook=rs_d.get("hook"))

    cens = doc.get("censoring")
    if cens is None:
        rate = 0.0
    elif isinstance(cens, Mapping):
        unknown = set(cens) - {"rate", "log_rate"}
        if unknown or len(cens) != 1:
            raise ScenarioError("censoring: give exactly one of 'rate' or 'log_rate'")
        rate = float(cens["rate"]) if "rate" in cens else math.exp(float(cens["log_rate"]))
    else:
        raise ScenarioError("censoring: expected an object or null")

    pool_d = doc.get("pool", {}) or {}
    unknown = set(pool_d) - {"m", "restart_fraction", "restart_m", "max_restarts"}
    if unknown:
        raise ScenarioError(f"pool: unknown field(s) {sorted(unknown)}")
    pool = PoolConfig(**{k: (float(v) if k == "restart_fraction" else int(v)) for k, v in pool_d.items()})

    for key in ("baseline_x", "baseline_b", "confounders"):
        if not isinstance(doc.get(key, []), list):
            raise ScenarioError(f"{key}: expected a list")
    spec = ScenarioSpec(
        K=K,
        baseline_x=tuple(_covariate_from(d, f"baseline_x[{i}]") for i, d in enumerate(doc.get("baseline_x", []))),
        baseline_b=tuple(_covariate_from(d, f"baseline_b[{i}]") for i, d in enumerate(doc.get("baseline_b", []))),
        confounders=tuple(_covariate_from(d, f"confounders[{i}]") for i, d in enumerate(doc.get("confounders", []))),
        treatment=treatment, msm=msm, risk_score=risk, rho=_rho_tuple(doc["rho"], K),
        censoring_rate=rate, pool=pool, seed=int(doc.get("seed", DEFAULT_SEED)), name=str(doc.get("name", "")),
    )
    return validate(spec)


def parse_scenario(document: str | bytes | Mapping[str, Any]) -> ScenarioSpec:
    """Parse a JSON scenario document (text or already-decoded mapping)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    return from_dict(document)


def serialize(spec: ScenarioSpec) -> dict:
    """JSON-ready mapping; ``parse_scenario(serialize(s)) == s``."""
    rho = spec.rho
    return {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "visits": spec.K + 1,
        "baseline_x": [c.to_dict() for c in spec.baseline_x],
        "baseline_b": [c.to_dict() for c in spec.baseline_b],
        "confounders": [c.to_dict() for c in spec.confounders],
        "treatment": spec.treatment.to_dict(),
        "msm": spec.msm.to_dict(),
        "risk_score": spec.risk_score.to_dict(),
        "rho": rho[0] if len(set(rho)) == 1 else list(rho),
        "censoring": {"rate": spec.censoring_rate} if spec.censoring_rate > 0 else None,
        "pool": spec.pool.to_dict(),
        "seed": spec.seed,
    }


def dumps(spec: ScenarioSpec, indent: int | None = None) -> str:
    """Canonical JSON text (sorted keys, exact float repr)."""
    return json.dumps(serialize(spec), sort_keys=True, indent=indent)


def load_scenario(path) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# ---------------------------------------------------------------------------
# MSM evaluation
# ---------------------------------------------------------------------------

def msm_linear_predictor(msm: MsmSpec, a_hist: Sequence[float], x: Mapping[str, float], k: int) -> float:
    """Linear predictor of the MSM at visit ``k``.

    For the logit link this is ``beta_k0 + sum beta_j q_j``; for cloglog it is
    ``log lambda_k0 + sum beta_j q_j``; for the additive link it is the hazard.
    """
    if len(a_hist) != k + 1:
        raise ValueError(f"treatment history must have length k + 1 = {k + 1}, got {len(a_hist)}")
    values = dict(x)
    values["a"] = float(a_hist[k])
    values["k"] = float(k)
    lag_values = {"a": float(a_hist[k - 1]) if k > 0 else 0.0}
    total = 0.0
    for expr, c in msm.terms:
        v = coef_at(c, k)
        for name, lag in split_term(expr):
            v *= lag_values[name] if lag else values[name]
        total += v
    base = coef_at(msm.baseline, k)
    if msm.link == "cloglog":
        return math.log(base) + total
    return base + total


def eval_g(msm: MsmSpec, a_hist: Sequence[float], x: Mapping[str, float], k: int) -> float:
    """Interventional probability of failing in ``(k, k+1]`` given survival to ``k``.

    Parameters
    ----------
    msm : MsmSpec
    a_hist : sequence of float
        Treatments ``a_0..a_k`` (length ``k + 1``).
    x : mapping
        Baseline MSM covariates by name.
    k : int
        Visit index.

    Raises
    ------
    InvalidHazardError
        Additive link with a non-positive hazard.
    """
    eta = msm_linear_predictor(msm, a_hist, x, k)
    if msm.link == "logit":
        return float(1.0 / (1.0 + math.exp(-eta)))
    if msm.link == "cloglog":
        return float(-math.expm1(-math.exp(eta)))
    if not eta > 0:
        raise InvalidHazardError(f"additive hazard is {eta} <= 0 at visit {k}")
    return float(-math.expm1(-eta))


def eval_g_array(msm: MsmSpec, x: Mapping[str, np.ndarray], a: np.ndarray, a_lag: np.ndarray, k: int) -> np.ndarray:
    """Vectorised :func:`eval_g` over individuals sharing visit ``k``."""
    a = np.asarray(a, dtype=float)
    values = {name: np.asarray(v, dtype=float) for name, v in x.items()}
    values["a"] = a
    values["k"] = np.full_like(a, float(k))
    total = np.zeros_like(a)
    for expr, c in msm.terms:
        v = np.full_like(a, coef_at(c, k))
        for name, lag in split_term(expr):
            v = v * (np.asarray(a_lag, dtype=float) if lag else values[name])
        total += v
    base = coef_at(msm.baseline, k)
    if msm.link == "logit":
        return 1.0 / (1.0 + np.exp(-(base + total)))
    if msm.link == "cloglog":
        return -np.expm1(-np.exp(math.log(base) + total))
    lam = base + total
    if np.any(~(lam > 0)):
        raise InvalidHazardError(f"additive hazard is non-positive at visit {k}")
    return -np.expm1(-lam)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _shared_covariates(treat_coefs) -> dict:
    d1, d2, d3, d4, d5 = treat_coefs
    return {
        "baseline_x": [
            {"name": "x1", "kind": "normal", "intercept": 0.0, "sd": 1.0},
            {"name": "x2", "kind": "bernoulli", "intercept": 0.0},
        ],
        "baseline_b": [
            {"name": "b1", "kind": "normal", "intercept": -0.2, "terms": {"x2": 0.4}, "sd": 1.0},
            {"name": "b2", "kind": "normal", "intercept": 0.0, "terms": {"x1": 0.2}, "sd": 1.0,
             "observed": False},
        ],
        "confounders": [
            {"name": "l1", "kind": "normal", "intercept": 0.3,
             "terms": {"b2": 0.4, "l1.lag1": 0.7, "a.lag1": -0.6}, "sd": 1.0,
             "initial": {"kind": "normal", "intercept": 0.0, "terms": {"x1": 0.2}, "sd": 1.0}},
            {"name": "l2", "kind": "bernoulli", "intercept": -0.2,
             "terms": {"b2": 0.4, "l2.lag1": 1.0, "a.lag1": -0.6},
             "initial": {"kind": "bernoulli", "intercept": -0.2, "terms": {"x2": 0.4}}},
        ],
        "treatment": {"kind": "binary", "intercept": -1.0,
                      "terms": {"x1": d1, "x2": d2, "b1": d3, "l1": d4, "l2": d5, "a.lag1": 1.0}},
        "risk_score": {"terms": {"b1": 0.3, "b2": 0.5, "l1": 1.0, "l2": 1.0}, "discrete": None},
    }


_LOGIT_INTERCEPTS = {"low": -4.1, "medium": -2.5, "high": -1.2}
_DELTAS = {"low": (0.1, 0.15, 0.1, 0.3, 0.3), "high": (0.2, 0.3, 0.2, 0.6, 0.6)}
_RHOS = {"low": -0.5, "high": -0.9}


def _logit_preset(level: str) -> dict:
    doc = _shared_covariates((0.2, 0.3, 0.2, 0.6, 0.6))
    doc.update({
        "name": f"logit-{level}",
        "visits": 10,
        "msm": {"link": "logit", "baseline": _LOGIT_INTERCEPTS[level],
                "terms": {"x1": 0.5, "x2": 0.5, "a": -1.0}},
        "rho": -0.9,
        "censoring": None,
    })
    return doc


def _cox_preset(delta: str, rho: str) -> dict:
    doc = _shared_covariates(_DELTAS[delta])
    doc.update({
        "name": f"cox-{delta}-{rho}",
        "visits": 10,
        "msm": {"link": "cloglog", "baseline": math.exp(-3.3),
                "terms": {"x1": 0.5, "x2": 0.5, "a": -1.0, "x1*a": -0.4}, "continuous_time": True},
        "rho": _RHOS[rho],
        "censoring": {"rate": math.exp(-3.6)},
    })
    return doc


def _preset_docs() -> dict:
    docs = {f"logit-{lvl}": _logit_preset(lvl) for lvl in _LOGIT_INTERCEPTS}
    for d in ("low", "high"):
        for r in ("low", "high"):
            docs[f"cox-{d}-{r}"] = _cox_preset(d, r)
    return docs


PRESET_NAMES = tuple(_preset_docs())


def preset_document(name: str) -> dict:
    """JSON document of a built-in scenario (a fresh copy)."""
    docs = _preset_docs()
    if name not in docs:
        raise UnknownPresetError(f"unknown preset {name!r}; available: {', '.join(docs)}")
    return copy.deepcopy(docs[name])


def builtin_scenario(name: str) -> ScenarioSpec:
    """Return a built-in scenario.

    ``logit-{low,medium,high}``
        Logistic MSM with ``beta_k0`` in ``{-4.1, -2.5, -1.2}``, shared slopes
        ``(0.5, 0.5, -1)`` on ``(x1, x2, a)``, ``rho = -0.9``, 10 visits, no
        random censoring.
    ``cox-{delta}-{rho}``
        Cox-type MSM with ``lambda_0 = exp(-3.3)`` and slopes
        ``(0.5, 0.5, -1, -0.4)`` on ``(x1, x2, a, x1*a)``, exponential censoring
        at rate ``exp(-3.6)``, continuous failure times; ``delta`` selects the
        treatment-model strength and ``rho`` is -0.5 (low) or -0.9 (high).
    """
    return from_dict(preset_document(name))


def iter_presets() -> Iterable[str]:
    return iter(PRESET_NAMES)
