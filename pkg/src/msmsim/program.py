"""Compile a :class:`ScenarioSpec` into flat arrays for the numba kernels.

Each pool member carries a state vector with layout::

    [1, k, x..., b..., l..., l.lag1..., a, a.lag1]

and every linear predictor is stored as a per-visit intercept plus terms whose
value is ``coef[k] * prod(state[factor])``.  All predictors share one table.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .scenario import LinearPredictor, ScenarioSpec, coef_at, split_term

KIND_NORMAL = 0
KIND_BERNOULLI = 1

LINK_CODES = {"logit": 0, "cloglog": 1, "additive": 2}
DISCRETE_CODES = {None: 0, "option1": 1, "odds_ratio": 2}


class Program(NamedTuple):
    K: int
    P: int
    nx: int
    nb: int
    nl: int
    i_k: int
    i_x: int
    i_b: int
    i_l: int
    i_llag: int
    i_a: int
    i_alag: int
    lp_icpt: np.ndarray      # (n_lp, K+1)
    lp_tptr: np.ndarray      # (n_lp+1,)
    term_coef: np.ndarray    # (n_terms, K+1)
    term_fptr: np.ndarray    # (n_terms+1,)
    factor_idx: np.ndarray   # (n_factors,)
    x_kind: np.ndarray
    x_lp: np.ndarray
    x_sd: np.ndarray
    b_kind: np.ndarray
    b_lp: np.ndarray
    b_sd: np.ndarray
    l0_kind: np.ndarray
    l0_lp: np.ndarray
    l0_sd: np.ndarray
    l_kind: np.ndarray
    l_lp: np.ndarray
    l_sd: np.ndarray
    trt_kind: int            # 0 normal, 1 binary
    trt_lp: int
    trt_sd: float
    score_lp: int
    msm_lp: int
    link: int
    continuous_time: int
    rho: np.ndarray          # (K+1,)
    discrete: int
    odds_ratios: np.ndarray


class _Builder:
    def __init__(self, K: int, index: dict):
        self.K = K
        self.index = index
        self.icpt: list[np.ndarray] = []
        self.tptr = [0]
        self.coefs: list[np.ndarray] = []
        self.fptr = [0]
        self.factors: list[int] = []

    def _vec(self, c) -> np.ndarray:
        return np.array([coef_at(c, k) for k in range(self.K + 1)], dtype=float)

    def add(self, intercept, terms) -> int:
        self.icpt.append(self._vec(intercept))
        for expr, c in terms:
            self.coefs.append(self._vec(c))
            for name, lag in split_term(expr):
                self.factors.append(self.index[(name, lag)])
            self.fptr.append(len(self.factors))
        self.tptr.append(len(self.coefs))
        return len(self.icpt) - 1

    def add_pred(self, pred: LinearPredictor) -> int:
        return self.add(pred.intercept, pred.terms)


def state_columns(spec: ScenarioSpec) -> list[str]:
    """Names of the state-vector entries, in order."""
    cols = ["1", "k"] + spec.x_names + spec.b_names + spec.l_names
    cols += [f"{n}.lag1" for n in spec.l_names] + ["a", "a.lag1"]
    return cols


def compile_scenario(spec: ScenarioSpec) -> Program:
    K = spec.K
    nx, nb, nl = len(spec.baseline_x), len(spec.baseline_b), len(spec.confounders)
    i_x = 2
    i_b = i_x + nx
    i_l = i_b + nb
    i_llag = i_l + nl
    i_a = i_llag + nl
    i_alag = i_a + 1
    P = i_alag + 1
    index = {("k", 0): 1, ("a", 0): i_a, ("a", 1): i_alag}
    for j, n in enumerate(spec.x_names):
        index[(n, 0)] = i_x + j
    for j, n in enumerate(spec.b_names):
        index[(n, 0)] = i_b + j
    for j, n in enumerate(spec.l_names):
        index[(n, 0)] = i_l + j
        index[(n, 1)] = i_llag + j

    bld = _Builder(K, index)

    def laws(covs, attr):
        kinds, lps, sds = [], [], []
        for c in covs:
            law = getattr(c, attr) or c.law
            kinds.append(KIND_NORMAL if law.kind == "normal" else KIND_BERNOULLI)
            lps.append(bld.add_pred(law.predictor))
            sds.append(law.sd)
        return (np.array(kinds, dtype=np.int64), np.array(lps, dtype=np.int64), np.array(sds, dtype=float))

    x_kind, x_lp, x_sd = laws(spec.baseline_x, "law")
    b_kind, b_lp, b_sd = laws(spec.baseline_b, "law")
    l0_kind, l0_lp, l0_sd = laws(spec.confounders, "initial")
    l_kind, l_lp, l_sd = laws(spec.confounders, "law")
    trt_lp = bld.add_pred(spec.treatment.predictor)
    score_lp = bld.add_pred(spec.risk_score.predictor)
    msm = spec.msm
    if msm.link == "cloglog":
        base = [np.log(coef_at(msm.baseline, k)) for k in range(K + 1)]
    else:
        base = [coef_at(msm.baseline, k) for k in range(K + 1)]
    msm_lp = bld.add(tuple(base), msm.terms)

    n_terms = len(bld.coefs)
    return Program(
        K=K, P=P, nx=nx, nb=nb, nl=nl, i_k=1, i_x=i_x, i_b=i_b, i_l=i_l, i_llag=i_llag,
        i_a=i_a, i_alag=i_alag,
        lp_icpt=np.ascontiguousarray(np.vstack(bld.icpt)),
        lp_tptr=np.array(bld.tptr, dtype=np.int64),
        term_coef=(np.ascontiguousarray(np.vstack(bld.coefs)) if n_terms else np.zeros((0, K + 1))),
        term_fptr=np.array(bld.fptr, dtype=np.int64),
        factor_idx=np.array(bld.factors, dtype=np.int64),
        x_kind=x_kind, x_lp=x_lp, x_sd=x_sd, b_kind=b_kind, b_lp=b_lp, b_sd=b_sd,
        l0_kind=l0_kind, l0_lp=l0_lp, l0_sd=l0_sd, l_kind=l_kind, l_lp=l_lp, l_sd=l_sd,
        trt_kind=1 if spec.treatment.kind == "binary" else 0, trt_lp=trt_lp,
        trt_sd=float(spec.treatment.sd), score_lp=score_lp, msm_lp=msm_lp,
        link=LINK_CODES[msm.link], continuous_time=int(msm.continuous_time),
        rho=np.array(spec.rho, dtype=float),
        discrete=DISCRETE_CODES[spec.risk_score.discrete],
        odds_ratios=np.array(spec.risk_score.odds_ratios, dtype=float),
    )


def slot_buffer_size(prog: Program) -> int:
    """Number of slot-1 covariate draws: x, b, then ``l`` at every visit."""
    return prog.nx + prog.nb + (prog.K + 1) * prog.nl
