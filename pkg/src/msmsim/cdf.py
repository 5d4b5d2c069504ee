"""Risk-score CDF pre-estimation for scenarios with few ``(x, a)`` values.

When ``X`` and the treatment are discrete, the survivor distribution of the
risk score at each visit can be estimated once per ``(x, a_0..a_k)`` by
simulating a large interventional population under the fixed regime,
replacing failures with copies of random survivors, and storing a fixed set
of quantiles.  The known-CDF engine then reads risk quantiles from these
grids by linear interpolation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from . import _kernels, rng as rngmod
from ._kernels import EXHAUSTED, I_BAD_VISIT, I_LEN, I_STATUS
from .engine import _pool_sizes, _raise_status, kernels_for
from .errors import DomainError, EstimationExhaustedError, MissingGridError, PlanningError
from .program import compile_scenario
from .scenario import ScenarioSpec

GRID_STREAM = 8
SIDECAR_COLUMNS = ["x", "a", "k", "m_used", "prob", "value"]


def probability_grid() -> np.ndarray:
    """The 2817 stored probabilities.

    Steps of 1e-5 up to 1e-4, of 1e-4 up to 0.1, of 1e-3 up to 0.5 (1409
    points), plus the mirror images ``1 - p`` of all points below 0.5.
    """
    lower = np.concatenate([
        np.arange(1, 11) * 1e-5,
        np.arange(2, 1001) * 1e-4,
        np.arange(101, 501) * 1e-3,
    ])
    lower = np.round(lower, 12)
    upper = np.round(1.0 - lower[lower < 0.5][::-1], 12)
    return np.concatenate([lower, upper])


PROBS = probability_grid()

GridKey = tuple  # (x tuple, a tuple, k)


def make_key(x: Sequence[float], a_hist: Sequence[float], k: int) -> GridKey:
    return (tuple(float(v) for v in x), tuple(float(v) for v in a_hist[:k + 1]), int(k))


@dataclass(frozen=True)
class QuantileGrid:
    """Stored survivor quantiles of the risk score for one ``(x, a_0..a_k, k)``."""

    key: GridKey
    probs: np.ndarray
    values: np.ndarray
    m_used: int

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if p.ndim != 1 or p.shape != v.shape or p.size == 0:
            raise DomainError("probs and values must be nonempty 1-d arrays of equal length")
        if np.any(np.diff(p) <= 0) or p[0] <= 0 or p[-1] >= 1:
            raise DomainError("probs must be strictly increasing inside (0, 1)")
        if np.any(np.diff(v) < 0):
            raise DomainError("values must be nondecreasing")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "values", v)
        # tied values collapse to the largest probability among them
        uv, inv = np.unique(v, return_inverse=True)
        up = np.zeros(uv.shape[0])
        np.maximum.at(up, inv, p)
        object.__setattr__(self, "_uv", uv)
        object.__setattr__(self, "_up", up)

    def __call__(self, h: float) -> float:
        return grid_lookup(self, h)


def grid_lookup(grid: QuantileGrid, h: float) -> float:
    """Risk quantile ``F(h)`` from a grid.

    Linear interpolation of probability against value.  Tied values map to
    the largest probability among them.  Below the first value the first
    segment is extended linearly but floored at ``probs[0] / 2``; above the
    last value the mirror rule caps the result at ``1 - (1 - probs[-1]) / 2``.
    """
    v, p = grid._uv, grid._up
    lo_floor = grid.probs[0] / 2.0
    hi_cap = 1.0 - (1.0 - grid.probs[-1]) / 2.0
    h = float(h)
    if v.shape[0] == 1:
        if h < v[0]:
            return lo_floor
        return float(p[0]) if h == v[0] else hi_cap
    if h < v[0]:
        slope = (p[1] - p[0]) / (v[1] - v[0])
        return float(max(p[0] + slope * (h - v[0]), lo_floor))
    if h > v[-1]:
        slope = (p[-1] - p[-2]) / (v[-1] - v[-2])
        return float(min(p[-1] + slope * (h - v[-1]), hi_cap))
    return float(np.interp(h, v, p))


class GridSet:
    """Collection of grids usable as the CDF argument of the known-CDF engine.

    Calling ``grids(x, a_hist, k, h)`` returns ``F(h)`` for the key
    ``(x, a_0..a_k, k)``; a missing key raises :class:`MissingGridError`.
    """

    def __init__(self, grids: Iterable[QuantileGrid] = ()):
        self._grids: dict[GridKey, QuantileGrid] = {}
        for g in grids:
            self.add(g)

    def add(self, grid: QuantileGrid) -> None:
        self._grids[grid.key] = grid

    def __contains__(self, key) -> bool:
        return key in self._grids

    def __len__(self) -> int:
        return len(self._grids)

    def keys(self):
        return self._grids.keys()

    def get(self, x, a_hist, k) -> QuantileGrid:
        key = make_key(x, a_hist, k)
        try:
            return self._grids[key]
        except KeyError:
            raise MissingGridError(f"no risk-score grid for x={key[0]}, a={key[1]}, k={key[2]}") from None

    def __call__(self, x, a_hist, k, h) -> float:
        return grid_lookup(self.get(x, a_hist, k), h)

    # -- persistence --------------------------------------------------------
    def to_frame(self) -> pd.DataFrame:
        parts = []
        for key in sorted(self._grids):
            g = self._grids[key]
            n = g.probs.shape[0]
            parts.append(pd.DataFrame({
                "x": [_fmt(key[0])] * n, "a": [_fmt(key[1])] * n, "k": key[2],
                "m_used": g.m_used, "prob": g.probs, "value": g.values}))
        if not parts:
            return pd.DataFrame(columns=SIDECAR_COLUMNS)
        return pd.concat(parts, ignore_index=True)[SIDECAR_COLUMNS]

    def save(self, path) -> None:
        """Write the grids to a CSV sidecar (one ``prob, value`` row per probe and key)."""
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def load(cls, path) -> "GridSet":
        df = pd.read_csv(Path(path), dtype={"x": str, "a": str}, float_precision="round_trip")
        missing = [c for c in SIDECAR_COLUMNS if c not in df.columns]
        if missing:
            raise DomainError(f"grid sidecar is missing columns {missing}")
        out = cls()
        for (xs, as_, k), sub in df.groupby(["x", "a", "k"], sort=False):
            key = (_parse(xs), _parse(as_), int(k))
            out.add(QuantileGrid(key, sub["prob"].to_numpy(), sub["value"].to_numpy(),
                                 int(sub["m_used"].iloc[0])))
        return out


def _fmt(vals: tuple) -> str:
    return ";".join(repr(float(v)) for v in vals)


def _parse(text) -> tuple:
    if not isinstance(text, str) or text == "" or (isinstance(text, float) and math.isnan(text)):
        return ()
    return tuple(float(v) for v in text.split(";"))


def estimate_cdf_tables(spec: ScenarioSpec, x: Sequence[float], regime: Sequence[float], m: int,
                        seed: int | None = None, *, stream_key: tuple = (0,),
                        probs: np.ndarray = PROBS) -> list[QuantileGrid]:
    """Estimate the survivor risk-score quantiles at every visit for one ``(x, regime)``.

    Parameters
    ----------
    spec : ScenarioSpec
    x : sequence of float
        Baseline MSM covariate values.
    regime : sequence of float, length K+1
        Fixed treatment path.
    m : int
        Simulated population size (at least 1000).
    seed : int, optional
        Root seed (default ``spec.seed``).
    stream_key : tuple of int
        Distinguishes estimation runs under one root seed.

    Returns
    -------
    list of QuantileGrid
        One per visit ``k = 0..K``.

    Raises
    ------
    EstimationExhaustedError
        Every simulated individual failed at some visit before ``K``.
    """
    if m < 1000:
        raise DomainError("CDF pre-estimation needs m >= 1000")
    prog = compile_scenario(spec)
    K = prog.K
    x_vals = np.asarray(x, dtype=float)
    reg = np.asarray(regime, dtype=float)
    if x_vals.shape != (prog.nx,):
        raise DomainError(f"x must have {prog.nx} values")
    if reg.shape != (K + 1,):
        raise DomainError(f"regime must have length K+1 = {K + 1}")
    seed = spec.seed if seed is None else seed
    kern = kernels_for(spec)
    nn, nu = _pool_sizes(prog, m)
    out_i = np.zeros(I_LEN, dtype=np.int64)
    H_rec = np.zeros((K + 1, m))
    while True:
        pn = rngmod.substream(seed, GRID_STREAM, *stream_key, 0).standard_normal(nn)
        pu = rngmod.substream(seed, GRID_STREAM, *stream_key, 1).random(nu)
        kern.run_pool_cdf(prog, m, x_vals, reg, pn, pu, out_i, H_rec)
        if out_i[I_STATUS] != _kernels.NEED_MORE:
            break
        nn = max(nn, int(out_i[_kernels.I_NEED_N]), int(1.25 * nn))
        nu = max(nu, int(out_i[_kernels.I_NEED_U]), int(1.25 * nu))
    status = int(out_i[I_STATUS])
    if status == EXHAUSTED:
        raise EstimationExhaustedError(
            f"all {m} simulated individuals failed by visit {int(out_i[I_BAD_VISIT])}")
    if status != 0:
        _raise_status(status, -1, int(out_i[I_BAD_VISIT]), m)
    grids = []
    for k in range(K + 1):
        vals = np.quantile(H_rec[k], probs)
        vals = np.maximum.accumulate(vals)
        grids.append(QuantileGrid(make_key(x_vals, reg, k), np.asarray(probs, float), vals, m))
    return grids


def x_support(spec: ScenarioSpec) -> list[tuple]:
    """All values of ``X``; requires every ``X`` component to be binary."""
    for c in spec.baseline_x:
        if c.law.kind != "bernoulli":
            raise PlanningError(f"baseline_x {c.name!r} is continuous; grid pre-estimation needs "
                                "discrete X (use the matched engine)")
    return [tuple(float(v) for v in t) for t in itertools.product((0.0, 1.0), repeat=len(spec.baseline_x))]


def check_grid_plan(spec: ScenarioSpec) -> None:
    """Raise :class:`PlanningError` unless ``X`` and treatment are discrete."""
    x_support(spec)
    if spec.treatment.kind != "binary":
        raise PlanningError("grid pre-estimation needs a binary treatment")


def build_grid_set(spec: ScenarioSpec, m: int, seed: int | None = None,
                   regimes: Iterable[Sequence[float]] | None = None,
                   x_values: Iterable[Sequence[float]] | None = None) -> GridSet:
    """Estimate grids for every ``(x, regime)`` pair.

    Without ``regimes`` all ``2^(K+1)`` binary regimes are used, so the cost
    grows quickly with ``K``.  A key ``(x, a_0..a_k, k)`` shared by several
    regimes is taken from the first regime (in the given order) that
    contains it.
    """
    check_grid_plan(spec)
    xs = list(x_values) if x_values is not None else x_support(spec)
    regs = (list(regimes) if regimes is not None
            else [tuple(float(v) for v in t) for t in itertools.product((0.0, 1.0), repeat=spec.K + 1)])
    out = GridSet()
    for ix, x in enumerate(xs):
        for ir, reg in enumerate(regs):
            keys = [make_key(x, reg, k) for k in range(spec.K + 1)]
            if all(key in out for key in keys):
                continue
            for g in estimate_cdf_tables(spec, x, reg, m, seed, stream_key=(ix, ir)):
                if g.key not in out:
                    out.add(g)
    return out
