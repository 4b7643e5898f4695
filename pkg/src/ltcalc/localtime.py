"""Local-time estimation on sample paths.

Two independent estimators are provided for the local time of a path at a
level ``a``:

* ``local_time_tanaka`` -- the pathwise identity
  ``|X_t - a| - |X_0 - a| - sum sgn(X_i - a) dX_i``, monotonised by running
  maximum (the raw discrete series can dip by O(sqrt(dt)) noise while the
  limit object is nondecreasing);
* ``local_time_occupation`` -- the occupation-density quotient
  ``(1/eps) sum 1_window(X_i) d<X>_i``.

The side convention fixes both the signum value at 0 and the occupation
window:  right -> sgn(0) = -1, window [a, a+eps);  left -> sgn(0) = +1,
window (a-eps, a];  symmetric -> sgn(0) = 0, window (a-eps/2, a+eps/2].
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from ._kernels import occupation_field_kernel, tanaka_field_kernel
from .errors import ContractError, ResolutionError
from .measures import RadonMeasure
from .paths import SamplePath, TimeGrid

__all__ = [
    "SideConvention",
    "LocalTimeField",
    "StepField",
    "local_time_tanaka",
    "local_time_occupation",
    "local_time_field",
    "symmetric_from_right",
    "step_approximation",
]

# largest tolerated monotonisation correction, in units of sqrt(dt)
_MONO_WARN_FACTOR = 5.0


class SideConvention(enum.Enum):
    RIGHT = "right"
    LEFT = "left"
    SYMMETRIC = "symmetric"

    @property
    def sgn0(self) -> float:
        return {"right": -1.0, "left": 1.0, "symmetric": 0.0}[self.value]

    @property
    def window_mode(self) -> int:
        return {"right": 0, "left": 1, "symmetric": 2}[self.value]

    def sgn(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, 1.0, np.where(x < 0, -1.0, self.sgn0))


@dataclass
class LocalTimeField:
    """Matrix of local-time values over a time x level grid.

    Columns (fixed level, varying time) are nondecreasing and start at 0;
    levels outside the path range carry identically-zero columns.
    """

    tgrid: TimeGrid
    levels: np.ndarray
    L: np.ndarray  # shape (n_levels, n_nodes)
    side: SideConvention

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        if np.any(np.diff(self.levels) <= 0):
            raise ContractError("field levels must be strictly increasing")
        if self.L.shape != (self.levels.size, self.tgrid.n_nodes):
            raise ContractError("field matrix shape mismatch")

    def level_index(self, a: float) -> int:
        j = int(np.searchsorted(self.levels, a))
        if j >= self.levels.size or abs(self.levels[j] - a) > 1e-12 * max(1.0, abs(a)):
            raise ContractError(f"level {a} is not on the field grid")
        return j

    def column(self, a: float) -> np.ndarray:
        return self.L[self.level_index(a)]

    def at(self, t: float, a: float) -> float:
        return float(self.L[self.level_index(a), self.tgrid.index_of(t)])

    def write_csv(self, csv_path: str, sidecar_path: Optional[str] = None) -> None:
        """Matrix dump: first row = levels, first column = times; JSON sidecar
        records the side convention."""
        times = self.tgrid.times()
        with open(csv_path, "w") as fh:
            fh.write("t\\a," + ",".join(format(a, ".17g") for a in self.levels) + "\n")
            for i, t in enumerate(times):
                fh.write(format(t, ".17g") + ","
                         + ",".join(format(v, ".17g") for v in self.L[:, i]) + "\n")
        if sidecar_path is None:
            sidecar_path = csv_path + ".json"
        with open(sidecar_path, "w") as fh:
            json.dump({"side": self.side.value,
                       "n_levels": int(self.levels.size),
                       "n_nodes": int(self.tgrid.n_nodes)}, fh)


def _tanaka_columns(values: np.ndarray, levels: np.ndarray, side: SideConvention,
                    dt: float, warn: bool = True) -> np.ndarray:
    L, corr = tanaka_field_kernel(values, np.asarray(levels, dtype=float), side.sgn0)
    bound = _MONO_WARN_FACTOR * np.sqrt(dt)
    worst = float(np.max(corr)) if corr.size else 0.0
    if warn and worst > bound:
        warnings.warn(
            f"monotonisation correction {worst:.3g} exceeds "
            f"{_MONO_WARN_FACTOR}*sqrt(dt) = {bound:.3g}",
            RuntimeWarning, stacklevel=3)
    return L


def local_time_tanaka(X: SamplePath, a: float,
                      side: SideConvention = SideConvention.RIGHT) -> SamplePath:
    """Pathwise local-time estimate at a fixed level, nondecreasing from 0."""
    L = _tanaka_columns(X.values, np.array([float(a)]), side, X.grid.dt)
    return SamplePath(X.grid, L[0])


def local_time_occupation(X: SamplePath, a: float, eps: float,
                          side: SideConvention = SideConvention.RIGHT) -> SamplePath:
    """Occupation-window local-time estimate; nondecreasing by construction."""
    if not eps > 0:
        raise ContractError("occupation bandwidth eps must be positive")
    dqv = np.diff(X.qv_or_compute())
    out = occupation_field_kernel(X.values, dqv, np.array([float(a)]),
                                  float(eps), side.window_mode)
    return SamplePath(X.grid, out[0])


def local_time_field(X: SamplePath, levels: np.ndarray,
                     side: SideConvention = SideConvention.RIGHT) -> LocalTimeField:
    """Tanaka-estimator field over caller-chosen levels (sorted, increasing)."""
    levels = np.asarray(levels, dtype=float)
    if np.any(np.diff(levels) <= 0):
        raise ContractError("levels must be sorted strictly increasing")
    L = _tanaka_columns(X.values, levels, side, X.grid.dt)
    return LocalTimeField(X.grid, levels, L, side)


def symmetric_from_right(field: LocalTimeField, h: Callable,
                         nu: RadonMeasure) -> LocalTimeField:
    """Symmetric local time from the right field of an SDELT solution.

    Rescales each column through the Stieltjes integral of
    ``1 - h(s, a) nu({a})`` against d_s L^a_s (left-endpoint h).  Columns at
    levels not charged by an atom of ``nu`` are returned unchanged.
    """
    if field.side is not SideConvention.RIGHT:
        raise ContractError("input field must use the right convention")
    times = field.tgrid.times()[:-1]
    out = np.empty_like(field.L)
    for j, a in enumerate(field.levels):
        w = nu.atom(a)
        col = field.L[j]
        if w == 0.0:
            out[j] = col
            continue
        factors = 1.0 - np.asarray(h(times, a), dtype=float) * w
        visited = col[-1] > 0.0
        if visited and np.any(np.abs(1.0 - factors) >= 1.0):
            raise ContractError(
                f"|h * nu({{{a}}})| >= 1 at a visited atom: relation degenerates")
        out[j] = np.concatenate([[0.0], np.cumsum(factors * np.diff(col))])
    return LocalTimeField(field.tgrid, field.levels, out, SideConvention.SYMMETRIC)


@dataclass
class StepField:
    """Piecewise-constant approximation of a local-time field.

    Constant on [t_breaks[p], t_breaks[p+1]) x [levels[j], levels[j+1]);
    ``values[p, j]`` is the cell value.
    """

    t_breaks: np.ndarray       # cell start times, followed by the terminal time
    levels: np.ndarray
    values: np.ndarray         # shape (n_tcells, n_levels)
    achieved_error: float
    n_cells: int

    def at(self, t: float, a: float) -> float:
        p = int(np.searchsorted(self.t_breaks, t, side="right")) - 1
        p = min(max(p, 0), self.values.shape[0] - 1)
        j = int(np.searchsorted(self.levels, a, side="right")) - 1
        j = min(max(j, 0), self.levels.size - 1)
        return float(self.values[p, j])


def step_approximation(field: LocalTimeField, eps: float) -> StepField:
    """Uniform approximation of the field by a right-continuous step function.

    Greedy in time: a new cell starts as soon as any level has moved by more
    than ~eps since the cell's anchor node.  Levels are kept as-is (the field
    is already a step function in the level direction).  The achieved sup
    error over the field's grid is asserted to be < eps.
    """
    if not eps > 0:
        raise ContractError("eps must be positive")
    L = field.L
    times = field.tgrid.times()
    anchors = [0]
    anchor_col = L[:, 0]
    slack = 0.95 * eps
    for i in range(1, field.tgrid.n_nodes):
        if np.max(np.abs(L[:, i] - anchor_col)) > slack:
            # the triggering node opens (and anchors) a new cell, so every
            # node sits within `slack` of its own cell's anchor
            anchors.append(i)
            anchor_col = L[:, i]
    values = L[:, anchors].T.copy()
    t_breaks = np.concatenate([times[anchors], [times[-1]]])
    # exact sup error of the constructed step function over the grid
    cell_of = np.searchsorted(np.asarray(anchors), np.arange(field.tgrid.n_nodes),
                              side="right") - 1
    err = float(np.max(np.abs(L - values[cell_of, :].T)))
    if err >= eps:
        raise ResolutionError(f"achieved error {err:.3g} not below eps={eps:.3g}")
    return StepField(t_breaks, field.levels.copy(), values, err,
                     n_cells=values.shape[0] * field.levels.size)
