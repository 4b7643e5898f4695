"""Uniform-grid path simulation: Brownian drivers, Euler schemes, Ito sums.

Reproducibility contract
------------------------
Randomness comes from NumPy's Philox4x64-10 counter-based generator with
``key = (seed, stream_id)`` and counter starting at 0; normals are drawn via
``Generator.standard_normal`` in path order.  A path is therefore a pure
function of ``(seed, stream_id, grid)`` -- independent of how many other
paths are generated, in what order, or on how many workers.

All cumulative sums run strictly left to right (``np.cumsum`` over the step
axis); no pairwise/tree reductions are used inside a path.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, NumericDomainError

__all__ = [
    "TimeGrid",
    "RngStream",
    "SamplePath",
    "brownian_path",
    "brownian_increment_matrix",
    "euler_solve",
    "euler_solve_matrix",
    "ito_integral",
    "quadratic_variation",
    "RNG_ALGORITHM",
]

RNG_ALGORITHM = "philox4x64-10, key=(seed, stream_id), numpy standard_normal"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 + i*dt, i = 0..n_steps."""

    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ContractError("TimeGrid requires T > t0")
        if self.n_steps < 1:
            raise ContractError("TimeGrid requires n_steps >= 1")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_steps + 1) * self.dt

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.n_steps * factor)

    def index_of(self, t: float) -> int:
        """Node index of a time that must lie (near-)exactly on the grid."""
        i = int(round((t - self.t0) / self.dt))
        if i < 0 or i > self.n_steps or abs(self.t0 + i * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ContractError(f"time {t} is not a node of the grid")
        return i


@dataclass(frozen=True)
class RngStream:
    """One reproducible normal-variate stream per path."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        bits = np.random.Philox(key=np.array([np.uint64(self.seed),
                                              np.uint64(self.stream_id)]))
        return np.random.Generator(bits)

    def normals(self, n: int) -> np.ndarray:
        return self.generator().standard_normal(n)


@dataclass
class SamplePath:
    """Values of one path on a uniform grid, with optional decomposition.

    When ``m_part``/``bv_part`` are present, ``values = values[0] + m_part +
    bv_part`` holds nodewise by construction.  ``qv`` is the running
    quadratic variation when available.
    """

    grid: TimeGrid
    values: np.ndarray
    m_part: Optional[np.ndarray] = None
    bv_part: Optional[np.ndarray] = None
    qv: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ContractError("values length does not match the grid")
        if self.qv is not None and np.any(np.diff(self.qv) < 0):
            raise ContractError("qv must be nondecreasing")

    @property
    def x0(self) -> float:
        return float(self.values[0])

    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def terminal(self) -> float:
        return float(self.values[-1])

    def qv_or_compute(self) -> np.ndarray:
        if self.qv is not None:
            return self.qv
        dx = self.increments()
        return np.concatenate([[0.0], np.cumsum(dx * dx)])

    def shifted(self, offset) -> "SamplePath":
        """Path of values - offset (offset scalar or per-node array)."""
        return SamplePath(self.grid, self.values - offset)

    def write_csv(self, dest) -> None:
        """Dump as CSV: header ``t,value[,m_part,bv_part,qv]``, 17 sig digits."""
        cols = [("t", self.grid.times()), ("value", self.values)]
        if self.m_part is not None and self.bv_part is not None:
            cols.append(("m_part", self.m_part))
            cols.append(("bv_part", self.bv_part))
        if self.qv is not None:
            cols.append(("qv", self.qv))
        own = isinstance(dest, (str, bytes))
        fh = open(dest, "w") if own else dest
        try:
            fh.write(",".join(name for name, _ in cols) + "\n")
            data = np.column_stack([c for _, c in cols])
            for row in data:
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")
        finally:
            if own:
                fh.close()


def brownian_increment_matrix(grid: TimeGrid, seed: int,
                              stream_ids: Sequence[int]) -> np.ndarray:
    """(n_paths, n_steps) Brownian increments, one Philox stream per row.

    Row ``k`` is bit-identical to ``RngStream(seed, stream_ids[k]).normals(n)
    * sqrt(dt)`` regardless of batch composition.
    """
    n = grid.n_steps
    sq = np.sqrt(grid.dt)
    out = np.empty((len(stream_ids), n))
    for k, sid in enumerate(stream_ids):
        out[k] = RngStream(seed, sid).normals(n)
    out *= sq
    return out


def brownian_path(grid: TimeGrid, rng: RngStream) -> SamplePath:
    """Standard Brownian driver started at 0, with qv = running sum of dB^2."""
    db = rng.normals(grid.n_steps) * np.sqrt(grid.dt)
    vals = np.concatenate([[0.0], np.cumsum(db)])
    qv = np.concatenate([[0.0], np.cumsum(db * db)])
    return SamplePath(grid, vals, m_part=vals.copy(),
                      bv_part=np.zeros(grid.n_nodes), qv=qv)


def euler_solve_matrix(b: Callable, sigma: Callable, x0, grid: TimeGrid,
                       db: np.ndarray):
    """Euler-Maruyama over a matrix of drivers.

    ``db`` has shape (n_paths, n_steps); ``x0`` is a scalar or per-path
    array.  Returns ``(X, bv, qv)`` with shapes (n_paths, n_steps + 1).
    ``b`` and ``sigma`` are called with (t_scalar, x_vector).
    """
    P, n = db.shape
    if n != grid.n_steps:
        raise ContractError("driver step count does not match the grid")
    dt = grid.dt
    times = grid.times()
    X = np.empty((P, n + 1))
    bv = np.zeros((P, n + 1))
    qv = np.zeros((P, n + 1))
    X[:, 0] = x0
    for i in range(n):
        xi = X[:, i]
        bi = np.broadcast_to(np.asarray(b(times[i], xi), dtype=float), xi.shape)
        si = np.broadcast_to(np.asarray(sigma(times[i], xi), dtype=float), xi.shape)
        step = bi * dt + si * db[:, i]
        X[:, i + 1] = xi + step
        bv[:, i + 1] = bv[:, i] + bi * dt
        qv[:, i + 1] = qv[:, i] + si * si * dt
        if not np.all(np.isfinite(X[:, i + 1])):
            raise NumericDomainError("Euler step produced a non-finite value",
                                     step=i)
    return X, bv, qv


def euler_solve(b: Callable, sigma: Callable, x0: float, grid: TimeGrid,
                driver: SamplePath) -> SamplePath:
    """Euler-Maruyama for dX = b(t,X) dt + sigma(t,X) dB on the driver's grid.

    The decomposition is populated (drift accumulates into ``bv_part``,
    diffusion into ``m_part``) and ``qv`` accumulates sigma(t_i, X_i)^2 dt.
    """
    if driver.grid != grid:
        raise ContractError("driver grid does not match the requested grid")
    db = driver.increments()[None, :]
    X, bv, qv = euler_solve_matrix(b, sigma, x0, grid, db)
    x, bvp, qvp = X[0], bv[0], qv[0]
    return SamplePath(grid, x, m_part=x - x[0] - bvp, bv_part=bvp, qv=qvp)


def ito_integral(phi: np.ndarray, X: SamplePath) -> SamplePath:
    """Left-endpoint stochastic sum: cumulative sum of phi(t_i) (X_{i+1}-X_i).

    ``phi`` holds the integrand at nodes 0..n-1 (a length n+1 array is
    accepted and its last entry ignored).
    """
    phi = np.asarray(phi, dtype=float)
    n = X.grid.n_steps
    if phi.shape == (n + 1,):
        phi = phi[:-1]
    if phi.shape != (n,):
        raise ContractError("integrand length does not match the grid")
    vals = np.concatenate([[0.0], np.cumsum(phi * X.increments())])
    return SamplePath(X.grid, vals)


def quadratic_variation(X: SamplePath) -> SamplePath:
    """Running sum of squared increments."""
    dx = X.increments()
    vals = np.concatenate([[0.0], np.cumsum(dx * dx)])
    return SamplePath(X.grid, vals, qv=vals)
