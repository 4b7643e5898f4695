"""The local time-space integral Lambda(H) = int int H(s,a) d L^a_s.

On a product of indicators the integral is the four-term local-time
combination

    Lambda(1_{(s,t]} 1_{(x,y]}) = L^y_t - L^y_s - L^x_t + L^x_s,

extended by linearity (``lts_simple``).  Three equivalent representations
extend it to non-simple integrands, each requiring different declared
structure on ``H``:

* time density  (``H(t,a)-H(s,a) = int_{[s,t)} h(u,a) dmu(u)``):
      Lambda = -BY_T(H(T,.)) + int_{[0,T)} BY_u(h(u,.)) dmu(u),
  where BY is :func:`bouleau_yor`;
* space density (``H(t,y)-H(t,x) = int_{[x,y)} g(t,a) dnu(a)``):
      Lambda = -int_R [ int_0^T g(u,a) d_u L^a_u ] dnu(a);
* Vitali (bounded two-parameter variation):
      Lambda = -int_R L^a_T d_a H(T,a) + int int L^a_u d_{(u,a)} H(u,a).

All three agree with ``lts_simple`` on simple functions and with each other
on common domains; ``lts_cross_check`` verifies that at runtime.  A fourth,
shifted-limit form handles levels that move in time (``lts_shifted``).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from ._kernels import shifted_tanaka_kernel, tanaka_field_kernel
from .errors import (ContractError, NumericDomainError,
                     RepresentationUnavailableError, VariationUnboundedError)
from .localtime import LocalTimeField, SideConvention, local_time_field
from .measures import RadonMeasure, Rect, measure_integrate
from .paths import SamplePath

__all__ = [
    "TimeDensity",
    "SpaceDensity",
    "TimeSpaceFunction",
    "LtsResult",
    "CrossCheckReport",
    "bouleau_yor",
    "lts_simple",
    "lts_time_density",
    "lts_space_density",
    "lts_vitali",
    "lts_shifted",
    "lts_cross_check",
]

_LEVEL_CHUNK = 256
_DEFAULT_SPACING = 2.0 ** -8


@dataclass(frozen=True)
class TimeDensity:
    h: Callable
    mu: RadonMeasure


@dataclass(frozen=True)
class SpaceDensity:
    g: Callable
    nu: RadonMeasure


@dataclass
class TimeSpaceFunction:
    """Evaluator for H(t, a) plus optionally declared structure.

    ``eval_fn`` must be left continuous in each argument and vectorised over
    NumPy arrays.  Declared densities are checked against the evaluator on a
    17 x 17 lattice over ``domain`` at construction (pass
    ``validate=False`` to skip, e.g. for very expensive integrands).
    """

    eval_fn: Callable
    time_density: Optional[TimeDensity] = None
    space_density: Optional[SpaceDensity] = None
    vitali: bool = False
    domain: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.0, 1.0), (-4.0, 4.0))
    validate: bool = True

    def __post_init__(self):
        if self.validate:
            self._check_declarations()

    def __call__(self, t, a):
        return self.eval_fn(t, a)

    def _check_declarations(self, n: int = 17, rtol: float = 1e-5, atol: float = 1e-7):
        (t_lo, t_hi), (a_lo, a_hi) = self.domain
        ts = np.linspace(t_lo, t_hi, n)
        xs = np.linspace(a_lo, a_hi, n)
        if self.time_density is not None:
            h, mu = self.time_density.h, self.time_density.mu
            for a in xs:
                Ha = np.broadcast_to(
                    np.asarray(self.eval_fn(ts, a), dtype=float), ts.shape)
                want = Ha - Ha[0]
                for k, t in enumerate(ts):
                    got = measure_integrate(lambda u, _a=a: h(u, _a), mu, (t_lo, t))
                    if abs(got - want[k]) > atol + rtol * max(1.0, abs(want[k])):
                        raise ContractError(
                            f"declared time density disagrees with eval at "
                            f"(t={t:g}, a={a:g}): {got:g} vs {want[k]:g}")
        if self.space_density is not None:
            g, nu = self.space_density.g, self.space_density.nu
            for t in ts:
                Ht = np.broadcast_to(
                    np.asarray(self.eval_fn(t, xs), dtype=float), xs.shape)
                want = Ht - Ht[0]
                for k, y in enumerate(xs):
                    got = measure_integrate(lambda a, _t=t: g(_t, a), nu, (a_lo, y))
                    if abs(got - want[k]) > atol + rtol * max(1.0, abs(want[k])):
                        raise ContractError(
                            f"declared space density disagrees with eval at "
                            f"(t={t:g}, a={y:g}): {got:g} vs {want[k]:g}")

    def available_representations(self):
        out = []
        if self.time_density is not None:
            out.append("time_density")
        if self.space_density is not None:
            out.append("space_density")
        if self.vitali:
            out.append("vitali")
        return out


@dataclass
class LtsResult:
    value: float
    representation: str
    diagnostics: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise NumericDomainError("local time-space integral is not finite")


# ---------------------------------------------------------------------------
# Bouleau-Yor integral
# ---------------------------------------------------------------------------

def bouleau_yor(f: Callable, X: SamplePath, t: float, n_grid: int = 8192) -> float:
    """2 [ F(X_t) - F(X_0) - sum f(X_i) dX_i ] with F an antiderivative of f.

    F is built by cumulative trapezoid quadrature on a grid spanning the
    path range; the value is independent of the antiderivative's reference
    point because only differences of F enter.
    """
    i_t = X.grid.index_of(t)
    lo, hi = float(np.min(X.values)), float(np.max(X.values))
    pad = max(1e-9, 1e-3 * (hi - lo))
    xs = np.linspace(lo - pad, hi + pad, n_grid)
    fv = np.asarray(f(xs), dtype=float)
    if not np.all(np.isfinite(fv)):
        raise NumericDomainError("f is unbounded or undefined on the path range")
    F = np.concatenate([[0.0], np.cumsum(0.5 * (fv[1:] + fv[:-1]) * np.diff(xs))])
    F_t = float(np.interp(X.values[i_t], xs, F))
    F_0 = float(np.interp(X.values[0], xs, F))
    ito = float(np.sum(np.asarray(f(X.values[:i_t]), dtype=float)
                       * np.diff(X.values[:i_t + 1]))) if i_t > 0 else 0.0
    return 2.0 * (F_t - F_0 - ito)


# ---------------------------------------------------------------------------
# simple functions
# ---------------------------------------------------------------------------

def lts_simple(terms: Sequence[Tuple[Rect, float]], field: LocalTimeField) -> float:
    """Integral of a simple function sum_k c_k 1_{rect_k} against the field.

    Every rectangle corner must lie on the field's grid.
    """
    total = 0.0
    for rect, c in terms:
        i_s = field.tgrid.index_of(rect.t_lo)
        i_t = field.tgrid.index_of(rect.t_hi)
        j_x = field.level_index(rect.a_lo)
        j_y = field.level_index(rect.a_hi)
        total += c * (field.L[j_y, i_t] - field.L[j_y, i_s]
                      - field.L[j_x, i_t] + field.L[j_x, i_s])
    return total


# ---------------------------------------------------------------------------
# time-density representation
# ---------------------------------------------------------------------------

def lts_time_density(H: TimeSpaceFunction, X: SamplePath, T: float,
                     n_time_quad: int = 65, max_time_quad: int = 513,
                     rtol: float = 1e-5) -> LtsResult:
    if H.time_density is None:
        raise RepresentationUnavailableError("no time density declared on H")
    h, mu = H.time_density.h, H.time_density.mu
    i_T = X.grid.index_of(T)
    term_T = bouleau_yor(lambda a: H.eval_fn(T, a), X, T)

    def by_at(u: float) -> float:
        # snap u to the nearest grid node for the running Ito sum
        i = int(round((u - X.grid.t0) / X.grid.dt))
        i = min(max(i, 0), i_T)
        return bouleau_yor(lambda a: h(u, a), X, X.grid.t0 + i * X.grid.dt)

    t0 = X.grid.t0
    atom_part = 0.0
    for loc, w in zip(mu.atom_locs, mu.atom_weights):
        if t0 <= loc < T:
            atom_part += w * by_at(float(loc))

    def cont_part(n_nodes: int) -> float:
        if mu.density is None:
            return 0.0
        lo = max(t0, mu.support[0])
        hi = min(T, mu.support[1])
        if hi <= lo:
            return 0.0
        us = np.linspace(lo, hi, n_nodes)
        vals = np.array([by_at(float(u)) for u in us]) * mu.density_at(us)
        return float(np.trapezoid(vals, us))

    n = n_time_quad
    cont = cont_part(n)
    est_err = np.inf
    while n < max_time_quad:
        n = 2 * n - 1
        nxt = cont_part(n)
        est_err = abs(nxt - cont)
        cont = nxt
        if est_err <= rtol * max(1.0, abs(term_T) + abs(cont)):
            break
    value = -term_T + atom_part + cont
    diag = {"time_quad_nodes": n, "est_truncation": float(est_err)
            if np.isfinite(est_err) else 0.0,
            "mu_atom_at_T": mu.atom(T) != 0.0}
    return LtsResult(value, "time_density", diag)


# ---------------------------------------------------------------------------
# space-density representation
# ---------------------------------------------------------------------------

def _nu_level_sets(nu: RadonMeasure, lo: float, hi: float, spacing: float):
    """Atoms of nu in [lo, hi] plus a quadrature grid for its continuous part."""
    atoms = [(float(a), float(w)) for a, w in zip(nu.atom_locs, nu.atom_weights)
             if lo <= a <= hi]
    grid = np.empty(0)
    if nu.density is not None:
        glo = max(lo, nu.support[0])
        ghi = min(hi, nu.support[1])
        if ghi > glo:
            n = max(int(np.ceil((ghi - glo) / spacing)), 8)
            grid = np.linspace(glo, ghi, n + 1)
    return atoms, grid


def _inner_stieltjes_sums(values: np.ndarray, levels: np.ndarray,
                          g: Callable, times_left: np.ndarray,
                          side: SideConvention) -> np.ndarray:
    """sum_i g(t_i, a) (L^a_{i+1} - L^a_i) for each level, chunked."""
    out = np.empty(levels.size)
    for s in range(0, levels.size, _LEVEL_CHUNK):
        chunk = levels[s:s + _LEVEL_CHUNK]
        L, _ = tanaka_field_kernel(values, chunk, side.sgn0)
        gmat = np.asarray(g(times_left[None, :], chunk[:, None]), dtype=float)
        gmat = np.broadcast_to(gmat, (chunk.size, times_left.size))
        out[s:s + _LEVEL_CHUNK] = np.einsum("ji,ji->j", gmat, np.diff(L, axis=1))
    return out


def _inner_cumulative(values: np.ndarray, levels: np.ndarray, weights: np.ndarray,
                      g: Callable, times_left: np.ndarray,
                      side: SideConvention) -> np.ndarray:
    """sum_j w_j * cumsum_i g(t_i, a_j) dL^{a_j}_i, accumulated level-chunked."""
    n = times_left.size
    acc = np.zeros(n + 1)
    for s in range(0, levels.size, _LEVEL_CHUNK):
        chunk = levels[s:s + _LEVEL_CHUNK]
        L, _ = tanaka_field_kernel(values, chunk, side.sgn0)
        gmat = np.asarray(g(times_left[None, :], chunk[:, None]), dtype=float)
        gmat = np.broadcast_to(gmat, (chunk.size, n))
        contrib = np.cumsum(gmat * np.diff(L, axis=1), axis=1)
        acc[1:] += weights[s:s + _LEVEL_CHUNK] @ contrib
    return acc


def _trapezoid_weights(xs: np.ndarray) -> np.ndarray:
    w = np.zeros(xs.size)
    if xs.size >= 2:
        d = np.diff(xs)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
    return w


def lts_space_density_process(H: TimeSpaceFunction, X: SamplePath, T: float,
                              level_spacing: float = _DEFAULT_SPACING,
                              side: SideConvention = SideConvention.RIGHT) -> np.ndarray:
    """The running integral t -> Lambda_t(H) on every grid node up to T,
    computed through the space-density representation."""
    if H.space_density is None:
        raise RepresentationUnavailableError("no space density declared on H")
    g, nu = H.space_density.g, H.space_density.nu
    i_T = X.grid.index_of(T)
    vals = X.values[:i_T + 1]
    times_left = X.grid.times()[:i_T]
    lo = float(np.min(vals)) - level_spacing
    hi = float(np.max(vals)) + level_spacing
    atoms, grid = _nu_level_sets(nu, lo, hi, level_spacing)
    out = np.zeros(i_T + 1)
    if atoms:
        locs = np.array([a for a, _ in atoms])
        wts = np.array([w for _, w in atoms])
        out += _inner_cumulative(vals, locs, wts, g, times_left, side)
    if grid.size:
        wts = _trapezoid_weights(grid) * nu.density_at(grid)
        out += _inner_cumulative(vals, grid, wts, g, times_left, side)
    return -out


def lts_space_density(H: TimeSpaceFunction, X: SamplePath, T: float,
                      level_spacing: float = _DEFAULT_SPACING,
                      side: SideConvention = SideConvention.RIGHT) -> LtsResult:
    if H.space_density is None:
        raise RepresentationUnavailableError("no space density declared on H")
    g, nu = H.space_density.g, H.space_density.nu
    i_T = X.grid.index_of(T)
    vals = X.values[:i_T + 1]
    times_left = X.grid.times()[:i_T]
    lo = float(np.min(vals)) - level_spacing
    hi = float(np.max(vals)) + level_spacing
    atoms, grid = _nu_level_sets(nu, lo, hi, level_spacing)

    total = 0.0
    if atoms:
        locs = np.array([a for a, _ in atoms])
        inner = _inner_stieltjes_sums(vals, locs, g, times_left, side)
        total += float(np.sum(inner * np.array([w for _, w in atoms])))
    est_err = 0.0
    if grid.size:
        inner = _inner_stieltjes_sums(vals, grid, g, times_left, side)
        weighted = inner * nu.density_at(grid)
        fine = float(np.trapezoid(weighted, grid))
        coarse = float(np.trapezoid(weighted[::2], grid[::2]))
        est_err = abs(fine - coarse)
        total += fine
    diag = {"n_atom_levels": len(atoms), "n_grid_levels": int(grid.size),
            "level_spacing": level_spacing, "est_truncation": est_err}
    return LtsResult(-total, "space_density", diag)


# ---------------------------------------------------------------------------
# Vitali (two-parameter Stieltjes) representation
# ---------------------------------------------------------------------------

def _vitali_double_sum(H: TimeSpaceFunction, field: LocalTimeField, i_T: int,
                       nt: int, na: int) -> float:
    times = field.tgrid.times()
    it = np.unique(np.round(np.linspace(0, i_T, nt + 1)).astype(int))
    ja = np.unique(np.round(np.linspace(0, field.levels.size - 1, na + 1)).astype(int))
    ts = times[it]
    As = field.levels[ja]
    Hm = np.asarray(H.eval_fn(ts[:, None], As[None, :]), dtype=float)
    Hm = np.broadcast_to(Hm, (ts.size, As.size))
    inc = Hm[1:, 1:] - Hm[:-1, 1:] - Hm[1:, :-1] + Hm[:-1, :-1]
    corner_L = field.L[np.ix_(ja[1:], it[1:])].T  # (time cells, level cells)
    return float(np.sum(corner_L * inc))


def lts_vitali(H: TimeSpaceFunction, field: LocalTimeField, T: float,
               rtol: float = 1e-4, start_cells: int = 64,
               max_cells: int = 4096) -> LtsResult:
    """-int L^a_T d_a H(T, .) + int int L d_{(u,a)} H via dyadic refinement.

    The first term is the Stieltjes sum over the field's full level grid
    with the local time sampled at the right edge of each level cell (the
    field is right continuous in the level).
    """
    if not H.vitali:
        raise RepresentationUnavailableError("H is not declared Vitali-integrable")
    i_T = field.tgrid.index_of(T)
    As = field.levels
    HT = np.asarray(H.eval_fn(T, As), dtype=float)
    HT = np.broadcast_to(HT, As.shape)
    term1 = -float(np.sum(field.L[1:, i_T] * np.diff(HT)))

    n = start_cells
    prev = _vitali_double_sum(H, field, i_T, n, n)
    est_err = np.inf
    growth = 0
    limit = min(max_cells, i_T, field.levels.size - 1)
    while n < limit:
        n = min(2 * n, limit)
        cur = _vitali_double_sum(H, field, i_T, n, n)
        est_err = abs(cur - prev)
        if est_err <= rtol * max(1.0, abs(term1) + abs(cur)):
            prev = cur
            break
        growth = growth + 1 if abs(cur) > abs(prev) * 1.2 else 0
        if growth >= 4:
            raise VariationUnboundedError(
                "two-parameter increments of H diverge under refinement")
        prev = cur
    diag = {"cells_per_side": n, "est_truncation": float(est_err)
            if np.isfinite(est_err) else 0.0}
    return LtsResult(term1 + prev, "vitali", diag)


# ---------------------------------------------------------------------------
# shifted-limit representation (levels moving in time)
# ---------------------------------------------------------------------------

def lts_shifted(g: Callable, nu: RadonMeasure, Psi: Callable, X: SamplePath,
                T: float, level_spacing: float = _DEFAULT_SPACING,
                side: SideConvention = SideConvention.RIGHT) -> LtsResult:
    """-int_R [ int_0^T g(u,a) d_u L^0_u(X - Psi(., a)) ] dnu(a).

    ``Psi(t, a)`` is the moving level attached to the reference point ``a``;
    it must be continuous and of bounded variation in ``t`` for each ``a``
    (checked discretely on the grid).
    """
    i_T = X.grid.index_of(T)
    vals = X.values[:i_T + 1]
    times = X.grid.times()[:i_T + 1]
    times_left = times[:-1]
    lo = float(np.min(vals)) - level_spacing
    hi = float(np.max(vals)) + level_spacing
    # the level a is active only if the moving level enters the path range
    atoms = [(float(a), float(w)) for a, w in zip(nu.atom_locs, nu.atom_weights)]
    grid = np.empty(0)
    if nu.density is not None:
        glo, ghi = _active_window(Psi, times, nu.support, lo, hi)
        if ghi > glo:
            n = max(int(np.ceil((ghi - glo) / level_spacing)), 8)
            grid = np.linspace(glo, ghi, n + 1)

    def inner_for(levels: np.ndarray) -> np.ndarray:
        out = np.empty(levels.size)
        for s in range(0, levels.size, _LEVEL_CHUNK):
            chunk = levels[s:s + _LEVEL_CHUNK]
            shifts = np.asarray(Psi(times[None, :], chunk[:, None]), dtype=float)
            shifts = np.broadcast_to(shifts, (chunk.size, times.size)).copy()
            if not np.all(np.isfinite(shifts)):
                raise VariationUnboundedError("Psi is not finite on the grid")
            tv = np.sum(np.abs(np.diff(shifts, axis=1)), axis=1)
            if np.any(~np.isfinite(tv)):
                raise VariationUnboundedError("Psi has unbounded variation in t")
            L = shifted_tanaka_kernel(vals, shifts, side.sgn0)
            gmat = np.asarray(g(times_left[None, :], chunk[:, None]), dtype=float)
            gmat = np.broadcast_to(gmat, (chunk.size, times_left.size))
            out[s:s + _LEVEL_CHUNK] = np.einsum("ji,ji->j", gmat, np.diff(L, axis=1))
        return out

    total = 0.0
    if atoms:
        locs = np.array([a for a, _ in atoms])
        inner = inner_for(locs)
        total += float(np.sum(inner * np.array([w for _, w in atoms])))
    est_err = 0.0
    if grid.size:
        inner = inner_for(grid)
        weighted = inner * nu.density_at(grid)
        fine = float(np.trapezoid(weighted, grid))
        coarse = float(np.trapezoid(weighted[::2], grid[::2]))
        est_err = abs(fine - coarse)
        total += fine
    diag = {"n_atom_levels": len(atoms), "n_grid_levels": int(grid.size),
            "level_spacing": level_spacing, "est_truncation": est_err}
    return LtsResult(-total, "shifted", diag)


def _active_window(Psi, times, support, lo, hi):
    """Reference-point window on which X - Psi(., a) can visit 0.

    Assumes Psi is nondecreasing in ``a`` (the inverse-map setting it is
    used for); probes a coarse lattice and pads by the observed time sweep.
    """
    glo = max(support[0], lo - 1.0)
    ghi = min(support[1], hi + 1.0)
    probe = np.linspace(glo, ghi, 33) if ghi > glo else np.array([glo])
    sweep = 0.0
    tprobe = times[:: max(1, times.size // 64)]
    for a in probe:
        pa = np.asarray(Psi(tprobe, a), dtype=float)
        sweep = max(sweep, float(np.max(np.abs(pa - a))))
    return max(support[0], lo - sweep - 1e-12), min(support[1], hi + sweep + 1e-12)


# ---------------------------------------------------------------------------
# cross-representation consistency check
# ---------------------------------------------------------------------------

@dataclass
class CrossCheckReport:
    values: dict
    pairwise_abs: dict
    pairwise_rel: dict
    diagnostics: dict

    @property
    def max_rel_diff(self) -> float:
        return max(self.pairwise_rel.values()) if self.pairwise_rel else 0.0

    @property
    def max_abs_diff(self) -> float:
        return max(self.pairwise_abs.values()) if self.pairwise_abs else 0.0

    def to_json(self) -> dict:
        return {"values": self.values, "pairwise_abs": self.pairwise_abs,
                "pairwise_rel": self.pairwise_rel, "diagnostics": self.diagnostics}


def lts_cross_check(H: TimeSpaceFunction, X: SamplePath, T: float,
                    field: Optional[LocalTimeField] = None,
                    level_spacing: float = _DEFAULT_SPACING) -> CrossCheckReport:
    """Evaluate every declared representation of Lambda(H) and compare."""
    reps = H.available_representations()
    if len(reps) < 2:
        raise ContractError("cross-check needs at least two declared representations")
    values, diags = {}, {}
    if "time_density" in reps:
        r = lts_time_density(H, X, T)
        values[r.representation], diags[r.representation] = r.value, r.diagnostics
    if "space_density" in reps:
        r = lts_space_density(H, X, T, level_spacing=level_spacing)
        values[r.representation], diags[r.representation] = r.value, r.diagnostics
    if "vitali" in reps:
        if field is None:
            pad = level_spacing
            lo = float(np.min(X.values)) - pad
            hi = float(np.max(X.values)) + pad
            n = max(int(np.ceil((hi - lo) / level_spacing)), 8)
            field = local_time_field(X, np.linspace(lo, hi, n + 1))
        r = lts_vitali(H, field, T)
        values[r.representation], diags[r.representation] = r.value, r.diagnostics
    pairwise_abs, pairwise_rel = {}, {}
    names = sorted(values)
    for i in range(len(names)):
        for k in range(i + 1, len(names)):
            u, v = values[names[i]], values[names[k]]
            key = f"{names[i]}|{names[k]}"
            pairwise_abs[key] = abs(u - v)
            pairwise_rel[key] = abs(u - v) / max(abs(u), abs(v), 1e-30)
    return CrossCheckReport(values, pairwise_abs, pairwise_rel, diags)
