"""SDEs with a local-time term, solved through a space transformation.

The equation

    X_t = X_0 + int b(s, X_s) ds + int sigma(s, X_s) dB_s
          + int_R int_0^t h(s, a) d_s L^a_s(X) dnu(a)

(right local time, finite ``nu``, ``|h(s,a) nu({a})| < 1/2``) is mapped to a
classical Ito SDE by the strictly increasing space transform

    F(t, x)    = int_0^x exp(zeta(t, a)) psi(t, a) da,
    zeta(t, x) = -2 int_0^x h(t, z) dnu_c(z),
    psi(t, x)  = prod_{z < x, z atom} (1 - 2 h(t, z) nu({z})),

whose factors are exactly what the right-local-time Tanaka calculus needs to
cancel the local-time term: the atom condition |h nu({z})| < 1/2 is the same
as every psi factor lying in (0, 2).  Y_t = F(t, X_t) then solves

    dY = F_t(t, G(t, Y)) dt + (F_x sigma)(t, G(t, Y)) dB,

with G(t, .) the space inverse of F(t, .).  A nonzero drift b is first
absorbed into the local-time term by replacing the reference measure with
``nu + Lebesgue`` and extending h by b / sigma^2 on the continuous part.

Skew Brownian motion (b = 0, sigma = 1, h = 1, nu = beta * delta_0) is the
flagship special case, available through :func:`skew_bm`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from ._kernels import (euler_transformed_kernel, occupation_field_kernel,
                       tanaka_field_kernel)
from .errors import ContractError, NumericDomainError
from .exprcat import Expr, parse_expr
from .localtime import SideConvention
from .ltspace import _trapezoid_weights
from .measures import RadonMeasure
from .paths import (RngStream, SamplePath, TimeGrid, brownian_increment_matrix,
                    brownian_path)

__all__ = [
    "SdeltSpec",
    "TransformPair",
    "Violation",
    "validate_spec",
    "build_transform",
    "transformed_coeffs",
    "solve_sdelt",
    "solve_sdelt_terminals",
    "absorb_drift",
    "verify_sdelt",
    "skew_bm",
    "load_sdelt_spec",
]

_SIDE = SideConvention.RIGHT
_INV_SQRT3 = 1.0 / np.sqrt(3.0)


class _FastPoly:
    """Piecewise-cubic evaluation from raw PCHIP coefficients.

    Same values as the scipy interpolator it is built from, without the
    per-call validation overhead (the solver evaluates it every step).
    """

    __slots__ = ("bp", "c")

    def __init__(self, pchip: PchipInterpolator):
        self.bp = pchip.x
        self.c = pchip.c

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        i = np.clip(np.searchsorted(self.bp, v) - 1, 0, self.bp.size - 2)
        d = v - self.bp[i]
        c = self.c
        return ((c[0, i] * d + c[1, i]) * d + c[2, i]) * d + c[3, i]


@dataclass
class SdeltSpec:
    """Coefficients (b, sigma, h, nu, x0) of the local-time SDE.

    ``b``, ``sigma``, ``h`` are vectorised callables of (t, x); the optional
    time derivatives feed the transform's drift when h is time dependent.
    """

    b: Callable
    sigma: Callable
    h: Callable
    nu: RadonMeasure
    x0: float = 0.0
    h_t: Optional[Callable] = None
    b_t: Optional[Callable] = None
    sigma_t: Optional[Callable] = None


@dataclass(frozen=True)
class Violation:
    kind: str
    where: str
    detail: str

    def __str__(self):
        return f"{self.kind} at {self.where}: {self.detail}"


def validate_spec(spec: SdeltSpec, t_range: Tuple[float, float] = (0.0, 1.0),
                  x_range: Tuple[float, float] = (-6.0, 6.0),
                  n: int = 17) -> List[Violation]:
    """Check the standing assumptions on a sample lattice.

    Returns every violation found (empty list means ok): sigma bounded below
    by a positive constant, bounded coefficients, |h * nu({a})| < 1/2 at
    every atom, and finite total mass of nu.
    """
    out: List[Violation] = []
    ts = np.linspace(*t_range, n)
    xs = np.linspace(*x_range, n)
    tt, xx = np.meshgrid(ts, xs, indexing="ij")
    for name, fn in (("b", spec.b), ("sigma", spec.sigma), ("h", spec.h)):
        vals = np.broadcast_to(np.asarray(fn(tt, xx), dtype=float), tt.shape)
        if not np.all(np.isfinite(vals)):
            out.append(Violation("unbounded_coefficient", name,
                                 "non-finite value on the sample lattice"))
    sig = np.broadcast_to(np.asarray(spec.sigma(tt, xx), dtype=float), tt.shape)
    if np.all(np.isfinite(sig)):
        smin = float(np.min(sig))
        if smin <= 0.0:
            i, j = np.unravel_index(np.argmin(sig), sig.shape)
            out.append(Violation("sigma_lower_bound",
                                 f"(t={ts[i]:g}, x={xs[j]:g})",
                                 f"sigma = {smin:g} is not bounded away from 0"))
    for loc, w in zip(spec.nu.atom_locs, spec.nu.atom_weights):
        hv = np.abs(np.asarray(spec.h(ts, float(loc)), dtype=float) * w)
        worst = float(np.max(hv))
        if worst >= 0.5:
            out.append(Violation("atom_condition", f"atom {loc:g}",
                                 f"|h * nu({{a}})| = {worst:g} >= 1/2"))
    if spec.nu.density is not None:
        lo, hi = spec.nu.support
        if not (np.isfinite(lo) and np.isfinite(hi)):
            out.append(Violation("nu_not_finite", "density support",
                                 "density part has unbounded support"))
        else:
            tv = spec.nu.total_variation_on((lo, hi + 1e-12))
            if not np.isfinite(tv):
                out.append(Violation("nu_not_finite", "density part",
                                     "total variation is not finite"))
    return out


# ---------------------------------------------------------------------------
# transform tables
# ---------------------------------------------------------------------------

def _gl2_segment_integrals(fn, xs: np.ndarray) -> np.ndarray:
    """Two-point Gauss-Legendre integral of fn over every cell of xs."""
    mid = 0.5 * (xs[1:] + xs[:-1])
    half = 0.5 * np.diff(xs)
    off = half * _INV_SQRT3
    f1 = np.asarray(fn(mid - off), dtype=float)
    f2 = np.asarray(fn(mid + off), dtype=float)
    if not (np.all(np.isfinite(f1)) and np.all(np.isfinite(f2))):
        raise NumericDomainError("transform integrand is not finite")
    return half * (f1 + f2)


def _cumulative_from_zero(seg: np.ndarray, i0: int) -> np.ndarray:
    """Antiderivative on the grid, anchored to 0 at node i0 (no cancellation
    near the anchor)."""
    out = np.empty(seg.size + 1)
    out[i0] = 0.0
    out[i0 + 1:] = np.cumsum(seg[i0:])
    out[:i0] = -np.cumsum(seg[:i0][::-1])[::-1]
    return out


class _SpaceTable:
    """F(t, .), zeta(t, .) and friends at one fixed time."""

    def __init__(self, t: float, h, nu: RadonMeasure, h_t, x_lo: float,
                 x_hi: float, n_grid: int):
        self.t = t
        locs = nu.atom_locs
        wts = nu.atom_weights
        keep = wts != 0.0
        locs, wts = locs[keep], wts[keep]
        anchors = {0.0, x_lo, x_hi}
        anchors.update(float(a) for a in locs if x_lo < a < x_hi)
        anchors.update(float(p) for p in nu.breaks if x_lo < p < x_hi)
        for p in nu.support:
            if np.isfinite(p) and x_lo < p < x_hi:
                anchors.add(float(p))
        xs = np.union1d(np.array(sorted(anchors)), np.linspace(x_lo, x_hi, n_grid))
        self.xs = xs
        self.i0 = int(np.searchsorted(xs, 0.0))
        if xs[self.i0] != 0.0:
            raise ContractError("transform grid must contain the base point 0")

        self.atom_locs = locs
        factors = 1.0 - 2.0 * np.asarray(h(t, locs), dtype=float) * wts \
            if locs.size else np.empty(0)
        if np.any(factors <= 0.0):
            raise ContractError(
                "|h * nu({a})| >= 1/2 at an atom: transform degenerates")
        self.psi_cum = np.concatenate([[1.0], np.cumprod(factors)])

        if nu.density is not None:
            zeta_seg = _gl2_segment_integrals(
                lambda z: -2.0 * np.asarray(h(t, z), dtype=float) * nu.density_at(z),
                xs)
        else:
            zeta_seg = np.zeros(xs.size - 1)
        zeta_vals = _cumulative_from_zero(zeta_seg, self.i0)
        self._zeta = _FastPoly(PchipInterpolator(xs, zeta_vals, extrapolate=True))
        self._flat_zeta = not np.any(zeta_vals)

        f_seg = _gl2_segment_integrals(lambda z: self._fx_raw(z), xs)
        F_vals = _cumulative_from_zero(f_seg, self.i0)
        self.F_vals = F_vals
        self._F = _FastPoly(PchipInterpolator(xs, F_vals, extrapolate=True))
        self.F_lo = float(F_vals[0])
        self.F_hi = float(F_vals[-1])
        self.fx_min = float(np.min(self._fx_raw(xs)))

        self._Ft = None
        if h_t is not None:
            if nu.density is not None:
                zt_seg = _gl2_segment_integrals(
                    lambda z: -2.0 * np.asarray(h_t(t, z), dtype=float)
                    * nu.density_at(z), xs)
            else:
                zt_seg = np.zeros(xs.size - 1)
            zt_vals = _cumulative_from_zero(zt_seg, self.i0)
            zt = PchipInterpolator(xs, zt_vals, extrapolate=True)
            if locs.size:
                ratios = (-2.0 * np.asarray(h_t(t, locs), dtype=float) * wts
                          / factors)
                ratio_cum = np.concatenate([[0.0], np.cumsum(ratios)])
            else:
                ratio_cum = np.zeros(1)

            def ft_integrand(z):
                idx = np.searchsorted(self.atom_locs, z, side="left")
                return self._fx_raw(z) * (zt(z) + ratio_cum[idx])

            ft_seg = _gl2_segment_integrals(ft_integrand, xs)
            self._Ft = PchipInterpolator(xs, _cumulative_from_zero(ft_seg, self.i0),
                                         extrapolate=True)

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        if not self.atom_locs.size:
            return np.ones(x.shape)
        return self.psi_cum[np.searchsorted(self.atom_locs, x, side="left")]

    def zeta(self, x):
        return self._zeta(np.asarray(x, dtype=float))

    def _fx_raw(self, x):
        x = np.asarray(x, dtype=float)
        if self._flat_zeta:
            return self.psi(x)
        return np.exp(self._zeta(x)) * self.psi(x)

    fx = _fx_raw

    def F(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.xs[0]) or np.any(x > self.xs[-1]):
            raise NumericDomainError("F evaluated outside the table range")
        return self._F(x)

    def Ft(self, x):
        if self._Ft is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self._Ft(np.asarray(x, dtype=float))

    def G(self, y, warm: Optional[np.ndarray] = None, tol: float = 1e-13):
        """Invert F by bracketed Newton with bisection fallback."""
        y = np.asarray(y, dtype=float)
        if np.any(y < self.F_lo) or np.any(y > self.F_hi):
            raise NumericDomainError("G evaluated outside the transform range"
                                     " (widen x_range)")
        k = np.clip(np.searchsorted(self.F_vals, y) - 1, 0, self.xs.size - 2)
        lo = self.xs[k]
        hi = self.xs[k + 1]
        if warm is not None:
            x = np.clip(np.asarray(warm, dtype=float), lo, hi)
        else:
            x = np.interp(y, self.F_vals, self.xs)
        scale = tol * (1.0 + np.abs(y))
        for _ in range(80):
            f = self._F(x) - y
            step = f / self._fx_raw(x)
            live = np.abs(step) > scale
            if not np.any(live):
                break
            lo = np.where(f < 0, x, lo)
            hi = np.where(f > 0, x, hi)
            xn = x - step
            out = (xn < lo) | (xn > hi)
            x = np.where(live, np.where(out, 0.5 * (lo + hi), xn), x)
        resid = np.abs(self._F(x) - y)
        if np.any(resid > 1e-8 * (1.0 + np.abs(y))):
            raise NumericDomainError(
                f"transform inversion failed to converge "
                f"(max residual {float(np.max(resid)):.3g})")
        return x


@dataclass
class TransformPair:
    """The maps (F, F_x, F_t, G) with their zeta / psi components.

    ``identity`` short-circuits everything to F(t,x) = x when nu has neither
    (nonzero) atoms nor a density, so degenerate problems reduce to the
    classical scheme exactly.
    """

    h: Callable
    nu: RadonMeasure
    h_t: Optional[Callable]
    time_homogeneous: bool
    x_range: Tuple[float, float]
    n_grid: int
    identity: bool
    _cache: dict = dc_field(default_factory=dict)

    def table(self, t: float) -> _SpaceTable:
        key = None if self.time_homogeneous else float(t)
        tab = self._cache.get(key)
        if tab is None:
            tab = _SpaceTable(0.0 if key is None else t, self.h, self.nu,
                              self.h_t, self.x_range[0], self.x_range[1],
                              self.n_grid)
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = tab
        return tab

    def F(self, t, x):
        if self.identity:
            return np.asarray(x, dtype=float).copy()
        return self.table(t).F(x)

    def F_x(self, t, x):
        if self.identity:
            return np.ones_like(np.asarray(x, dtype=float))
        return self.table(t).fx(x)

    def F_t(self, t, x):
        # a time-constant h makes F(t, .) itself time-constant, so F_t = 0
        if self.identity or self.time_homogeneous:
            return np.zeros_like(np.asarray(x, dtype=float))
        if self.h_t is None:
            d = 1e-6
            return (self.table(t + d).F(x) - self.table(t - d).F(x)) / (2 * d)
        return self.table(t).Ft(x)

    def G(self, t, y, warm: Optional[np.ndarray] = None):
        if self.identity:
            return np.asarray(y, dtype=float).copy()
        return self.table(t).G(y, warm=warm)

    def zeta(self, t, x):
        if self.identity:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.table(t).zeta(x)

    def psi(self, t, x):
        if self.identity:
            return np.ones_like(np.asarray(x, dtype=float))
        return self.table(t).psi(x)


def _probe_time_homogeneous(h, nu: RadonMeasure, x_range) -> bool:
    ts = np.array([0.0, 0.31, 0.73, 1.0])
    xs = np.linspace(x_range[0], x_range[1], 17)
    xs = np.union1d(xs, nu.atom_locs)
    ref = np.broadcast_to(np.asarray(h(ts[0], xs), dtype=float), xs.shape)
    for t in ts[1:]:
        cur = np.broadcast_to(np.asarray(h(t, xs), dtype=float), xs.shape)
        if not np.array_equal(ref, cur):
            return False
    return True


def build_transform(h: Callable, nu: RadonMeasure, h_t: Optional[Callable] = None,
                    x_range: Tuple[float, float] = (-8.0, 8.0),
                    n_grid: int = 4097,
                    time_homogeneous: Optional[bool] = None) -> TransformPair:
    """Construct the transform pair for data (h, nu).

    zeta is quadratured over the continuous part of nu (two-point Gauss per
    cell of a grid whose nodes include every atom and density breakpoint,
    anchored at 0), psi is the exact finite product over atoms, F the
    cumulative quadrature of exp(zeta) psi, and G a bracketed-Newton inverse
    with bisection fallback.
    """
    identity = (not np.any(nu.atom_weights != 0.0)) and nu.density is None
    if time_homogeneous is None:
        time_homogeneous = identity or _probe_time_homogeneous(h, nu, x_range)
    pair = TransformPair(h, nu, h_t, time_homogeneous, tuple(x_range),
                         int(n_grid), identity)
    if not identity:
        pair.table(0.0)  # build (and so validate) eagerly
    return pair


def transformed_coeffs(spec: SdeltSpec, pair: TransformPair):
    """Drift and diffusion of the transformed classical SDE in (t, y)."""

    def drift(t, y):
        x = pair.G(t, y)
        return pair.F_t(t, x)

    def diffusion(t, y):
        x = pair.G(t, y)
        return pair.F_x(t, x) * np.asarray(spec.sigma(t, x), dtype=float)

    return drift, diffusion


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------

def _sigma_sup(spec: SdeltSpec, t_range, x_range) -> float:
    ts = np.linspace(*t_range, 9)
    xs = np.linspace(*x_range, 33)
    tt, xx = np.meshgrid(ts, xs, indexing="ij")
    return float(np.max(np.abs(np.asarray(spec.sigma(tt, xx), dtype=float))))


def _working_range(spec: SdeltSpec, grid: TimeGrid) -> Tuple[float, float]:
    # fixed from (spec, grid) alone so results do not depend on batching
    span = grid.T - grid.t0
    probe = (spec.x0 - 4.0, spec.x0 + 4.0)
    sig = _sigma_sup(spec, (grid.t0, grid.T), probe)
    bmax = float(np.max(np.abs(np.asarray(
        spec.b(np.linspace(grid.t0, grid.T, 9)[:, None],
               np.linspace(*probe, 9)[None, :]), dtype=float))))
    K = max(8.0, 12.0 * sig * np.sqrt(span) + 2.0 * bmax * span + 2.0)
    return (spec.x0 - K, spec.x0 + K)


def _sigma_constant(sigma, t_range=(0.0, 1.0), x_range=(-8.0, 8.0)) -> Optional[float]:
    tt, xx = np.meshgrid(np.linspace(*t_range, 5), np.linspace(*x_range, 17),
                         indexing="ij")
    vals = np.broadcast_to(np.asarray(sigma(tt, xx), dtype=float), tt.shape)
    v0 = float(vals.flat[0])
    return v0 if np.all(vals == v0) else None


def _euler_transformed(pair: TransformPair, sigma, x0: float, grid: TimeGrid,
                       db: np.ndarray, keep_path: bool):
    """Euler on the transformed SDE; returns X paths or terminals."""
    P, n = db.shape
    times = grid.times()
    dt = grid.dt
    y = np.full(P, float(np.asarray(pair.F(times[0], np.array([x0])))[0]))
    x = np.full(P, float(x0))
    X = np.empty((P, n + 1)) if keep_path else None
    homog = pair.identity or pair.time_homogeneous
    tab = None if pair.identity else pair.table(times[0])
    if homog and not pair.identity:
        sig = _sigma_constant(sigma, (grid.t0, grid.T), pair.x_range)
        if sig is not None:
            out, errs = euler_transformed_kernel(
                db, float(y[0]), float(x0), sig, tab.xs, tab.F_vals,
                tab._F.c, tab._zeta.c, tab.atom_locs, tab.psi_cum,
                tab._flat_zeta, tab.F_lo, tab.F_hi, keep_path)
            if np.any(errs):
                raise NumericDomainError(
                    "a path left the transform range (widen x_range)")
            return out if keep_path else out[:, 0]
    for i in range(n):
        t = times[i]
        if i > 0:
            if pair.identity:
                x = y
            elif homog:
                x = tab.G(y, warm=x)
            else:
                x = pair.G(t, y, warm=x)
        if keep_path:
            X[:, i] = x
        if pair.identity:
            fx = 1.0
        elif homog:
            fx = tab.fx(x)
        else:
            fx = np.broadcast_to(np.asarray(pair.F_x(t, x), dtype=float), x.shape)
        dif = fx * np.broadcast_to(np.asarray(sigma(t, x), dtype=float), x.shape)
        step = dif * db[:, i]
        if not homog:
            drift = np.broadcast_to(np.asarray(pair.F_t(t, x), dtype=float), x.shape)
            step = drift * dt + step
        y = y + step
        if not np.all(np.isfinite(y)):
            raise NumericDomainError("transformed Euler step left the numeric domain",
                                     step=i)
    x = y if pair.identity else (tab.G(y, warm=x) if homog
                                 else pair.G(times[n], y, warm=x))
    if keep_path:
        X[:, n] = x
        return X
    return x


def solve_sdelt(spec: SdeltSpec, grid: TimeGrid, rng) -> SamplePath:
    """Solve the local-time SDE along one driver path.

    ``rng`` is an :class:`RngStream` (a Brownian driver is generated from
    it) or an existing driver :class:`SamplePath` on the same grid.
    Deterministic given (spec, grid, rng).
    """
    violations = validate_spec(spec, t_range=(grid.t0, grid.T))
    if violations:
        raise ContractError("; ".join(str(v) for v in violations))
    work = absorb_drift(spec)
    driver = rng if isinstance(rng, SamplePath) else brownian_path(grid, rng)
    if driver.grid != grid:
        raise ContractError("driver grid does not match the requested grid")
    pair = build_transform(work.h, work.nu, h_t=work.h_t,
                           x_range=_working_range(spec, grid))
    X = _euler_transformed(pair, work.sigma, work.x0, grid,
                           driver.increments()[None, :], keep_path=True)[0]
    return SamplePath(grid, X)


def solve_sdelt_terminals(spec: SdeltSpec, grid: TimeGrid, seed: int,
                          stream_ids: Sequence[int],
                          batch: int = 2048) -> np.ndarray:
    """Terminal values X_T for many driver streams, batch-vectorised.

    Each stream's result is bit-identical to the corresponding
    :func:`solve_sdelt` call; only the peak memory differs.
    """
    violations = validate_spec(spec, t_range=(grid.t0, grid.T))
    if violations:
        raise ContractError("; ".join(str(v) for v in violations))
    work = absorb_drift(spec)
    pair = build_transform(work.h, work.nu, h_t=work.h_t,
                           x_range=_working_range(spec, grid))
    ids = list(stream_ids)
    out = np.empty(len(ids))
    for s in range(0, len(ids), batch):
        chunk = ids[s:s + batch]
        db = brownian_increment_matrix(grid, seed, chunk)
        out[s:s + len(chunk)] = _euler_transformed(pair, work.sigma, work.x0,
                                                   grid, db, keep_path=False)
    return out


# ---------------------------------------------------------------------------
# drift absorption
# ---------------------------------------------------------------------------

def _is_zero_on_lattice(fn, t_range=(0.0, 1.0), x_range=(-6.0, 6.0), n=9) -> bool:
    tt, xx = np.meshgrid(np.linspace(*t_range, n), np.linspace(*x_range, n),
                         indexing="ij")
    return not np.any(np.asarray(fn(tt, xx), dtype=float))


def absorb_drift(spec: SdeltSpec) -> SdeltSpec:
    """Fold the drift into the local-time term: b -> 0, nu -> nu + Lebesgue,
    h extended by b / sigma^2 on the continuous part (atoms keep h).

    The Radon-Nikodym bookkeeping is done symbolically on the two-part
    (atoms, density) representation; atom locations, weights and h-values
    at atoms are untouched.
    """
    if _is_zero_on_lattice(spec.b):
        return spec
    probe = np.linspace(-6.0, 6.0, 33)
    ratio = np.asarray(spec.b(0.5, probe), dtype=float) \
        / np.asarray(spec.sigma(0.5, probe), dtype=float) ** 2
    if not np.all(np.isfinite(ratio)):
        raise ContractError("b / sigma^2 is not finite on the sample lattice")

    rho_old = spec.nu.density_at
    atom_locs = spec.nu.atom_locs
    h_old, b_fn, s_fn = spec.h, spec.b, spec.sigma

    def h_new(t, a):
        a = np.asarray(a, dtype=float)
        r = rho_old(a)
        base = (np.asarray(h_old(t, a), dtype=float) * r
                + np.asarray(b_fn(t, a), dtype=float)
                / np.asarray(s_fn(t, a), dtype=float) ** 2) / (r + 1.0)
        if atom_locs.size:
            on_atom = np.isin(a, atom_locs)
            base = np.where(on_atom,
                            np.broadcast_to(np.asarray(h_old(t, a), dtype=float),
                                            base.shape),
                            base)
        return base

    h_t_new = None
    if spec.h_t is not None or spec.b_t is not None or spec.sigma_t is not None:
        ht_old = spec.h_t if spec.h_t is not None else (lambda t, a: 0.0)
        bt = spec.b_t if spec.b_t is not None else (lambda t, a: 0.0)
        st = spec.sigma_t if spec.sigma_t is not None else (lambda t, a: 0.0)

        def h_t_new(t, a):
            a = np.asarray(a, dtype=float)
            r = rho_old(a)
            sig = np.asarray(s_fn(t, a), dtype=float)
            dratio = (np.asarray(bt(t, a), dtype=float) * sig
                      - 2.0 * np.asarray(b_fn(t, a), dtype=float)
                      * np.asarray(st(t, a), dtype=float)) / sig ** 3
            base = (np.asarray(ht_old(t, a), dtype=float) * r + dratio) / (r + 1.0)
            if atom_locs.size:
                on_atom = np.isin(a, atom_locs)
                base = np.where(on_atom,
                                np.broadcast_to(np.asarray(ht_old(t, a),
                                                           dtype=float), base.shape),
                                base)
            return base

    dens_old = spec.nu.density

    def dens_new(a):
        a = np.asarray(a, dtype=float)
        out = np.ones(a.shape)
        if dens_old is not None:
            out = out + rho_old(a)
        return out

    breaks = tuple(sorted(set(spec.nu.breaks)
                          | {v for v in spec.nu.support if np.isfinite(v)}))
    nu_new = RadonMeasure(spec.nu.atom_locs, spec.nu.atom_weights, dens_new,
                          (-np.inf, np.inf), breaks)
    zero = lambda t, x: np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)))  # noqa: E731
    return replace(spec, b=zero, b_t=None, nu=nu_new, h=h_new, h_t=h_t_new)


# ---------------------------------------------------------------------------
# verification and the skew wrapper
# ---------------------------------------------------------------------------

def verify_sdelt(X: SamplePath, spec: SdeltSpec, driver: SamplePath,
                 level_spacing: float = 2.0 ** -8) -> "ResidualReport":
    """Residual of the local-time SDE along a solved path.

    The local-time term uses the Tanaka estimator at nu's atoms and the
    occupation-window field (bandwidth sqrt(dt)) on its continuous part.
    """
    from .calculus import ResidualReport
    if X.grid != driver.grid:
        raise ContractError("solution and driver grids differ")
    n = X.grid.n_steps
    times = X.grid.times()
    dt = X.grid.dt
    vals = X.values
    b_vals = np.broadcast_to(np.asarray(spec.b(times[:-1], vals[:-1]),
                                        dtype=float), (n,))
    s_vals = np.broadcast_to(np.asarray(spec.sigma(times[:-1], vals[:-1]),
                                        dtype=float), (n,))
    b_term = np.concatenate([[0.0], np.cumsum(b_vals * dt)])
    s_term = np.concatenate([[0.0], np.cumsum(s_vals * driver.increments())])
    lt_term = np.zeros(n + 1)
    nu = spec.nu
    if nu.atom_locs.size:
        L, _ = tanaka_field_kernel(vals, nu.atom_locs, _SIDE.sgn0)
        for j, (loc, w) in enumerate(zip(nu.atom_locs, nu.atom_weights)):
            hvals = np.broadcast_to(np.asarray(spec.h(times[:-1], float(loc)),
                                               dtype=float), (n,))
            lt_term[1:] += w * np.cumsum(hvals * np.diff(L[j]))
    if nu.density is not None:
        eps = np.sqrt(dt)
        lo = max(float(np.min(vals)) - level_spacing, nu.support[0])
        hi = min(float(np.max(vals)) + level_spacing, nu.support[1])
        if hi > lo:
            m = max(int(np.ceil((hi - lo) / level_spacing)), 8)
            levels = np.linspace(lo, hi, m + 1)
            wts = _trapezoid_weights(levels) * nu.density_at(levels)
            dqv = np.diff(X.qv_or_compute())
            chunksz = 256
            for s in range(0, levels.size, chunksz):
                chunk = levels[s:s + chunksz]
                Locc = occupation_field_kernel(vals, dqv, chunk, eps,
                                               _SIDE.window_mode)
                hmat = np.asarray(spec.h(times[None, :-1], chunk[:, None]),
                                  dtype=float)
                hmat = np.broadcast_to(hmat, (chunk.size, n))
                contrib = np.cumsum(hmat * np.diff(Locc, axis=1), axis=1)
                lt_term[1:] += wts[s:s + chunksz] @ contrib
    residual = vals - spec.x0 - b_term - s_term - lt_term
    return ResidualReport(times, residual,
                          {"dt": dt, "level_spacing": level_spacing})


def skew_bm(beta: float, grid: TimeGrid, rng) -> SamplePath:
    """Skew Brownian motion X = X_0 + B + beta L^0(X), right local time.

    Requires |beta| < 1/2: at |beta| = 1/2 the atom condition
    |h nu({0})| < 1/2 fails and no strong solution exists.
    """
    if not abs(beta) < 0.5:
        raise ContractError(
            f"|beta| = {abs(beta):g} >= 1/2: the atom admissibility bound "
            "|h * nu({a})| < 1/2 is sharp and cannot be relaxed")
    return solve_sdelt(skew_spec(beta), grid, rng)


def skew_spec(beta: float, x0: float = 0.0) -> SdeltSpec:
    one = parse_expr("one")
    zero = parse_expr("zero")
    return SdeltSpec(b=zero.fn, sigma=one.fn, h=one.fn, h_t=zero.fn,
                     nu=RadonMeasure(np.array([0.0]), np.array([float(beta)])),
                     x0=x0)


def load_sdelt_spec(obj) -> SdeltSpec:
    """Build an :class:`SdeltSpec` from its JSON form.

    ``{"b": expr, "sigma": expr, "h": expr,
       "nu": {"atoms": [[loc, w], ...], "density": expr | null,
              "support": [lo, hi]},
       "x0": float}``

    where every ``expr`` comes from the coefficient catalog
    (:mod:`ltcalc.exprcat`); time derivatives are taken from the catalog.
    """
    if isinstance(obj, str):
        obj = json.loads(obj)
    b = parse_expr(obj.get("b", "zero"))
    sigma = parse_expr(obj.get("sigma", "one"))
    h = parse_expr(obj.get("h", "zero"))
    nu_obj = obj.get("nu", {}) or {}
    atoms = nu_obj.get("atoms", []) or []
    locs = np.array([float(a[0]) for a in atoms])
    wts = np.array([float(a[1]) for a in atoms])
    order = np.argsort(locs)
    dens_expr = nu_obj.get("density")
    density = None
    support = (-np.inf, np.inf)
    if dens_expr is not None:
        de = parse_expr(dens_expr)
        density = lambda a, _de=de: _de.fn(0.0, a)  # noqa: E731
        sup = nu_obj.get("support")
        if sup is not None:
            support = (float(sup[0]), float(sup[1]))
    nu = RadonMeasure(locs[order], wts[order], density, support)
    return SdeltSpec(b=b.fn, sigma=sigma.fn, h=h.fn, nu=nu,
                     x0=float(obj.get("x0", 0.0)),
                     h_t=h.dt, b_t=b.dt, sigma_t=sigma.dt)
