"""Residual-based verifiers for change-of-variables and limit identities.

Each verifier assembles the two sides of an identity on the sample-path grid
and returns the difference as a :class:`ResidualReport` (or a convergence
table).  Nothing here passes judgement: acceptance thresholds live in the
test suite and the experiment runner.

The central identity is

    F(T, X_T) - F(0, X_0) = int_{[0,T)} F_t(s, X_s-) dmu(s)
                            + int_0^T F_x(s, X_s) dX_s
                            - 1/2 Lambda_T(F_x),

with Lambda the local time-space integral of the space derivative.  Curve
local times are always computed as the level-0 local time of the shifted
path X - curve, never by interpolating a field in the level direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ._kernels import riemann_sum_terms_kernel, shifted_tanaka_kernel, tanaka_field_kernel
from .errors import ContractError, ResolutionError
from .localtime import SideConvention
from .ltspace import (SpaceDensity, TimeSpaceFunction, lts_space_density,
                      lts_space_density_process, lts_time_density, lts_vitali,
                      _trapezoid_weights, _inner_cumulative)
from .measures import BVFunction, RadonMeasure, measure_integrate, stieltjes_measure
from .paths import SamplePath

__all__ = [
    "ResidualReport",
    "CovFunction",
    "SmoothPiece",
    "cov_residual",
    "ito_tanaka_check",
    "ltc_residual",
    "ghomrasni_limit",
    "riemann_sum_localtime",
    "change_of_local_time_check",
    "GhomrasniReport",
    "RiemannSumReport",
]

_SIDE = SideConvention.RIGHT


@dataclass
class ResidualReport:
    """Residual process of an identity, sampled on ``eval_times``."""

    eval_times: np.ndarray
    residual: np.ndarray
    resolution: dict
    paths_used: int = 1

    @property
    def sup_abs(self) -> float:
        return float(np.max(np.abs(self.residual)))

    @property
    def terminal_abs(self) -> float:
        return float(np.abs(self.residual[-1]))

    def to_json(self) -> dict:
        return {"sup_abs": self.sup_abs, "terminal_abs": self.terminal_abs,
                "resolution": self.resolution, "paths_used": self.paths_used}


@dataclass
class CovFunction:
    """Data for the change-of-variables identity.

    ``Ft_terms`` lists (density, reference measure) pairs whose sum gives the
    time increments of F; a finite sum of distinct measures is allowed.
    ``Fx`` is the left space derivative, carrying whichever Lambda
    representations it admits.
    """

    F: Callable
    Fx: TimeSpaceFunction
    Ft_terms: List[Tuple[Callable, RadonMeasure]]
    domain: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.0, 1.0), (-4.0, 4.0))
    validate: bool = True

    def __post_init__(self):
        if self.validate:
            self._check(n=9, rtol=2e-3, atol=1e-4)

    def _check(self, n, rtol, atol):
        from .measures import _adaptive_trapz
        (t_lo, t_hi), (a_lo, a_hi) = self.domain
        ts = np.linspace(t_lo, t_hi, n)
        xs = np.linspace(a_lo, a_hi, n)
        for t in ts[:: max(1, n // 3)]:
            for y in xs:
                want = self.F(t, y) - self.F(t, a_lo)
                got = _adaptive_trapz(
                    lambda a, _t=t: np.asarray(self.Fx.eval_fn(_t, a), dtype=float),
                    a_lo, y, rtol=1e-8, max_nodes=1 << 14)
                if abs(got - want) > atol + rtol * max(1.0, abs(want)):
                    raise ContractError(
                        f"Fx does not integrate back to F at (t={t:g}, x={y:g})")
        for x in xs[:: max(1, n // 3)]:
            for t in ts:
                want = self.F(t, x) - self.F(t_lo, x)
                got = sum(measure_integrate(lambda u, _x=x, _ft=ft: _ft(u, _x),
                                            mu, (t_lo, t))
                          for ft, mu in self.Ft_terms)
                if abs(got - want) > atol + rtol * max(1.0, abs(want)):
                    raise ContractError(
                        f"Ft terms do not integrate back to F at (t={t:g}, x={x:g})")


def _time_term_process(Ft_terms, X: SamplePath, i_T: int) -> np.ndarray:
    """Cumulative int_{[0,t)} F_t(s, X_s) dmu(s) on nodes 0..i_T."""
    times = X.grid.times()
    dt = X.grid.dt
    out = np.zeros(i_T + 1)
    for ft, mu in Ft_terms:
        vals = np.broadcast_to(
            np.asarray(ft(times[:i_T], X.values[:i_T]), dtype=float), (i_T,))
        if mu.density is not None:
            lo, hi = mu.support
            dens = mu.density_at(times[:i_T])
            inside = (times[:i_T] >= lo) & (times[:i_T] < hi)
            out[1:] += np.cumsum(np.where(inside, vals * dens * dt, 0.0))
        for loc, w in zip(mu.atom_locs, mu.atom_weights):
            if times[0] <= loc < times[i_T]:
                k = int(np.searchsorted(times, loc, side="right"))
                contrib = float(np.asarray(
                    ft(loc, X.values[min(k - 1, i_T)]), dtype=float)) * w
                out[k:] += contrib
    return out


def cov_residual(F: CovFunction, X: SamplePath, T: float,
                 representation: str = "auto",
                 level_spacing: float = 2.0 ** -8,
                 subgrid: int = 64) -> ResidualReport:
    """Residual process of the change-of-variables identity for F along X."""
    i_T = X.grid.index_of(T)
    times = X.grid.times()[:i_T + 1]
    lhs = (np.asarray(F.F(times, X.values[:i_T + 1]), dtype=float)
           - float(F.F(times[0], X.values[0])))
    time_term = _time_term_process(F.Ft_terms, X, i_T)
    fx_vals = np.broadcast_to(np.asarray(
        F.Fx.eval_fn(times[:-1], X.values[:i_T]), dtype=float), (i_T,))
    ito_term = np.concatenate([[0.0], np.cumsum(fx_vals * np.diff(X.values[:i_T + 1]))])

    reps = F.Fx.available_representations()
    if representation == "auto":
        representation = ("space_density" if "space_density" in reps
                          else reps[0] if reps else "")
    if representation == "space_density":
        lam = lts_space_density_process(F.Fx, X, T, level_spacing=level_spacing)
        eval_idx = np.arange(i_T + 1)
    elif representation == "time_density":
        eval_idx = np.unique(np.round(np.linspace(0, i_T, subgrid + 1)).astype(int))
        lam = np.zeros(eval_idx.size)
        for k, i in enumerate(eval_idx[1:], start=1):
            lam[k] = lts_time_density(F.Fx, X, times[i],
                                      n_time_quad=129, max_time_quad=129).value
    elif representation == "vitali":
        from .localtime import local_time_field
        eval_idx = np.unique(np.round(np.linspace(0, i_T, min(subgrid, 16) + 1)).astype(int))
        lo = float(np.min(X.values)) - level_spacing
        hi = float(np.max(X.values)) + level_spacing
        n = max(int(np.ceil((hi - lo) / level_spacing)), 8)
        field = local_time_field(X, np.linspace(lo, hi, n + 1))
        lam = np.zeros(eval_idx.size)
        for k, i in enumerate(eval_idx[1:], start=1):
            lam[k] = lts_vitali(F.Fx, field, times[i]).value
    else:
        raise ContractError(f"unknown or unavailable representation {representation!r}")

    residual_full = lhs - time_term - ito_term
    residual = residual_full[eval_idx] + 0.5 * lam
    return ResidualReport(times[eval_idx], residual,
                          {"dt": X.grid.dt, "level_spacing": level_spacing,
                           "representation": representation})


def ito_tanaka_check(F: Callable, Fprime: BVFunction, X: SamplePath, T: float,
                     level_spacing: float = 2.0 ** -8) -> ResidualReport:
    """Residual of the time-independent convex-difference identity
    F(X_t) = F(X_0) + sum F'_-(X_i) dX_i + 1/2 int L^a_t dF'_-(a)."""
    i_T = X.grid.index_of(T)
    vals = X.values[:i_T + 1]
    times = X.grid.times()[:i_T + 1]
    lhs = np.asarray(F(vals), dtype=float) - float(F(vals[0]))
    ito = np.concatenate([[0.0], np.cumsum(np.asarray(Fprime(vals[:-1]), dtype=float)
                                           * np.diff(vals))])
    lo = float(np.min(vals)) - level_spacing
    hi = float(np.max(vals)) + level_spacing
    dmu = stieltjes_measure(Fprime, (lo, hi))
    corr = np.zeros(i_T + 1)
    if dmu.atom_locs.size:
        L, _ = tanaka_field_kernel(vals, dmu.atom_locs, _SIDE.sgn0)
        corr += dmu.atom_weights @ L
    if dmu.density is not None:
        n = max(int(np.ceil((hi - lo) / level_spacing)), 8)
        grid = np.linspace(lo, hi, n + 1)
        wts = _trapezoid_weights(grid) * dmu.density_at(grid)
        corr += _inner_cumulative(vals, grid, wts, lambda t, a: np.ones_like(t + a),
                                  times[:-1], _SIDE)
    residual = lhs - ito - 0.5 * corr
    return ResidualReport(times, residual,
                          {"dt": X.grid.dt, "level_spacing": level_spacing})


@dataclass(frozen=True)
class SmoothPiece:
    """One C^{1,2} extension (F, F_t, F_x, F_xx), all vectorised in (t, x)."""

    F: Callable
    F_t: Callable
    F_x: Callable
    F_xx: Callable


def ltc_residual(below: SmoothPiece, above: SmoothPiece, curve: Callable,
                 X: SamplePath, T: float, agree_tol: float = 1e-8) -> ResidualReport:
    """Residual of the curve change-of-variables formula.

    ``below``/``above`` extend F to either side of the continuous
    bounded-variation curve ``b = curve(t)``; the jump term rides on the
    level-0 local time of X - b.  On-curve evaluation uses the lower
    extension (left limits).
    """
    i_T = X.grid.index_of(T)
    times = X.grid.times()[:i_T + 1]
    vals = X.values[:i_T + 1]
    b = np.broadcast_to(np.asarray(curve(times), dtype=float), times.shape)
    probe = np.linspace(times[0], times[-1], 33)
    pb = np.broadcast_to(np.asarray(curve(probe), dtype=float), probe.shape)
    gap = np.max(np.abs(np.asarray(below.F(probe, pb)) - np.asarray(above.F(probe, pb))))
    if gap > agree_tol:
        raise ContractError(f"extensions disagree on the curve by {gap:.3g}")

    def pick(fn_b, fn_a, t, x, on_or_below):
        vb = np.broadcast_to(np.asarray(fn_b(t, x), dtype=float), np.shape(x))
        va = np.broadcast_to(np.asarray(fn_a(t, x), dtype=float), np.shape(x))
        return np.where(on_or_below, vb, va)

    mask = vals <= b
    lhs = pick(below.F, above.F, times, vals, mask)
    lhs = lhs - lhs[0]
    mask_l = mask[:-1]
    dt = X.grid.dt
    drift = np.concatenate([[0.0], np.cumsum(
        pick(below.F_t, above.F_t, times[:-1], vals[:-1], mask_l) * dt)])
    ito = np.concatenate([[0.0], np.cumsum(
        pick(below.F_x, above.F_x, times[:-1], vals[:-1], mask_l) * np.diff(vals))])
    dqv = np.diff(X.qv_or_compute()[:i_T + 1])
    off_curve = vals[:-1] != b[:-1]
    qv_term = np.concatenate([[0.0], 0.5 * np.cumsum(
        pick(below.F_xx, above.F_xx, times[:-1], vals[:-1], mask_l)
        * np.where(off_curve, dqv, 0.0))])
    Lcurve = shifted_tanaka_kernel(vals, b[None, :], _SIDE.sgn0)[0]
    jump = (np.asarray(above.F_x(times[:-1], b[:-1]), dtype=float)
            - np.asarray(below.F_x(times[:-1], b[:-1]), dtype=float))
    jump_term = np.concatenate([[0.0], np.cumsum(0.5 * jump * np.diff(Lcurve))])
    residual = lhs - drift - ito - qv_term - jump_term
    return ResidualReport(times, residual, {"dt": X.grid.dt})


@dataclass
class GhomrasniReport:
    """Occupation-side values per bandwidth vs the time-space integral."""

    eps: np.ndarray
    occupation: np.ndarray
    lam: float
    matched_sign: int       # sign s with occupation ~ s * lam
    resolution: dict

    @property
    def abs_gap(self) -> float:
        return float(abs(abs(self.occupation[-1]) - abs(self.lam)))

    def successive_diffs(self) -> np.ndarray:
        return np.abs(np.diff(self.occupation))

    def to_rows(self):
        return [(float(e), float(v), self.lam, float(abs(abs(v) - abs(self.lam))))
                for e, v in zip(self.eps, self.occupation)]


def ghomrasni_limit(H: TimeSpaceFunction, X: SamplePath, T: float,
                    eps_list: Sequence[float],
                    representation: str = "auto") -> GhomrasniReport:
    """Occupation-quotient limit (1/eps) int [H(s,X_s) - H(s,X_s-eps)] d<X>_s.

    The report carries the occupation-side value for every bandwidth, the
    Lambda(H) value, and the empirically matched sign between the two (the
    identity holds up to orientation; the magnitudes are compared).
    """
    eps_arr = np.asarray(list(eps_list), dtype=float)
    if np.any(np.diff(eps_arr) >= 0):
        raise ContractError("eps_list must be strictly decreasing")
    floor = 0.25 * np.sqrt(X.grid.dt)
    if np.any(eps_arr < floor):
        raise ResolutionError(
            f"bandwidth below the grid-resolvable scale {floor:.3g}")
    i_T = X.grid.index_of(T)
    times_l = X.grid.times()[:i_T]
    vals_l = X.values[:i_T]
    dqv = np.diff(X.qv_or_compute()[:i_T + 1])
    occ = np.empty(eps_arr.size)
    for k, e in enumerate(eps_arr):
        diff = (np.asarray(H.eval_fn(times_l, vals_l), dtype=float)
                - np.asarray(H.eval_fn(times_l, vals_l - e), dtype=float))
        occ[k] = float(np.sum(diff * dqv)) / e

    reps = H.available_representations()
    if representation == "auto":
        representation = "space_density" if "space_density" in reps else reps[0]
    if representation == "space_density":
        lam = lts_space_density(H, X, T).value
    elif representation == "time_density":
        lam = lts_time_density(H, X, T).value
    else:
        from .localtime import local_time_field
        lo = float(np.min(X.values)) - 2.0 ** -8
        hi = float(np.max(X.values)) + 2.0 ** -8
        field = local_time_field(X, np.linspace(lo, hi, 1 + max(
            int(np.ceil((hi - lo) * 2 ** 8)), 8)))
        lam = lts_vitali(H, field, T).value
    sign = int(np.sign(occ[-1] * lam)) if occ[-1] * lam != 0 else 0
    return GhomrasniReport(eps_arr, occ, float(lam), sign,
                           {"dt": X.grid.dt, "representation": representation})


@dataclass
class RiemannSumReport:
    depths: np.ndarray
    sums: np.ndarray
    reference: float
    resolution: dict

    def successive_diffs(self) -> np.ndarray:
        return np.abs(np.diff(self.sums))

    @property
    def final_error(self) -> float:
        return float(abs(self.sums[-1] - self.reference))

    def to_rows(self):
        return [(int(d), float(s), self.reference, float(abs(s - self.reference)))
                for d, s in zip(self.depths, self.sums)]


def riemann_sum_localtime(Hproc: np.ndarray, theta: np.ndarray, X: SamplePath,
                          depth_list: Sequence[int]) -> RiemannSumReport:
    """Partition sums sum_k H_{t_k} (L^{theta_k}_{t_{k+1}} - L^{theta_k}_{t_k})
    on dyadic partitions, against the shifted-path reference
    int H_s d_s L^0_s(X - theta)."""
    n = X.grid.n_steps
    Hproc = np.asarray(Hproc, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if Hproc.shape[0] not in (n, n + 1) or theta.shape != (n + 1,):
        raise ContractError("H and theta must be given per grid node")
    tv = float(np.sum(np.abs(np.diff(theta))))
    if not np.isfinite(tv):
        raise ContractError("theta has non-finite variation")
    sums = []
    depths = np.asarray(list(depth_list), dtype=int)
    for d in depths:
        idx = np.unique(np.round(np.linspace(0, n, 2 ** d + 1)).astype(np.int64))
        terms = riemann_sum_terms_kernel(X.values, theta, idx, _SIDE.sgn0)
        sums.append(float(np.sum(Hproc[idx[:-1]] * terms)))
    Lshift = shifted_tanaka_kernel(X.values, theta[None, :], _SIDE.sgn0)[0]
    reference = float(np.sum(Hproc[:n] * np.diff(Lshift)))
    return RiemannSumReport(depths, np.asarray(sums), reference,
                            {"dt": X.grid.dt, "theta_tv": tv})


def change_of_local_time_check(G: Callable, G_y: Callable, Y: SamplePath,
                               a: float, G_y_right: Optional[Callable] = None,
                               inverse: Optional[Callable] = None,
                               tol: float = 1e-10) -> ResidualReport:
    """Check int G_y(s, F(s,a)+) d_s L^{F(.,a)}_s(Y) = L^a_s(G(., Y)).

    ``G(t, y)`` must be continuous and strictly increasing in ``y``; its
    space inverse F(., a) is computed by Newton iteration unless supplied.
    """
    times = Y.grid.times()
    # monotonicity probe
    ys = np.linspace(float(np.min(Y.values)) - 1.0, float(np.max(Y.values)) + 1.0, 65)
    for t in (times[0], times[-1]):
        gy = np.asarray(G(t, ys), dtype=float)
        if np.any(np.diff(gy) <= 0):
            raise ContractError("G is not strictly increasing in its space argument")
    if inverse is not None:
        c = np.broadcast_to(np.asarray(inverse(times, a), dtype=float), times.shape)
    else:
        c = np.full(times.shape, float(a))
        for _ in range(100):
            resid = np.asarray(G(times, c), dtype=float) - a
            slope = np.asarray(G_y(times, c), dtype=float)
            step = resid / slope
            c = c - step
            if np.max(np.abs(step)) < tol * (1.0 + abs(a)):
                break
        else:
            raise ContractError("inversion of G failed to converge")
    X_vals = np.asarray(G(times, Y.values), dtype=float)
    Lx, _ = tanaka_field_kernel(X_vals, np.array([float(a)]), _SIDE.sgn0)
    Ly = shifted_tanaka_kernel(Y.values, c[None, :], _SIDE.sgn0)[0]
    gy_right = G_y_right if G_y_right is not None else G_y
    weights = np.asarray(gy_right(times[:-1], c[:-1]), dtype=float)
    weights = np.broadcast_to(weights, (times.size - 1,))
    lhs = np.concatenate([[0.0], np.cumsum(weights * np.diff(Ly))])
    residual = lhs - Lx[0]
    return ResidualReport(times, residual, {"dt": Y.grid.dt})
