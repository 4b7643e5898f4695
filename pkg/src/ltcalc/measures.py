"""Radon measures, bounded-variation functions, and Stieltjes integration.

A :class:`RadonMeasure` is finitely many weighted atoms plus a piecewise
continuous density with respect to Lebesgue measure.  That covers every
reference measure the rest of the library integrates against (point masses,
Lebesgue, mixtures such as ``0.5 * dirac(0) + lebesgue()``).

All function arguments are expected to be NumPy-vectorised callables: they
must accept arrays and return arrays of the same shape.

Interval conventions
--------------------
``measure_integrate`` uses half-open intervals ``[x, y)``: an atom sitting at
``x`` is counted, one at ``y`` is not.  ``stieltjes_integrate`` integrates the
measure of ``(a, b]``: jumps of the integrator strictly inside, or at the
right endpoint, contribute.  Both conventions follow the left-continuity
bookkeeping used throughout the library.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, NumericDomainError, VariationUnboundedError

__all__ = [
    "RadonMeasure",
    "BVFunction",
    "Rect",
    "dirac",
    "lebesgue",
    "zero_measure",
    "measure_integrate",
    "total_variation",
    "stieltjes_integrate",
    "vitali_integrate",
    "stieltjes_measure",
]

# Refinement controls for the dyadic quadratures: stop once two successive
# levels differ by less than rtol (relative) / atol, or when the node count
# would exceed 2**20.
_QUAD_RTOL = 1e-10
_QUAD_ATOL = 1e-13
_QUAD_MAX_NODES = 1 << 20


@dataclass(frozen=True)
class RadonMeasure:
    """Finite atoms + piecewise-continuous Lebesgue density.

    Parameters
    ----------
    atom_locs, atom_weights:
        Strictly increasing locations and their (signed) weights.
    density:
        Vectorised density w.r.t. Lebesgue measure, or ``None``.
    support:
        Closed interval ``(lo, hi)`` outside which the density vanishes;
        ``(-inf, inf)`` for unbounded support.
    breaks:
        Interior discontinuity points of the density (quadrature split
        points).
    """

    atom_locs: np.ndarray = field(default_factory=lambda: np.empty(0))
    atom_weights: np.ndarray = field(default_factory=lambda: np.empty(0))
    density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    support: Tuple[float, float] = (-np.inf, np.inf)
    breaks: Tuple[float, ...] = ()

    def __post_init__(self):
        locs = np.atleast_1d(np.asarray(self.atom_locs, dtype=float))
        wts = np.atleast_1d(np.asarray(self.atom_weights, dtype=float))
        if locs.size != wts.size:
            raise ContractError("atom locations and weights differ in length")
        if locs.size and np.any(np.diff(locs) <= 0):
            raise ContractError("atom locations must be strictly increasing")
        object.__setattr__(self, "atom_locs", locs)
        object.__setattr__(self, "atom_weights", wts)

    # -- point mass query ---------------------------------------------------
    def atom(self, x: float) -> float:
        """Weight of the atom at ``x`` (0.0 if there is none)."""
        i = np.searchsorted(self.atom_locs, x)
        if i < self.atom_locs.size and self.atom_locs[i] == x:
            return float(self.atom_weights[i])
        return 0.0

    @property
    def has_density(self) -> bool:
        return self.density is not None

    def density_at(self, x):
        if self.density is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        inside = (x >= lo) & (x <= hi)
        out = np.zeros(x.shape)
        if np.any(inside):
            out[inside] = self.density(x[inside])
        return out

    def total_variation_on(self, interval: Tuple[float, float]) -> float:
        """Sum of |weights| in [x, y) plus the integral of |density|."""
        x, y = interval
        sel = (self.atom_locs >= x) & (self.atom_locs < y)
        tv = float(np.sum(np.abs(self.atom_weights[sel])))
        if self.density is not None:
            tv += _density_integral(lambda a: np.abs(self.density_at(a)), self, x, y)
        return tv

    def total_mass(self) -> float:
        """Signed total mass; requires a bounded support when a density is present."""
        mass = float(np.sum(self.atom_weights))
        if self.density is not None:
            lo, hi = self.support
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ContractError("total mass of an unbounded density is undefined")
            mass += _density_integral(self.density_at, self, lo, hi)
        return mass

    # -- algebra ------------------------------------------------------------
    def __mul__(self, c: float) -> "RadonMeasure":
        dens = None
        if self.density is not None:
            base = self.density
            dens = lambda a, _b=base, _c=c: _c * _b(a)  # noqa: E731
        return RadonMeasure(self.atom_locs, c * self.atom_weights, dens,
                            self.support, self.breaks)

    __rmul__ = __mul__

    def __add__(self, other: "RadonMeasure") -> "RadonMeasure":
        locs = np.concatenate([self.atom_locs, other.atom_locs])
        wts = np.concatenate([self.atom_weights, other.atom_weights])
        order = np.argsort(locs, kind="stable")
        locs, wts = locs[order], wts[order]
        # merge duplicate locations
        if locs.size:
            keep_locs, keep_wts = [locs[0]], [wts[0]]
            for loc, w in zip(locs[1:], wts[1:]):
                if loc == keep_locs[-1]:
                    keep_wts[-1] += w
                else:
                    keep_locs.append(loc)
                    keep_wts.append(w)
            locs = np.asarray(keep_locs)
            wts = np.asarray(keep_wts)
        if self.density is None and other.density is None:
            dens, support = None, (-np.inf, np.inf)
        else:
            d1, d2 = self.density_at, other.density_at
            dens = lambda a: d1(a) + d2(a)  # noqa: E731
            support = (min(self.support[0], other.support[0]),
                       max(self.support[1], other.support[1]))
        breaks = tuple(sorted(set(self.breaks) | set(other.breaks)
                              | _finite(self.support) | _finite(other.support)))
        return RadonMeasure(locs, wts, dens, support, breaks)


def _finite(pair):
    return {v for v in pair if np.isfinite(v)}


def dirac(loc: float, weight: float = 1.0) -> RadonMeasure:
    return RadonMeasure(np.array([loc]), np.array([weight]))


def lebesgue(lo: float = -np.inf, hi: float = np.inf, scale: float = 1.0) -> RadonMeasure:
    """``scale``-times Lebesgue measure restricted to ``[lo, hi]``."""
    dens = lambda a: np.full_like(np.asarray(a, dtype=float), scale)  # noqa: E731
    return RadonMeasure(density=dens, support=(lo, hi), breaks=())


def zero_measure() -> RadonMeasure:
    return RadonMeasure()


@dataclass(frozen=True)
class BVFunction:
    """A function of bounded variation given by an evaluator plus jump data.

    ``jumps`` lists ``(loc, left_value, right_value)`` for every
    discontinuity; between jumps the function is continuous (and
    differentiable when ``smooth_derivative`` is supplied).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    jumps: Tuple[Tuple[float, float, float], ...] = ()
    smooth_derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    derivative_breaks: Tuple[float, ...] = ()

    def __post_init__(self):
        locs = [j[0] for j in self.jumps]
        if sorted(locs) != locs or len(set(locs)) != len(locs):
            raise ContractError("jump locations must be sorted and unique")

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))

    def jump_locs(self):
        return np.array([j[0] for j in self.jumps])


@dataclass(frozen=True)
class Rect:
    """Half-open time-space rectangle (t_lo, t_hi] x (a_lo, a_hi]."""

    t_lo: float
    t_hi: float
    a_lo: float
    a_hi: float

    def __post_init__(self):
        if not (self.t_lo < self.t_hi and self.a_lo < self.a_hi):
            raise ContractError("Rect requires t_lo < t_hi and a_lo < a_hi")


# ---------------------------------------------------------------------------
# adaptive trapezoid with dyadic refinement
# ---------------------------------------------------------------------------

def _adaptive_trapz(fn, a: float, b: float, rtol=_QUAD_RTOL, atol=_QUAD_ATOL,
                    max_nodes=_QUAD_MAX_NODES) -> float:
    """Trapezoid rule on [a, b], doubling nodes until Cauchy-stable."""
    if b <= a:
        return 0.0
    fa, fb = fn(np.array([a]))[0], fn(np.array([b]))[0]
    if not (np.isfinite(fa) and np.isfinite(fb)):
        raise NumericDomainError(f"non-finite integrand value on [{a}, {b}]")
    h = b - a
    total = 0.5 * h * (fa + fb)
    n = 1
    prev = total
    while n < max_nodes:
        # midpoints of the current intervals
        mids = a + (np.arange(n) + 0.5) * (h / n)
        vals = fn(mids)
        if not np.all(np.isfinite(vals)):
            raise NumericDomainError("non-finite integrand value encountered")
        total = 0.5 * total + 0.5 * (h / n) * float(np.sum(vals))
        n *= 2
        if abs(total - prev) <= atol + rtol * abs(total):
            return total
        prev = total
    return total


def _density_integral(fn, m: RadonMeasure, x: float, y: float) -> float:
    """Integrate ``fn`` against Lebesgue over [x, y] clipped to m's support,
    splitting at density breaks and atom locations."""
    lo = max(x, m.support[0])
    hi = min(y, m.support[1])
    if hi <= lo:
        return 0.0
    cuts = [lo, hi]
    for p in list(m.breaks) + list(m.atom_locs):
        if lo < p < hi:
            cuts.append(p)
    cuts = sorted(set(cuts))
    return sum(_adaptive_trapz(fn, u, v) for u, v in zip(cuts[:-1], cuts[1:]))


def measure_integrate(f, m: RadonMeasure, interval: Tuple[float, float]) -> float:
    """Integral of ``f`` against ``m`` over the half-open interval [x, y)."""
    x, y = interval
    if y <= x:
        return 0.0
    sel = (m.atom_locs >= x) & (m.atom_locs < y)
    total = 0.0
    if np.any(sel):
        vals = np.asarray(f(m.atom_locs[sel]), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NumericDomainError("non-finite integrand value at an atom")
        total += float(np.sum(vals * m.atom_weights[sel]))
    if m.density is not None:
        total += _density_integral(lambda a: np.asarray(f(a), dtype=float) * m.density_at(a),
                                   m, x, y)
    return total


# ---------------------------------------------------------------------------
# one-parameter total variation and Stieltjes integration
# ---------------------------------------------------------------------------

def _pieces(g: BVFunction, a: float, b: float, with_kinks: bool = False):
    """Split [a, b] at the interior jump (and optionally kink) locations of g."""
    cuts = {a, b} | {loc for loc, _, _ in g.jumps if a < loc < b}
    if with_kinks:
        cuts |= {p for p in g.derivative_breaks if a < p < b}
    cuts = sorted(cuts)
    return list(zip(cuts[:-1], cuts[1:]))


def _refine_until_cauchy(sum_at, start_n=16, rtol=1e-9, atol=1e-12, max_n=1 << 18,
                         what="variation"):
    prev = sum_at(start_n)
    n = start_n * 2
    growth = 0
    while n <= max_n:
        cur = sum_at(n)
        if abs(cur - prev) <= atol + rtol * max(1.0, abs(cur)):
            return cur
        growth = growth + 1 if abs(cur) > abs(prev) * 1.05 else 0
        prev = cur
        n *= 2
    if growth >= 3:
        raise VariationUnboundedError(f"{what} kept growing under refinement")
    return prev


def _refine_richardson(sum_at, start_n=16, rtol=1e-9, atol=1e-12, max_n=1 << 20,
                       what="Stieltjes sum"):
    """Dyadic refinement with one Richardson step; the one-sided sums carry an
    O(1/n) error term, so 2*S(2n) - S(n) converges an order faster while the
    Cauchy stop still guards non-smooth integrands."""
    s_prev = sum_at(start_n)
    n = start_n * 2
    r_prev = None
    growth = 0
    while n <= max_n:
        s_cur = sum_at(n)
        r_cur = 2.0 * s_cur - s_prev
        if r_prev is not None:
            if abs(r_cur - r_prev) <= atol + rtol * max(1.0, abs(r_cur)):
                return r_cur
            growth = growth + 1 if abs(r_cur) > abs(r_prev) * 1.05 else 0
            if growth >= 6:
                raise VariationUnboundedError(f"{what} kept growing under refinement")
        s_prev, r_prev = s_cur, r_cur
        n *= 2
    return r_prev if r_prev is not None else s_prev


def total_variation(g: BVFunction, interval: Tuple[float, float]) -> float:
    """Total variation of ``g`` on the compact interval [a, b]."""
    a, b = interval
    if b <= a:
        return 0.0
    tv = 0.0
    for loc, left, right in g.jumps:
        if a < loc < b:
            v = g(np.array([loc]))[0]
            tv += abs(v - left) + abs(right - v)
        elif loc == a:
            tv += abs(right - g(np.array([a]))[0])
        elif loc == b:
            tv += abs(g(np.array([b]))[0] - left)
    for (u, v) in _pieces(g, a, b, with_kinks=True):
        if g.smooth_derivative is not None:
            ins = (v - u) * 1e-12
            tv += _adaptive_trapz(lambda x: np.abs(g.smooth_derivative(x)),
                                  u + ins, v - ins, rtol=1e-9)
        else:
            eps = (v - u) * 1e-9

            def var_sum(n, _u=u, _v=v, _e=eps):
                xs = np.linspace(_u + _e, _v - _e, n + 1)
                return float(np.sum(np.abs(np.diff(g(xs)))))

            tv += _refine_until_cauchy(var_sum, what="total variation")
    return tv


def stieltjes_integrate(f, g: BVFunction, interval: Tuple[float, float],
                        side: str = "left") -> float:
    """Riemann-Stieltjes integral ∫ f dg over (a, b].

    ``side`` selects where ``f`` is sampled on each partition cell ("left"
    or "right").  Jumps of ``g`` at points in (a, b] contribute
    ``f(loc) * (right - left)``; supply ``f`` with the appropriate one-sided
    values at those points.
    """
    if side not in ("left", "right"):
        raise ContractError(f"side must be 'left' or 'right', got {side!r}")
    a, b = interval
    if b <= a:
        return 0.0
    total = 0.0
    for loc, left, right in g.jumps:
        if a < loc <= b:
            total += float(np.asarray(f(np.array([loc])))[0]) * (right - left)
    for (u, v) in _pieces(g, a, b):
        # continuous part: sample g just inside the piece so stored one-sided
        # values at the cut points are respected
        eps = (v - u) * 1e-12

        def rs_sum(n, _u=u, _v=v, _e=eps):
            xs = np.linspace(_u, _v, n + 1)
            gx = g(np.clip(xs, _u + _e, _v - _e))
            pts = xs[:-1] if side == "left" else xs[1:]
            fv = np.asarray(f(pts), dtype=float)
            if not np.all(np.isfinite(fv)):
                raise NumericDomainError("non-finite integrand in Stieltjes sum")
            return float(np.sum(fv * np.diff(gx)))

        total += _refine_richardson(rs_sum, rtol=1e-9)
    return total


def stieltjes_measure(g: BVFunction, interval: Tuple[float, float]) -> RadonMeasure:
    """The Lebesgue-Stieltjes measure dg on [a, b]: jump atoms + derivative density.

    Requires ``smooth_derivative`` when g is not piecewise constant.
    """
    a, b = interval
    locs, wts = [], []
    for loc, left, right in g.jumps:
        if a <= loc <= b and right != left:
            locs.append(loc)
            wts.append(right - left)
    dens = g.smooth_derivative
    breaks = tuple(loc for loc, _, _ in g.jumps if a < loc < b)
    return RadonMeasure(np.asarray(locs), np.asarray(wts), dens,
                        (a, b) if dens is not None else (-np.inf, np.inf), breaks)


# ---------------------------------------------------------------------------
# two-parameter (Vitali) Stieltjes integration
# ---------------------------------------------------------------------------

def _rect_sum(phi, H, rect: Rect, nt: int, na: int) -> float:
    ts = np.linspace(rect.t_lo, rect.t_hi, nt + 1)
    xs = np.linspace(rect.a_lo, rect.a_hi, na + 1)
    Hm = np.asarray(H(ts[:, None], xs[None, :]), dtype=float)
    if Hm.shape != (nt + 1, na + 1):
        Hm = np.broadcast_to(Hm, (nt + 1, na + 1))
    inc = Hm[1:, 1:] - Hm[:-1, 1:] - Hm[1:, :-1] + Hm[:-1, :-1]
    pv = np.asarray(phi(ts[:-1, None], xs[None, :-1]), dtype=float)
    pv = np.broadcast_to(pv, inc.shape)
    if not np.all(np.isfinite(inc)):
        raise NumericDomainError("non-finite rectangle increment")
    return float(np.sum(pv * inc))


def vitali_integrate(phi, H, rect: Rect, rtol: float = 1e-6,
                     start_n: int = 8, max_n: int = 4096) -> float:
    """Two-parameter Stieltjes integral ∫∫ phi dH over ``rect``.

    ``phi`` is evaluated at the lower-left corner of each cell; ``H`` enters
    through its rectangle increments.  Dyadic refinement with Cauchy
    stopping; sustained growth of the refinement sums raises
    :class:`VariationUnboundedError`.
    """
    n = start_n
    prev = _rect_sum(phi, H, rect, n, n)
    growth = 0
    while n < max_n:
        n *= 2
        cur = _rect_sum(phi, H, rect, n, n)
        if abs(cur - prev) <= rtol * max(1.0, abs(cur)):
            return cur
        growth = growth + 1 if abs(cur) > abs(prev) * 1.2 else 0
        if growth >= 4:
            raise VariationUnboundedError(
                "rectangle-increment sums diverge under refinement")
        prev = cur
    return prev
