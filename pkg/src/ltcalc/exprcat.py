"""Closed catalog of named coefficient functions for JSON problem files.

A coefficient is a function of ``(t, x)`` built from registered shapes
(constants, polynomials, exponential/trig factors) and the ``sum`` /
``product`` combinators -- no general expression parser.  Every entry also
knows its time derivative, which the solver needs for time-dependent
transforms.

JSON forms accepted by :func:`parse_expr`::

    "zero"                               # bare name
    {"fn": "const", "c": 2.5}
    {"fn": "product", "factors": [ ... ]}
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ContractError

__all__ = ["Expr", "parse_expr", "expr_names"]


@dataclass(frozen=True)
class Expr:
    """A (t, x) coefficient with its time derivative and JSON round-trip."""

    fn: Callable
    dt: Callable
    spec: object

    def __call__(self, t, x):
        return self.fn(t, x)


def _const(v):
    def fn(t, x):
        return np.broadcast_to(np.asarray(v, dtype=float),
                               np.broadcast_shapes(np.shape(t), np.shape(x))).copy()
    return fn


def _zero_like():
    return _const(0.0)


def _make_zero(spec):
    return Expr(_const(0.0), _const(0.0), spec)


def _make_one(spec):
    return Expr(_const(1.0), _const(0.0), spec)


def _make_const(spec):
    c = float(spec["c"])
    return Expr(_const(c), _const(0.0), spec)


def _make_poly_x(spec):
    coeffs = [float(c) for c in spec["coeffs"]]  # ascending powers of x

    def fn(t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)))
        for k, c in enumerate(coeffs):
            out = out + c * x ** k
        return out

    return Expr(fn, _const(0.0), spec)


def _make_poly_t(spec):
    coeffs = [float(c) for c in spec["coeffs"]]
    dcoeffs = [k * c for k, c in enumerate(coeffs)][1:]

    def fn(t, x):
        t = np.asarray(t, dtype=float)
        out = np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)))
        for k, c in enumerate(coeffs):
            out = out + c * t ** k
        return out

    def dt(t, x):
        t = np.asarray(t, dtype=float)
        out = np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)))
        for k, c in enumerate(dcoeffs):
            out = out + c * t ** k
        return out

    return Expr(fn, dt, spec)


def _make_exp_t(spec):
    rate = float(spec.get("rate", -1.0))
    scale = float(spec.get("scale", 1.0))

    def fn(t, x):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(scale * np.exp(rate * t),
                               np.broadcast_shapes(np.shape(t), np.shape(x))).copy()

    def dt(t, x):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(rate * scale * np.exp(rate * t),
                               np.broadcast_shapes(np.shape(t), np.shape(x))).copy()

    return Expr(fn, dt, spec)


def _make_exp_x(spec):
    rate = float(spec.get("rate", 1.0))
    scale = float(spec.get("scale", 1.0))

    def fn(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(scale * np.exp(rate * x),
                               np.broadcast_shapes(np.shape(t), np.shape(x))).copy()

    return Expr(fn, _const(0.0), spec)


def _trig(kind):
    def maker(spec):
        freq = float(spec.get("freq", 1.0))
        scale = float(spec.get("scale", 1.0))
        base = np.cos if kind == "cos" else np.sin

        def fn(t, x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(scale * base(freq * x),
                                   np.broadcast_shapes(np.shape(t), np.shape(x))).copy()

        return Expr(fn, _const(0.0), spec)

    return maker


def _make_arctan_x(spec):
    scale = float(spec.get("scale", 1.0))

    def fn(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(scale * np.arctan(x),
                               np.broadcast_shapes(np.shape(t), np.shape(x))).copy()

    return Expr(fn, _const(0.0), spec)


def _make_sum(spec):
    parts = [parse_expr(s) for s in spec["terms"]]

    def fn(t, x):
        return sum(p.fn(t, x) for p in parts)

    def dt(t, x):
        return sum(p.dt(t, x) for p in parts)

    return Expr(fn, dt, spec)


def _make_product(spec):
    parts = [parse_expr(s) for s in spec["factors"]]

    def fn(t, x):
        out = parts[0].fn(t, x)
        for p in parts[1:]:
            out = out * p.fn(t, x)
        return out

    def dt(t, x):
        total = 0.0
        for k in range(len(parts)):
            term = parts[k].dt(t, x)
            for j, p in enumerate(parts):
                if j != k:
                    term = term * p.fn(t, x)
            total = total + term
        return total

    return Expr(fn, dt, spec)


_CATALOG = {
    "zero": _make_zero,
    "one": _make_one,
    "const": _make_const,
    "poly_x": _make_poly_x,
    "poly_t": _make_poly_t,
    "exp_t": _make_exp_t,
    "exp_x": _make_exp_x,
    "cos_x": _trig("cos"),
    "sin_x": _trig("sin"),
    "arctan_x": _make_arctan_x,
    "sum": _make_sum,
    "product": _make_product,
}


def expr_names():
    return sorted(_CATALOG)


def parse_expr(spec) -> Expr:
    """Build an :class:`Expr` from a catalog name or a parameter dict."""
    if isinstance(spec, Expr):
        return spec
    if isinstance(spec, str):
        spec = {"fn": spec}
    if not isinstance(spec, dict) or "fn" not in spec:
        raise ContractError(f"not a coefficient spec: {spec!r}")
    name = spec["fn"]
    if name not in _CATALOG:
        raise ContractError(f"unknown coefficient {name!r}; "
                            f"known: {', '.join(expr_names())}")
    return _CATALOG[name](spec)
