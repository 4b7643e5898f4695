"""JIT-compiled inner loops for local-time fields and partition sums.

Every kernel only fills pre-shaped output arrays with one independent row
(or slot) per parallel iteration; reductions across rows happen afterwards
in ordered NumPy code.  Results are therefore bit-identical regardless of
the numba thread count.
"""

import numpy as np
from numba import njit, prange

__all__ = [
    "tanaka_field_kernel",
    "occupation_field_kernel",
    "riemann_sum_terms_kernel",
    "shifted_tanaka_kernel",
    "euler_transformed_kernel",
]


@njit(cache=True, parallel=True)
def tanaka_field_kernel(values, levels, sgn0):
    """Monotonised Tanaka local-time field.

    values : (n+1,) path, levels : (m,).  Returns (L, corr) where
    L[j, i] is the running-maximum of the raw Tanaka estimate at level
    levels[j] up to node i, and corr[j] is the largest monotonisation
    correction applied on that level.

    The per-level arithmetic operates on the shifted series values - a, so a
    single-level call and a field column are bit-identical, and
    L^a(X) == L^0(X - a) holds exactly when the caller pre-shifts.
    """
    n = values.shape[0] - 1
    m = levels.shape[0]
    L = np.empty((m, n + 1))
    corr = np.zeros(m)
    for j in prange(m):
        a = levels[j]
        s_prev = values[0] - a
        abs0 = abs(s_prev)
        acc = 0.0
        run = 0.0
        L[j, 0] = 0.0
        cmax = 0.0
        for i in range(n):
            s_next = values[i + 1] - a
            ds = s_next - s_prev
            if s_prev > 0.0:
                sg = 1.0
            elif s_prev < 0.0:
                sg = -1.0
            else:
                sg = sgn0
            acc += sg * ds
            raw = abs(s_next) - abs0 - acc
            if raw > run:
                run = raw
            if run - raw > cmax:
                cmax = run - raw
            L[j, i + 1] = run
            s_prev = s_next
        corr[j] = cmax
    return L, corr


@njit(cache=True, parallel=True)
def occupation_field_kernel(values, dqv, levels, eps, mode):
    """Occupation-density local-time field, cumulative in time.

    dqv : (n,) quadratic-variation increments.  mode selects the window:
    0 -> [a, a+eps) (right), 1 -> (a-eps, a] (left),
    2 -> (a-eps/2, a+eps/2] (symmetric).
    """
    n = dqv.shape[0]
    m = levels.shape[0]
    out = np.empty((m, n + 1))
    inv = 1.0 / eps
    half = 0.5 * eps
    for j in prange(m):
        a = levels[j]
        acc = 0.0
        out[j, 0] = 0.0
        for i in range(n):
            x = values[i]
            if mode == 0:
                hit = (x >= a) and (x < a + eps)
            elif mode == 1:
                hit = (x > a - eps) and (x <= a)
            else:
                hit = (x > a - half) and (x <= a + half)
            if hit:
                acc += dqv[i] * inv
            out[j, i + 1] = acc
    return out


@njit(cache=True)
def _tanaka_at_two_nodes(values, a, sgn0, i0, i1):
    """Monotonised Tanaka values (L_{i0}, L_{i1}) at a fixed level, i0 <= i1."""
    s_prev = values[0] - a
    abs0 = abs(s_prev)
    acc = 0.0
    run = 0.0
    l0 = 0.0
    for i in range(i1):
        s_next = values[i + 1] - a
        ds = s_next - s_prev
        if s_prev > 0.0:
            sg = 1.0
        elif s_prev < 0.0:
            sg = -1.0
        else:
            sg = sgn0
        acc += sg * ds
        raw = abs(s_next) - abs0 - acc
        if raw > run:
            run = raw
        if i + 1 == i0:
            l0 = run
        s_prev = s_next
    if i0 == 0:
        l0 = 0.0
    return l0, run


@njit(cache=True, parallel=True)
def riemann_sum_terms_kernel(values, theta, idx, sgn0):
    """Terms L^{theta[i_k]}_{i_{k+1}} - L^{theta[i_k]}_{i_k} for partition idx."""
    K = idx.shape[0] - 1
    out = np.empty(K)
    for k in prange(K):
        a = theta[idx[k]]
        l0, l1 = _tanaka_at_two_nodes(values, a, sgn0, idx[k], idx[k + 1])
        out[k] = l1 - l0
    return out


@njit(cache=True)
def _ppval(bp, c, v):
    i = np.searchsorted(bp, v) - 1
    if i < 0:
        i = 0
    elif i > bp.shape[0] - 2:
        i = bp.shape[0] - 2
    d = v - bp[i]
    return ((c[0, i] * d + c[1, i]) * d + c[2, i]) * d + c[3, i]


@njit(cache=True)
def _fx_eval(xs, zc, atom_locs, psi_cum, flat_zeta, x):
    p = psi_cum[np.searchsorted(atom_locs, x)]
    if flat_zeta:
        return p
    return np.exp(_ppval(xs, zc, x)) * p


@njit(cache=True)
def _invert_f(xs, F_vals, Fc, zc, atom_locs, psi_cum, flat_zeta, y, warm):
    k = np.searchsorted(F_vals, y) - 1
    if k < 0:
        k = 0
    elif k > xs.shape[0] - 2:
        k = xs.shape[0] - 2
    lo = xs[k]
    hi = xs[k + 1]
    x = warm
    if x < lo:
        x = lo
    elif x > hi:
        x = hi
    scale = 1e-13 * (1.0 + abs(y))
    for _ in range(80):
        f = _ppval(xs, Fc, x) - y
        step = f / _fx_eval(xs, zc, atom_locs, psi_cum, flat_zeta, x)
        if abs(step) <= scale:
            break
        if f < 0.0:
            lo = x
        elif f > 0.0:
            hi = x
        xn = x - step
        if xn < lo or xn > hi:
            xn = 0.5 * (lo + hi)
        x = xn
    return x


@njit(cache=True, parallel=True)
def euler_transformed_kernel(db, y0, x0, sig, xs, F_vals, Fc, zc, atom_locs,
                             psi_cum, flat_zeta, F_lo, F_hi, keep):
    """Euler for dY = (F_x o G)(Y) * sig dB with the time-frozen transform
    tables; constant diffusion coefficient ``sig``, zero transformed drift.

    Returns (X, err): X holds the full inverse-mapped paths when ``keep``
    (else just terminals in column 0); err[p] = 1 flags a path that left the
    transform range.
    """
    P, n = db.shape
    X = np.empty((P, n + 1)) if keep else np.empty((P, 1))
    err = np.zeros(P, dtype=np.int64)
    for p in prange(P):
        y = y0
        x = x0
        bad = False
        for i in range(n):
            if i > 0:
                if y < F_lo or y > F_hi:
                    bad = True
                    break
                x = _invert_f(xs, F_vals, Fc, zc, atom_locs, psi_cum,
                              flat_zeta, y, x)
            if keep:
                X[p, i] = x
            fx = _fx_eval(xs, zc, atom_locs, psi_cum, flat_zeta, x)
            y = y + fx * sig * db[p, i]
        if bad or y < F_lo or y > F_hi or not np.isfinite(y):
            err[p] = 1
            continue
        x = _invert_f(xs, F_vals, Fc, zc, atom_locs, psi_cum, flat_zeta, y, x)
        if keep:
            X[p, n] = x
        else:
            X[p, 0] = x
    return X, err


@njit(cache=True, parallel=True)
def shifted_tanaka_kernel(values, shifts, sgn0):
    """Level-0 monotonised Tanaka field of the shifted paths values - shifts[j].

    shifts : (m, n+1) one time-dependent shift per row.  Returns (m, n+1).
    """
    n = values.shape[0] - 1
    m = shifts.shape[0]
    L = np.empty((m, n + 1))
    for j in prange(m):
        s_prev = values[0] - shifts[j, 0]
        abs0 = abs(s_prev)
        acc = 0.0
        run = 0.0
        L[j, 0] = 0.0
        for i in range(n):
            s_next = values[i + 1] - shifts[j, i + 1]
            ds = s_next - s_prev
            if s_prev > 0.0:
                sg = 1.0
            elif s_prev < 0.0:
                sg = -1.0
            else:
                sg = sgn0
            acc += sg * ds
            raw = abs(s_next) - abs0 - acc
            if raw > run:
                run = raw
            L[j, i + 1] = run
            s_prev = s_next
    return L
