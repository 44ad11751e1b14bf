"""Pure numpy implementation of the solver kernels.

Mirrors ``_kernels.pyx`` operation for operation; ``hetreg._backend`` picks
the compiled module when it is importable and falls back to this one.
"""

import math

import numpy as np

from .errors import NumericalFailure

BACKTRACK = 0.8


def huber_sum(r, delta):
    a = np.abs(r)
    quad = a <= delta
    return float(0.5 * np.dot(r[quad], r[quad]) + np.sum(delta * a[~quad] - 0.5 * delta * delta))


def huber_location(s, delta, b0=0.0):
    """Minimise ``sum_i rho_delta(s_i - b)`` over ``b``.

    Safeguarded Newton on the monotone piecewise-linear score; exact once
    the iterate lands in the right linear piece.
    """
    s = np.asarray(s, dtype=float)
    lo, hi = float(s.min()), float(s.max())
    if lo == hi:
        return lo
    b = min(max(float(b0), lo), hi)
    for _ in range(200):
        d = s - b
        psi = float(np.clip(d, -delta, delta).sum())
        if psi > 0:
            lo = b
        elif psi < 0:
            hi = b
        else:
            return b
        if hi - lo <= 1e-15 * (1.0 + abs(b)):
            return b
        cnt = int(np.count_nonzero(np.abs(d) < delta))
        bn = b + psi / cnt if cnt > 0 else 0.5 * (lo + hi)
        if not lo < bn < hi:
            bn = 0.5 * (lo + hi)
        if bn == b:
            return b
        b = bn
    return b


def _block_norms(x, ptr):
    return np.sqrt(np.add.reduceat(x * x, ptr[:-1]))


def prox_sgl(u, thr1, thr2, ptr):
    """Proximal map of ``thr1*|v|_1 + sum_l thr2[l]*|v_l|_2`` (non-overlapping blocks)."""
    u = np.asarray(u, dtype=float)
    s = np.sign(u) * np.maximum(np.abs(u) - thr1, 0.0)
    norms = _block_norms(s, ptr)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(norms > 0, np.maximum(0.0, 1.0 - thr2 / norms), 0.0)
    return s * np.repeat(fac, np.diff(ptr))


def penalty(v, thr1, thr2, ptr):
    return float(thr1 * np.abs(v).sum() + np.dot(thr2, _block_norms(v, ptr)))


def kkt_residual(grad, v, thr1, thr2, ptr):
    """Largest block norm of the minimal-norm subgradient of the objective."""
    soft = np.sign(grad) * np.maximum(np.abs(grad) - thr1, 0.0)
    vn = _block_norms(v, ptr)
    sizes = np.diff(ptr)
    vn_rep = np.repeat(vn, sizes)
    with np.errstate(divide="ignore", invalid="ignore"):
        active = grad + thr1 * np.sign(v) + np.repeat(thr2, sizes) * np.where(vn_rep > 0, v / vn_rep, 0.0)
    e = np.where(v != 0, active, soft)
    en = _block_norms(e, ptr)
    zero_block = np.maximum(0.0, _block_norms(soft, ptr) - thr2)
    res = np.where(vn > 0, en, zero_block)
    return float(res.max()) if res.size else 0.0


def pg_solve(X, y, ptr, thr1, thr2, delta, v0, b0, fit_intercept, tol, max_iter, step0, trace=False):
    """Accelerated proximal gradient with backtracking and monotone restarts.

    Minimises ``sum rho_delta(y - X v - b) + thr1*|v|_1 + sum_l thr2[l]*|v_l|_2``.
    Returns ``(v, b, F, iterations, converged, kkt, step, trace_array)``.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    thr2 = np.asarray(thr2, dtype=float)
    v = np.array(v0, dtype=float)
    b = float(b0) if fit_intercept else 0.0
    step = float(step0)
    Xv = X @ v
    if fit_intercept:
        b = huber_location(y - Xv, delta, b)
    r = y - Xv - b
    f = huber_sum(r, delta)
    F = f + penalty(v, thr1, thr2, ptr)
    psi = np.clip(r, -delta, delta)
    grad = -(X.T @ psi)
    kkt = kkt_residual(grad, v, thr1, thr2, ptr)
    if fit_intercept:
        kkt = max(kkt, abs(float(psi.sum())))
    hist = [F] if trace else None
    if not math.isfinite(F):
        raise NumericalFailure("non-finite objective at start", iteration=0)
    if kkt <= tol:
        return v, b, F, 0, True, kkt, step, np.asarray(hist if trace else [])

    v_prev = v.copy()
    Xv_prev = Xv.copy()
    tk = 1.0
    mom = 0.0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        if mom > 0.0:
            z = v + mom * (v - v_prev)
            Xz = Xv + mom * (Xv - Xv_prev)
            rz = y - Xz - b
            fz = huber_sum(rz, delta)
            gz = -(X.T @ np.clip(rz, -delta, delta))
        else:
            z, Xz, fz, gz = v, Xv, f, grad
        while True:
            vn = prox_sgl(z - step * gz, step * thr1, step * thr2, ptr)
            d = vn - z
            Xvn = X @ vn
            rn = y - Xvn - b
            fn = huber_sum(rn, delta)
            if not math.isfinite(fn):
                raise NumericalFailure("non-finite loss during line search", iteration=it)
            if fn <= fz + float(np.dot(gz, d)) + float(np.dot(d, d)) / (2.0 * step) + 1e-12 * max(1.0, abs(fz)):
                break
            step *= BACKTRACK
            if step < 1e-300:
                raise NumericalFailure("step size underflow", iteration=it)
        bn = b
        if fit_intercept:
            bn = huber_location(y - Xvn, delta, b)
            rn = y - Xvn - bn
            fn = huber_sum(rn, delta)
        Fn = fn + penalty(vn, thr1, thr2, ptr)
        if not math.isfinite(Fn):
            raise NumericalFailure("non-finite objective", iteration=it)
        if Fn > F and mom > 0.0:
            # momentum overshot: restart from the last accepted point
            tk = 1.0
            mom = 0.0
            continue
        restart = float(np.dot(z - vn, vn - v)) > 0.0
        v_prev, Xv_prev = v, Xv
        v, Xv, b, f, F = vn, Xvn, bn, fn, Fn
        psi = np.clip(rn, -delta, delta)
        grad = -(X.T @ psi)
        kkt = kkt_residual(grad, v, thr1, thr2, ptr)
        if fit_intercept:
            kkt = max(kkt, abs(float(psi.sum())))
        if trace:
            hist.append(F)
        if kkt <= tol:
            converged = True
            break
        if restart:
            tk = 1.0
            mom = 0.0
        else:
            tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            mom = (tk - 1.0) / tn
            tk = tn
    return v, b, F, it, converged, kkt, step, np.asarray(hist if trace else [])
