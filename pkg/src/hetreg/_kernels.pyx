# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled solver kernels.

Same contract and arithmetic as ``_kernels_py``; matrix-vector products go
through BLAS ``dgemv`` and the iteration loop runs without the GIL so
independent solves can share threads.
"""

import numpy as np

from libc.math cimport fabs, sqrt, isfinite
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemv

from .errors import NumericalFailure

cdef double BACKTRACK = 0.8


cdef inline double _sign(double x) noexcept nogil:
    if x > 0:
        return 1.0
    if x < 0:
        return -1.0
    return 0.0


cdef inline double _clip(double x, double d) noexcept nogil:
    if x > d:
        return d
    if x < -d:
        return -d
    return x


cdef void _matvec(const double* X, int n, int P, const double* v, double* out) noexcept nogil:
    # out = X @ v with X row-major n x P (column-major P x n)
    cdef int i, inc = 1, lda = P
    cdef double one = 1.0, zero = 0.0
    cdef char trans = b'T'
    if P == 0:
        for i in range(n):
            out[i] = 0.0
        return
    dgemv(&trans, &P, &n, &one, <double*>X, &lda, <double*>v, &inc, &zero, out, &inc)


cdef void _rmatvec(const double* X, int n, int P, const double* w, double* out) noexcept nogil:
    # out = X.T @ w
    cdef int j, inc = 1, lda = P
    cdef double one = 1.0, zero = 0.0
    cdef char trans = b'N'
    if n == 0:
        for j in range(P):
            out[j] = 0.0
        return
    dgemv(&trans, &P, &n, &one, <double*>X, &lda, <double*>w, &inc, &zero, out, &inc)


cdef double _huber_sum(const double* r, int n, double delta) noexcept nogil:
    cdef double q = 0.0, lin = 0.0, a
    cdef int i
    for i in range(n):
        a = fabs(r[i])
        if a <= delta:
            q += r[i] * r[i]
        else:
            lin += delta * a - 0.5 * delta * delta
    return 0.5 * q + lin


cdef double _huber_location(const double* s, int n, double delta, double b0) noexcept nogil:
    cdef double lo = s[0], hi = s[0], b, psi, d, bn
    cdef int i, it, cnt
    for i in range(1, n):
        if s[i] < lo:
            lo = s[i]
        if s[i] > hi:
            hi = s[i]
    if lo == hi:
        return lo
    b = b0
    if b < lo:
        b = lo
    if b > hi:
        b = hi
    for it in range(200):
        psi = 0.0
        cnt = 0
        for i in range(n):
            d = s[i] - b
            psi += _clip(d, delta)
            if fabs(d) < delta:
                cnt += 1
        if psi > 0:
            lo = b
        elif psi < 0:
            hi = b
        else:
            return b
        if hi - lo <= 1e-15 * (1.0 + fabs(b)):
            return b
        if cnt > 0:
            bn = b + psi / cnt
        else:
            bn = 0.5 * (lo + hi)
        if not (lo < bn and bn < hi):
            bn = 0.5 * (lo + hi)
        if bn == b:
            return b
        b = bn
    return b


cdef void _prox(const double* u, double* out, int P, double thr1, const double* thr2,
                const long* ptr, int L) noexcept nogil:
    cdef int l, j
    cdef double a, nrm, fac
    for l in range(L):
        nrm = 0.0
        for j in range(ptr[l], ptr[l + 1]):
            a = fabs(u[j]) - thr1
            if a > 0:
                out[j] = _sign(u[j]) * a
                nrm += out[j] * out[j]
            else:
                out[j] = 0.0
        nrm = sqrt(nrm)
        if nrm > 0:
            fac = 1.0 - thr2[l] / nrm
            if fac < 0:
                fac = 0.0
        else:
            fac = 0.0
        for j in range(ptr[l], ptr[l + 1]):
            out[j] = out[j] * fac


cdef double _penalty(const double* v, double thr1, const double* thr2, const long* ptr, int L) noexcept nogil:
    cdef double l1 = 0.0, grp = 0.0, nrm
    cdef int l, j
    for l in range(L):
        nrm = 0.0
        for j in range(ptr[l], ptr[l + 1]):
            l1 += fabs(v[j])
            nrm += v[j] * v[j]
        grp += thr2[l] * sqrt(nrm)
    return thr1 * l1 + grp


cdef double _kkt(const double* g, const double* v, double thr1, const double* thr2,
                 const long* ptr, int L) noexcept nogil:
    cdef double worst = 0.0, vn, en, sn, e, s, res
    cdef int l, j
    for l in range(L):
        vn = 0.0
        for j in range(ptr[l], ptr[l + 1]):
            vn += v[j] * v[j]
        vn = sqrt(vn)
        en = 0.0
        sn = 0.0
        for j in range(ptr[l], ptr[l + 1]):
            s = fabs(g[j]) - thr1
            if s < 0:
                s = 0.0
            sn += s * s
            if vn > 0:
                if v[j] != 0:
                    e = g[j] + thr1 * _sign(v[j]) + thr2[l] * v[j] / vn
                else:
                    e = s
                en += e * e
        if vn > 0:
            res = sqrt(en)
        else:
            res = sqrt(sn) - thr2[l]
            if res < 0:
                res = 0.0
        if res > worst:
            worst = res
    return worst


# ---------------------------------------------------------------------------
# Python-visible wrappers
# ---------------------------------------------------------------------------


def huber_sum(r, double delta):
    cdef const double[::1] rv = np.ascontiguousarray(r, dtype=float)
    if rv.shape[0] == 0:
        return 0.0
    return _huber_sum(&rv[0], rv.shape[0], delta)


def huber_location(s, double delta, double b0=0.0):
    cdef const double[::1] sv = np.ascontiguousarray(s, dtype=float)
    return _huber_location(&sv[0], sv.shape[0], delta, b0)


def prox_sgl(u, double thr1, thr2, ptr):
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=float)
    cdef const double[::1] t2 = np.ascontiguousarray(thr2, dtype=float)
    cdef const long[::1] pv = np.ascontiguousarray(ptr, dtype=np.int64)
    out = np.zeros(uv.shape[0])
    cdef double[::1] ov = out
    if uv.shape[0]:
        _prox(&uv[0], &ov[0], uv.shape[0], thr1, &t2[0], &pv[0], pv.shape[0] - 1)
    return out


def penalty(v, double thr1, thr2, ptr):
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=float)
    cdef const double[::1] t2 = np.ascontiguousarray(thr2, dtype=float)
    cdef const long[::1] pv = np.ascontiguousarray(ptr, dtype=np.int64)
    if vv.shape[0] == 0:
        return 0.0
    return _penalty(&vv[0], thr1, &t2[0], &pv[0], pv.shape[0] - 1)


def kkt_residual(grad, v, double thr1, thr2, ptr):
    cdef const double[::1] gv = np.ascontiguousarray(grad, dtype=float)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=float)
    cdef const double[::1] t2 = np.ascontiguousarray(thr2, dtype=float)
    cdef const long[::1] pv = np.ascontiguousarray(ptr, dtype=np.int64)
    if vv.shape[0] == 0:
        return 0.0
    return _kkt(&gv[0], &vv[0], thr1, &t2[0], &pv[0], pv.shape[0] - 1)


def pg_solve(X, y, ptr, double thr1, thr2, double delta, v0, double b0, bint fit_intercept,
             double tol, int max_iter, double step0, bint trace=False):
    """Accelerated proximal gradient with backtracking and monotone restarts.

    Returns ``(v, b, F, iterations, converged, kkt, step, trace_array)``.
    """
    cdef const double[:, ::1] Xm = np.ascontiguousarray(X, dtype=float)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=float)
    cdef const long[::1] pv = np.ascontiguousarray(ptr, dtype=np.int64)
    cdef const double[::1] t2 = np.ascontiguousarray(thr2, dtype=float)
    cdef int n = Xm.shape[0], P = Xm.shape[1], L = pv.shape[0] - 1
    v_out = np.array(v0, dtype=float)
    cdef double[::1] v = v_out
    hist = np.empty(max_iter + 1 if trace else 0)
    cdef double[::1] hv = hist

    # workspace: 8 P-vectors, 5 n-vectors
    cdef double* wsP = <double*>malloc(8 * max(P, 1) * sizeof(double))
    cdef double* wsN = <double*>malloc(5 * max(n, 1) * sizeof(double))
    if wsP == NULL or wsN == NULL:
        free(wsP)
        free(wsN)
        raise MemoryError()
    cdef double* v_prev = wsP
    cdef double* z = wsP + P
    cdef double* gz = wsP + 2 * P
    cdef double* grad = wsP + 3 * P
    cdef double* vn = wsP + 4 * P
    cdef double* u = wsP + 5 * P
    cdef double* tmp = wsP + 6 * P
    cdef double* vbuf = wsP + 7 * P
    cdef double* Xv = wsN
    cdef double* Xv_prev = wsN + n
    cdef double* Xvn = wsN + 2 * n
    cdef double* r = wsN + 3 * n
    cdef double* w = wsN + 4 * n

    cdef const double* Xp = &Xm[0, 0] if n > 0 and P > 0 else NULL
    cdef const double* yp = &yv[0]
    cdef const double* t2p = &t2[0]
    cdef const long* pp = &pv[0]
    cdef double b = b0 if fit_intercept else 0.0
    cdef double step = step0, f, F, fz, fn, Fn, bn, kkt, psum, mom = 0.0, tk = 1.0, tn, lhs, dd, gd, rs
    cdef int it = 0, i, j, err = 0, nh = 0
    cdef bint converged = False, restart

    with nogil:
        for j in range(P):
            vbuf[j] = v[j]
        _matvec(Xp, n, P, vbuf, Xv)
        if fit_intercept:
            for i in range(n):
                r[i] = yp[i] - Xv[i]
            b = _huber_location(r, n, delta, b)
        for i in range(n):
            r[i] = yp[i] - Xv[i] - b
        f = _huber_sum(r, n, delta)
        F = f + _penalty(vbuf, thr1, t2p, pp, L)
        psum = 0.0
        for i in range(n):
            w[i] = _clip(r[i], delta)
            psum += w[i]
        _rmatvec(Xp, n, P, w, grad)
        for j in range(P):
            grad[j] = -grad[j]
        kkt = _kkt(grad, vbuf, thr1, t2p, pp, L)
        if fit_intercept and fabs(psum) > kkt:
            kkt = fabs(psum)
        if trace:
            hv[nh] = F
            nh += 1
        if not isfinite(F):
            err = 1
        elif kkt <= tol:
            converged = True
        else:
            for j in range(P):
                v_prev[j] = vbuf[j]
            for i in range(n):
                Xv_prev[i] = Xv[i]
            while it < max_iter:
                it += 1
                if mom > 0.0:
                    for j in range(P):
                        z[j] = vbuf[j] + mom * (vbuf[j] - v_prev[j])
                    for i in range(n):
                        r[i] = yp[i] - (Xv[i] + mom * (Xv[i] - Xv_prev[i])) - b
                    fz = _huber_sum(r, n, delta)
                    for i in range(n):
                        w[i] = _clip(r[i], delta)
                    _rmatvec(Xp, n, P, w, gz)
                    for j in range(P):
                        gz[j] = -gz[j]
                else:
                    for j in range(P):
                        z[j] = vbuf[j]
                        gz[j] = grad[j]
                    fz = f
                while True:
                    for j in range(P):
                        u[j] = z[j] - step * gz[j]
                    for j in range(L):
                        tmp[j] = step * t2p[j]
                    _prox(u, vn, P, step * thr1, tmp, pp, L)
                    gd = 0.0
                    dd = 0.0
                    for j in range(P):
                        gd += gz[j] * (vn[j] - z[j])
                        dd += (vn[j] - z[j]) * (vn[j] - z[j])
                    _matvec(Xp, n, P, vn, Xvn)
                    for i in range(n):
                        r[i] = yp[i] - Xvn[i] - b
                    fn = _huber_sum(r, n, delta)
                    if not isfinite(fn):
                        err = 2
                        break
                    rs = fabs(fz)
                    if rs < 1.0:
                        rs = 1.0
                    if fn <= fz + gd + dd / (2.0 * step) + 1e-12 * rs:
                        break
                    step *= BACKTRACK
                    if step < 1e-300:
                        err = 3
                        break
                if err:
                    break
                bn = b
                if fit_intercept:
                    for i in range(n):
                        r[i] = yp[i] - Xvn[i]
                    bn = _huber_location(r, n, delta, b)
                    for i in range(n):
                        r[i] = yp[i] - Xvn[i] - bn
                    fn = _huber_sum(r, n, delta)
                Fn = fn + _penalty(vn, thr1, t2p, pp, L)
                if not isfinite(Fn):
                    err = 4
                    break
                if Fn > F and mom > 0.0:
                    tk = 1.0
                    mom = 0.0
                    continue
                lhs = 0.0
                for j in range(P):
                    lhs += (z[j] - vn[j]) * (vn[j] - vbuf[j])
                restart = lhs > 0.0
                for j in range(P):
                    v_prev[j] = vbuf[j]
                    vbuf[j] = vn[j]
                for i in range(n):
                    Xv_prev[i] = Xv[i]
                    Xv[i] = Xvn[i]
                b = bn
                f = fn
                F = Fn
                psum = 0.0
                for i in range(n):
                    w[i] = _clip(r[i], delta)
                    psum += w[i]
                _rmatvec(Xp, n, P, w, grad)
                for j in range(P):
                    grad[j] = -grad[j]
                kkt = _kkt(grad, vbuf, thr1, t2p, pp, L)
                if fit_intercept and fabs(psum) > kkt:
                    kkt = fabs(psum)
                if trace:
                    hv[nh] = F
                    nh += 1
                if kkt <= tol:
                    converged = True
                    break
                if restart:
                    tk = 1.0
                    mom = 0.0
                else:
                    tn = 0.5 * (1.0 + sqrt(1.0 + 4.0 * tk * tk))
                    mom = (tk - 1.0) / tn
                    tk = tn
        for j in range(P):
            v[j] = vbuf[j]

    free(wsP)
    free(wsN)
    if err == 1:
        raise NumericalFailure("non-finite objective at start", iteration=0)
    if err == 2:
        raise NumericalFailure("non-finite loss during line search", iteration=it)
    if err == 3:
        raise NumericalFailure("step size underflow", iteration=it)
    if err == 4:
        raise NumericalFailure("non-finite objective", iteration=it)
    return v_out, b, F, it, bool(converged), kkt, step, hist[:nh]
