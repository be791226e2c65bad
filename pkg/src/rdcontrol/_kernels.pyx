# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernels; same signatures and results as _kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, isfinite

cnp.import_array()

cdef int OK = 0
cdef int BLOWUP = 1
cdef int NONFINITE = 2


cdef inline void bmv_add(const double[:, :, :, ::1] mats, Py_ssize_t s, const double[:, ::1] x,
                         double[:, ::1] out, double scale) noexcept nogil:
    """out[:, k] += scale * mats[s, k] @ x[:, k]"""
    cdef Py_ssize_t n = x.shape[0], K = x.shape[1], k, i, j
    cdef double acc
    for k in range(K):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc = acc + mats[s, k, i, j] * x[j, k]
            out[i, k] += scale * acc


cdef void linear_pair(const double[:, :, :, ::1] EH, const double[:, :, :, ::1] Eh,
                      const double[:, :, :, ::1] Eq, Py_ssize_t s, double H,
                      const double[:, ::1] x, const double[:, ::1] g0, const double[:, ::1] g1,
                      const double[:, ::1] g2, double[:, ::1] gq, double[:, ::1] mid,
                      double[:, ::1] end) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], K = x.shape[1], i, k
    cdef double h = 0.5 * H
    for i in range(n):
        for k in range(K):
            gq[i, k] = 0.375 * g0[i, k] + 0.75 * g1[i, k] - 0.125 * g2[i, k]
            mid[i, k] = (h / 6.0) * g1[i, k]
            end[i, k] = (H / 6.0) * g2[i, k]
    bmv_add(Eh, s, x, mid, 1.0)
    bmv_add(Eh, s, g0, mid, h / 6.0)
    bmv_add(Eq, s, gq, mid, 4.0 * h / 6.0)
    bmv_add(EH, s, x, end, 1.0)
    bmv_add(EH, s, g0, end, H / 6.0)
    bmv_add(Eh, s, g1, end, 4.0 * H / 6.0)


def integrate_linear(x0, kinds, H, EH, Eh, Eq, g):
    cdef const double[:, ::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const Py_ssize_t[::1] kv = np.ascontiguousarray(kinds, dtype=np.intp)
    cdef const double[::1] Hv = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[:, :, :, ::1] EHv = np.ascontiguousarray(EH, dtype=np.float64)
    cdef const double[:, :, :, ::1] Ehv = np.ascontiguousarray(Eh, dtype=np.float64)
    cdef const double[:, :, :, ::1] Eqv = np.ascontiguousarray(Eq, dtype=np.float64)
    cdef const double[:, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t npairs = kv.shape[0], n = x0v.shape[0], K = x0v.shape[1], p
    out_arr = np.empty((2 * npairs + 1, n, K))
    cdef double[:, :, ::1] out = out_arr
    gq_arr = np.empty((n, K))
    cdef double[:, ::1] gq = gq_arr
    out[0, :, :] = x0v
    with nogil:
        for p in range(npairs):
            linear_pair(EHv, Ehv, Eqv, kv[p], Hv[kv[p]], out[2 * p], gv[2 * p], gv[2 * p + 1],
                        gv[2 * p + 2], gq, out[2 * p + 1], out[2 * p + 2])
    return out_arr, OK, -1


cdef double explicit_term(const double[:, ::1] x, const double[:, ::1] synth, const double[:, ::1] anal,
                          const double[:, ::1] pinv, const double[::1] ustar, const double[::1] v,
                          const double[:, ::1] a_lin, const Py_ssize_t[::1] alpha, const Py_ssize_t[::1] beta,
                          double[:, ::1] phys, double[:, ::1] y, double[::1] rate,
                          double[:, ::1] out) noexcept nogil:
    """out = v (anal @ R(y)) - a_lin @ x with y = pinv @ (x @ synth.T) + ustar; returns max |y| (nan if not finite)."""
    cdef Py_ssize_t n = x.shape[0], K = x.shape[1], Q = synth.shape[0], i, j, k, q, e
    cdef double acc, fwd, bwd, sup = 0.0, a
    for i in range(n):
        for q in range(Q):
            acc = 0.0
            for k in range(K):
                acc = acc + x[i, k] * synth[q, k]
            phys[i, q] = acc
    for i in range(n):
        for q in range(Q):
            acc = ustar[i]
            for j in range(n):
                acc = acc + pinv[i, j] * phys[j, q]
            y[i, q] = acc
            a = fabs(acc)
            if not isfinite(a):
                sup = a
            elif a > sup:
                sup = a
    for q in range(Q):
        fwd = 1.0
        bwd = 1.0
        for i in range(n):
            for e in range(alpha[i]):
                fwd = fwd * y[i, q]
            for e in range(beta[i]):
                bwd = bwd * y[i, q]
        rate[q] = fwd - bwd
    for k in range(K):
        acc = 0.0
        for q in range(Q):
            acc = acc + anal[k, q] * rate[q]
        for i in range(n):
            out[i, k] = v[i] * acc
    for i in range(n):
        for k in range(K):
            acc = 0.0
            for j in range(n):
                acc = acc + a_lin[i, j] * x[j, k]
            out[i, k] -= acc
    return sup


def integrate_nonlinear(x0, kinds, H, EH, Eh, Eq, F1H, G2H, F1h, G2h, g,
                        synth, anal, pinv, ustar, v, a_lin, alpha, beta, bound):
    cdef const double[:, ::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const Py_ssize_t[::1] kv = np.ascontiguousarray(kinds, dtype=np.intp)
    cdef const double[::1] Hv = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[:, :, :, ::1] EHv = np.ascontiguousarray(EH, dtype=np.float64)
    cdef const double[:, :, :, ::1] Ehv = np.ascontiguousarray(Eh, dtype=np.float64)
    cdef const double[:, :, :, ::1] Eqv = np.ascontiguousarray(Eq, dtype=np.float64)
    cdef const double[:, :, :, ::1] F1Hv = np.ascontiguousarray(F1H, dtype=np.float64)
    cdef const double[:, :, :, ::1] G2Hv = np.ascontiguousarray(G2H, dtype=np.float64)
    cdef const double[:, :, :, ::1] F1hv = np.ascontiguousarray(F1h, dtype=np.float64)
    cdef const double[:, :, :, ::1] G2hv = np.ascontiguousarray(G2h, dtype=np.float64)
    cdef const double[:, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[:, ::1] synv = np.ascontiguousarray(synth, dtype=np.float64)
    cdef const double[:, ::1] anv = np.ascontiguousarray(anal, dtype=np.float64)
    cdef const double[:, ::1] piv = np.ascontiguousarray(pinv, dtype=np.float64)
    cdef const double[::1] usv = np.ascontiguousarray(ustar, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[:, ::1] alv = np.ascontiguousarray(a_lin, dtype=np.float64)
    cdef const Py_ssize_t[::1] alp = np.ascontiguousarray(alpha, dtype=np.intp)
    cdef const Py_ssize_t[::1] bet = np.ascontiguousarray(beta, dtype=np.intp)
    cdef double bnd = bound
    cdef Py_ssize_t npairs = kv.shape[0], n = x0v.shape[0], K = x0v.shape[1], Q = synv.shape[0]
    cdef Py_ssize_t p, s, i, k, J = 2 * npairs + 1
    out_arr = np.zeros((J, n, K))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] gq = np.empty((n, K))
    cdef double[:, ::1] lin_m = np.empty((n, K))
    cdef double[:, ::1] lin = np.empty((n, K))
    cdef double[:, ::1] n0 = np.empty((n, K))
    cdef double[:, ::1] n1 = np.empty((n, K))
    cdef double[:, ::1] diff = np.empty((n, K))
    cdef double[:, ::1] phys = np.empty((n, Q))
    cdef double[:, ::1] y = np.empty((n, Q))
    cdef double[::1] rate = np.empty(Q)
    cdef double sup
    cdef int status = OK
    cdef Py_ssize_t where = -1
    out[0, :, :] = x0v
    with nogil:
        for p in range(npairs):
            s = kv[p]
            sup = explicit_term(out[2 * p], synv, anv, piv, usv, vv, alv, alp, bet, phys, y, rate, n0)
            if not isfinite(sup):
                status = NONFINITE
                where = 2 * p
                break
            if sup > bnd:
                status = BLOWUP
                where = 2 * p
                break
            linear_pair(EHv, Ehv, Eqv, s, Hv[s], out[2 * p], gv[2 * p], gv[2 * p + 1], gv[2 * p + 2], gq,
                        lin_m, lin)
            # midpoint: a_m = lin_m + F1h n0, then + G2h (N(a_m) - n0)
            bmv_add(F1hv, s, n0, lin_m, 1.0)
            explicit_term(lin_m, synv, anv, piv, usv, vv, alv, alp, bet, phys, y, rate, n1)
            for i in range(n):
                for k in range(K):
                    diff[i, k] = n1[i, k] - n0[i, k]
                    out[2 * p + 1, i, k] = lin_m[i, k]
            bmv_add(G2hv, s, diff, out[2 * p + 1], 1.0)
            # pair end
            bmv_add(F1Hv, s, n0, lin, 1.0)
            explicit_term(lin, synv, anv, piv, usv, vv, alv, alp, bet, phys, y, rate, n1)
            for i in range(n):
                for k in range(K):
                    diff[i, k] = n1[i, k] - n0[i, k]
                    out[2 * p + 2, i, k] = lin[i, k]
            bmv_add(G2Hv, s, diff, out[2 * p + 2], 1.0)
        if status == OK:
            sup = explicit_term(out[J - 1], synv, anv, piv, usv, vv, alv, alp, bet, phys, y, rate, n1)
            if not isfinite(sup):
                status = NONFINITE
                where = J - 1
            elif sup > bnd:
                status = BLOWUP
                where = J - 1
    return out_arr, status, where
