# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step kernels.

Same signatures and semantics as ``_kernels_py``; see that module for the
reference behaviour.
"""
import numpy as np
from libc.math cimport sqrt


cdef inline void _outer_add(double[:, ::1] m, const double[::1] u, const double[::1] v, double s) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = m.shape[0]
    cdef Py_ssize_t p = m.shape[1]
    cdef double ui
    for i in range(n):
        ui = s * u[i]
        if ui == 0.0:
            continue
        for j in range(p):
            m[i, j] += ui * v[j]


def rank1_update(double[:, ::1] m, const double[::1] u, const double[::1] v, double scale=1.0):
    if m.shape[0] != u.shape[0] or m.shape[1] != v.shape[0]:
        raise ValueError("rank1_update: shape mismatch")
    with nogil:
        _outer_add(m, u, v, scale)


def accumulate(double[:, :, ::1] ctc_a, double[:, :, ::1] ptp_a,
               double[:, ::1] ctc, double[:, ::1] ptp, double[:, ::1] ctp,
               double[:, ::1] ctl_a, double[:, ::1] ptl_a,
               const double[::1] c, const double[::1] p, double loss, Py_ssize_t a):
    cdef Py_ssize_t i
    cdef Py_ssize_t dc = c.shape[0]
    cdef Py_ssize_t dp = p.shape[0]
    with nogil:
        _outer_add(ctc_a[a], c, c, 1.0)
        _outer_add(ctc, c, c, 1.0)
        _outer_add(ptp_a[a], p, p, 1.0)
        _outer_add(ptp, p, p, 1.0)
        _outer_add(ctp, c, p, 1.0)
        for i in range(dc):
            ctl_a[a, i] += c[i] * loss
        for i in range(dp):
            ptl_a[a, i] += p[i] * loss


def accumulate_context(double[:, :, ::1] ctc_a, double[:, ::1] ctc, double[:, ::1] ctl_a,
                       const double[::1] c, double loss, Py_ssize_t a):
    cdef Py_ssize_t i
    with nogil:
        _outer_add(ctc_a[a], c, c, 1.0)
        _outer_add(ctc, c, c, 1.0)
        for i in range(c.shape[0]):
            ctl_a[a, i] += c[i] * loss


def lcb_scan(const double[:, :, ::1] chol, const double[:, ::1] theta, const double[::1] c,
             double alpha, double width_scale, double[::1] out):
    cdef Py_ssize_t k = chol.shape[0]
    cdef Py_ssize_t d = chol.shape[1]
    cdef Py_ssize_t a, i, j
    cdef double acc, q, mean
    cdef Py_ssize_t best = 0
    cdef double[::1] y = np.empty(d, dtype=np.float64)
    if theta.shape[0] != k or theta.shape[1] != d or c.shape[0] != d or out.shape[0] != k:
        raise ValueError("lcb_scan: shape mismatch")
    with nogil:
        for a in range(k):
            # forward substitution L y = c, so c' A^{-1} c = |y|^2
            q = 0.0
            for i in range(d):
                acc = c[i]
                for j in range(i):
                    acc -= chol[a, i, j] * y[j]
                y[i] = acc / chol[a, i, i]
                q += y[i] * y[i]
            mean = 0.0
            for i in range(d):
                mean += theta[a, i] * c[i]
            out[a] = mean - alpha * sqrt(width_scale * q)
            if out[a] < out[best]:
                best = a
    return best
