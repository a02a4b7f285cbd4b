# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the data-augmentation sweep.

Mirrors :mod:`unbounded_dp._pykernels` operation for operation so both
backends produce bit-identical chains.
"""

from libc.math cimport fabs, INFINITY

import numpy as np


cdef inline double _log_g(const double[::1] s, const double[::1] t,
                          const double[::1] w, int kind) noexcept nogil:
    cdef Py_ssize_t c
    cdef double acc = 0.0
    cdef double z
    if kind == 0:
        for c in range(s.shape[0]):
            acc -= w[c] * fabs(s[c] - t[c])
    else:
        for c in range(s.shape[0]):
            z = s[c] - t[c]
            acc -= w[c] * (z * z)
    return acc


def log_g(const double[::1] s, const double[::1] t, const double[::1] w, int kind):
    return _log_g(s, t, w, kind)


def additive_sweep(double[:, ::1] x, double[:, ::1] rec,
                   const double[:, ::1] x_star, const double[:, ::1] rec_star,
                   double[::1] t, const double[::1] s, const double[::1] w,
                   const double[::1] log_u, Py_ssize_t n, int kind,
                   double[::1] log_alpha_out=None):
    """Sequential Metropolis sweep over records ``0..n-1``.

    Updates ``x``, ``rec`` and ``t`` in place. Returns ``(accepted,
    min_log_alpha)``.
    """
    cdef Py_ssize_t i, c, j
    cdef Py_ssize_t d = t.shape[0]
    cdef Py_ssize_t m = x.shape[1]
    cdef Py_ssize_t accepted = 0
    cdef double lg_cur, lg_new, la, z, min_la = 0.0
    cdef bint record = log_alpha_out is not None
    cdef double[::1] t_new = np.empty(d, dtype=np.float64)

    with nogil:
        lg_cur = _log_g(s, t, w, kind)
        for i in range(n):
            for c in range(d):
                t_new[c] = t[c] - rec[i, c] + rec_star[i, c]
            lg_new = _log_g(s, t_new, w, kind)
            la = lg_new - lg_cur
            if la > 0.0:
                la = 0.0
            if la < min_la:
                min_la = la
            if record:
                log_alpha_out[i] = la
            if log_u[i] < la:
                accepted += 1
                lg_cur = lg_new
                for c in range(d):
                    t[c] = t_new[c]
                    rec[i, c] = rec_star[i, c]
                for j in range(m):
                    x[i, j] = x_star[i, j]
    return accepted, min_la
