# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled distance kernels: float32 inputs, float64 accumulation.

The single-pair functions share their inner loops with the batch forms, so
within this backend both round identically.
"""

from libc.math cimport sqrt

import numpy as np

BACKEND = "compiled"


cdef inline double _l2_sq_row(const float[::1] a, const float[::1] b) nogil:
    cdef Py_ssize_t j
    cdef double acc = 0.0
    cdef double diff
    for j in range(a.shape[0]):
        diff = <double> a[j] - <double> b[j]
        acc += diff * diff
    return acc


cdef inline double _dot_row(const float[::1] a, const float[::1] b) nogil:
    cdef Py_ssize_t j
    cdef double acc = 0.0
    for j in range(a.shape[0]):
        acc += <double> a[j] * <double> b[j]
    return acc


cdef inline double _norm_row(const float[::1] a) nogil:
    return sqrt(_dot_row(a, a))


def l2_sq(const float[::1] a, const float[::1] b):
    if a.shape[0] != b.shape[0]:
        raise ValueError("dimension mismatch")
    return _l2_sq_row(a, b)


def ip_dist(const float[::1] a, const float[::1] b):
    if a.shape[0] != b.shape[0]:
        raise ValueError("dimension mismatch")
    return 1.0 - _dot_row(a, b)


def cosine_dist(const float[::1] a, const float[::1] b):
    if a.shape[0] != b.shape[0]:
        raise ValueError("dimension mismatch")
    cdef double na = _norm_row(a)
    cdef double nb = _norm_row(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance is undefined for zero vectors")
    return 1.0 - _dot_row(a, b) / (na * nb)


def l2_sq_batch(const float[::1] q, const float[:, ::1] xs):
    if xs.shape[1] != q.shape[0]:
        raise ValueError("dimension mismatch")
    cdef Py_ssize_t i, n = xs.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    for i in range(n):
        ov[i] = _l2_sq_row(q, xs[i])
    return out


def ip_dist_batch(const float[::1] q, const float[:, ::1] xs):
    if xs.shape[1] != q.shape[0]:
        raise ValueError("dimension mismatch")
    cdef Py_ssize_t i, n = xs.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    for i in range(n):
        ov[i] = 1.0 - _dot_row(q, xs[i])
    return out


def cosine_dist_batch(const float[::1] q, const float[:, ::1] xs):
    if xs.shape[1] != q.shape[0]:
        raise ValueError("dimension mismatch")
    cdef double nq = _norm_row(q)
    if nq == 0.0:
        raise ValueError("cosine distance is undefined for zero vectors")
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef double nx
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    for i in range(n):
        nx = _norm_row(xs[i])
        if nx == 0.0:
            raise ValueError("cosine distance is undefined for zero vectors")
        ov[i] = 1.0 - _dot_row(q, xs[i]) / (nq * nx)
    return out
