# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled transport kernels.

Same contracts as wpgd.transport._reference; the projection loop runs
entirely in C, which is what makes per-iteration projection affordable
inside the attack loop.
"""

import numpy as np

from libc.math cimport fabs


cdef inline double _sign(double a) nogil:
    if a > 0.0:
        return 1.0
    if a < 0.0:
        return -1.0
    return 0.0


def w1_distance(double[::1] u, double[::1] v):
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double prefix = 0.0, total = 0.0
    for i in range(n):
        prefix += u[i] - v[i]
        total += fabs(prefix)
    return total


def w1_gradient(double[::1] u, double[::1] v):
    cdef Py_ssize_t i, n = u.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] g = out
    cdef double prefix = 0.0, suffix = 0.0
    # forward pass stores sign(prefix_i) in g, backward pass accumulates
    for i in range(n):
        prefix += u[i] - v[i]
        g[i] = _sign(prefix)
    for i in range(n - 1, -1, -1):
        suffix += g[i]
        g[i] = -suffix
    return out


def w1_project(double[::1] x, double[::1] start, double bound, double step,
               int max_iters):
    cdef Py_ssize_t i, n = x.shape[0]
    res = np.array(start, dtype=np.float64, copy=True)
    cdef double[::1] r = res
    signs = np.empty(n, dtype=np.float64)
    cdef double[::1] s = signs
    cdef double prefix, suffix, dist
    cdef int iters = 0

    prefix = 0.0
    dist = 0.0
    for i in range(n):
        prefix += x[i] - r[i]
        dist += fabs(prefix)

    while dist > bound:
        if iters >= max_iters:
            return res, False, iters
        prefix = 0.0
        for i in range(n):
            prefix += x[i] - r[i]
            s[i] = _sign(prefix)
        suffix = 0.0
        for i in range(n - 1, -1, -1):
            suffix += s[i]
            r[i] += step * suffix  # descent step: r -= step * (-suffix)
        prefix = 0.0
        dist = 0.0
        for i in range(n):
            prefix += x[i] - r[i]
            dist += fabs(prefix)
        iters += 1
    return res, True, iters
