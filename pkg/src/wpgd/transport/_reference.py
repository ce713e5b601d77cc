"""Pure-numpy transport kernels.

Fallback backend for wpgd.transport; mirrors the compiled _speedups module
function for function. Inputs are assumed validated (1-D float64, equal
length) by the public wrappers.
"""

import numpy as np


def w1_distance(u, v):
    """Cumulative-sum transport cost: sum_i |prefix(u)_i - prefix(v)_i|."""
    return float(np.abs(np.cumsum(u - v)).sum())


def w1_gradient(u, v):
    """Gradient of w1_distance(u, .) at v; sign(0) taken as 0.

    Component j is -sum_{i >= j} sign(prefix(u - v)_i).
    """
    signs = np.sign(np.cumsum(u - v))
    return -np.cumsum(signs[::-1])[::-1]


def w1_project(x, start, bound, step, max_iters):
    """Descend w1_distance(x, .) from `start` until inside the radius-`bound` ball.

    Returns (iterate, converged, iters_used). Non-convergence returns the last
    iterate with converged=False; the caller decides what to do with it.
    """
    r = np.array(start, dtype=np.float64, copy=True)
    dist = w1_distance(x, r)
    iters = 0
    while dist > bound:
        if iters >= max_iters:
            return r, False, iters
        r -= step * w1_gradient(x, r)
        dist = w1_distance(x, r)
        iters += 1
    return r, True, iters
