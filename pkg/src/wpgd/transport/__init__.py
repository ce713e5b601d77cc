"""1-D transport costs, flows, and projection onto a transport-cost ball.

The distance used throughout is the cumulative-sum transport cost

    d(u, v) = sum_i | prefix(u)_i - prefix(v)_i |

applied directly to raw (possibly signed, z-normalized) signal values. For
nonnegative equal-mass inputs this coincides with the 1-Wasserstein distance
with ground metric |i - j|; for signed signals it is the natural extension
and is what the attack and the smoothing certificate budget against.

Hot kernels (distance, its gradient, the projection descent loop) live in a
compiled extension when available; a numpy reference implementation is
selected at import time otherwise. Set WPGD_PURE_PYTHON=1 to force the
fallback. `python benchmarks/bench_transport.py` compares the two.
"""

import os

import numpy as np

from . import _reference

_speedups = None
if not os.environ.get("WPGD_PURE_PYTHON"):
    try:
        from . import _speedups
    except ImportError:
        _speedups = None

_impl = _speedups if _speedups is not None else _reference

#: Active kernel backend: "compiled" or "python".
BACKEND = "compiled" if _speedups is not None else "python"

__all__ = [
    "BACKEND",
    "UnequalMassError",
    "WassersteinBall",
    "apply_flow",
    "brute_force_transport_cost",
    "canonical_flow",
    "distance_w1",
    "distance_w1_gradient",
    "project_wasserstein",
]


class UnequalMassError(ValueError):
    """Raised when an operation requires equal total mass and the inputs differ."""


def _as_signal(a, name):
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def _as_pair(u, v):
    u = _as_signal(u, "u")
    v = _as_signal(v, "v")
    if u.shape[0] != v.shape[0]:
        raise ValueError(f"length mismatch: u has {u.shape[0]}, v has {v.shape[0]}")
    return u, v


def distance_w1(u, v):
    """Cumulative-sum transport cost between two equal-length signals.

    Symmetric, nonnegative, and zero exactly when all prefix sums coincide.
    """
    u, v = _as_pair(u, v)
    return float(_impl.w1_distance(u, v))


def distance_w1_gradient(u, v):
    """Gradient of distance_w1(u, .) evaluated at v.

    Component j is -sum_{i >= j} sign(P_i) with P the prefix-sum differences
    and sign(0) = 0, so the gradient vanishes at v = u. Matches central
    finite differences wherever no P_i sits on a sign boundary.
    """
    u, v = _as_pair(u, v)
    return np.asarray(_impl.w1_gradient(u, v))


def canonical_flow(u, v):
    """Adjacent-step flow turning v into u: flows[i] = sum_{j <= i} (u_j - v_j).

    Requires equal total mass (tolerance 1e-9). The L1 norm of the flow
    equals distance_w1(u, v), and apply_flow(v, canonical_flow(u, v)) == u.
    """
    u, v = _as_pair(u, v)
    su, sv = float(u.sum()), float(v.sum())
    if abs(su - sv) > 1e-9:
        raise UnequalMassError(
            f"total mass differs: sum(u)={su!r}, sum(v)={sv!r}"
        )
    return np.cumsum(u - v)[:-1]


def apply_flow(v, flow):
    """Move mass along adjacent-step flows; preserves the total sum exactly.

    flow[i] > 0 moves mass from step i+1 to step i (the convention under
    which canonical_flow round-trips): out_i = v_i + flow_i - flow_{i-1}
    with zero flow beyond both ends.
    """
    v = _as_signal(v, "v")
    f = _as_signal(flow, "flow")
    if f.shape[0] != v.shape[0] - 1:
        raise ValueError(
            f"flow length must be len(v)-1: flow has {f.shape[0]}, v has {v.shape[0]}"
        )
    out = v.copy()
    out[:-1] += f
    out[1:] -= f
    return out


def project_wasserstein(x, start, bound, step=None, max_iters=500):
    """Project `start` into the radius-`bound` transport ball around `x`.

    Gradient descent on d(x, .) from `start`, stepping by `step` (default
    0.01 * bound) for at most `max_iters` iterations. Returns
    (result, converged): converged=True guarantees distance_w1(x, result)
    <= bound; on iteration exhaustion the last iterate is returned with
    converged=False so the caller can decide. A start already inside the
    ball is returned unchanged.
    """
    x, start = _as_pair(x, start)
    if not np.isfinite(start).all():
        raise ValueError("start contains non-finite values")
    if not np.isfinite(x).all():
        raise ValueError("x contains non-finite values")
    if bound < 0:
        raise ValueError(f"bound must be >= 0, got {bound}")
    if step is None:
        step = 0.01 * bound
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    result, converged, _ = _impl.w1_project(
        x, start, float(bound), float(step), int(max_iters)
    )
    return np.asarray(result), bool(converged)


def brute_force_transport_cost(u, v):
    """Exact min-cost transport between nonnegative equal-mass signals.

    Greedy two-pointer sweep over cumulative mass with ground cost |i - j|;
    exact on the line. Validation oracle only, hence the small-n guard.
    """
    u, v = _as_pair(u, v)
    n = u.shape[0]
    if n > 32:
        raise ValueError(f"oracle limited to n <= 32, got n={n}")
    if (u < 0).any() or (v < 0).any():
        raise ValueError("oracle requires nonnegative mass")
    su, sv = float(u.sum()), float(v.sum())
    if abs(su - sv) > 1e-9:
        raise UnequalMassError(
            f"total mass differs: sum(u)={su!r}, sum(v)={sv!r}"
        )
    supply = u.copy()
    demand = v.copy()
    cost = 0.0
    i = j = 0
    while i < n and j < n:
        if supply[i] <= 1e-15:
            i += 1
            continue
        if demand[j] <= 1e-15:
            j += 1
            continue
        moved = min(supply[i], demand[j])
        cost += moved * abs(i - j)
        supply[i] -= moved
        demand[j] -= moved
    return cost


class WassersteinBall:
    """Transport-cost ball: all signals within `radius` of `center`."""

    def __init__(self, center, radius):
        if radius < 0:
            raise ValueError(f"radius must be >= 0, got {radius}")
        self.center = _as_signal(center, "center")
        self.radius = float(radius)

    def contains(self, v, tol=1e-9):
        return distance_w1(self.center, v) <= self.radius + tol

    def project(self, start, step=None, max_iters=500):
        return project_wasserstein(
            self.center, start, self.radius, step=step, max_iters=max_iters
        )
