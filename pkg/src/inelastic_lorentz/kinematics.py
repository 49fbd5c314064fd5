"""Arc length of a uniformly accelerated flight and its inverse.

A particle leaving with velocity ``v`` under constant acceleration ``a`` follows
``p(s) = v s + a s^2 / 2``. Splitting ``v`` into the component ``b`` along ``a``
and the magnitude ``c`` of the orthogonal part, the speed is
``sqrt(c^2 + (b + g s)^2)`` with ``g = |a|`` and the travelled length has a
closed form in terms of ``asinh``.

The scalar kernels (``arc_length``, ``flight_time``, ``speed``) take ``(b, c, g)``
and are compiled with numba so the chain kernels can call them in a tight loop.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .errors import NumericError, UnsupportedParameterError

RTOL_INVERT = 1e-12
_AXIAL_EPS = 1e-12
_EPS = 2.220446049250313e-16
_MAX_ITER = 200


@njit(cache=True, nogil=True)
def speed(b, c, g, t):
    u = b + g * t
    return math.sqrt(c * c + u * u)


@njit(cache=True, nogil=True)
def arc_length(b, c, g, t):
    """Length of the parabola up to time ``t`` for axial data ``(b, c, g)``."""
    if t <= 0.0:
        return 0.0
    u1 = b
    du = g * t
    u2 = b + du
    same_sign = u1 >= 0.0 or u2 <= 0.0
    if c < _AXIAL_EPS * max(abs(b), g):
        # |u| integrand; factor (u1 + u2) keeps relative accuracy for short hops
        if u1 >= 0.0:
            val = du * (u1 + u2)
        elif u2 <= 0.0:
            val = -du * (u1 + u2)
        else:
            val = u1 * u1 + u2 * u2
        return 0.5 * val / g
    s1 = math.sqrt(c * c + u1 * u1)
    s2 = math.sqrt(c * c + u2 * u2)
    if same_sign:
        lin = du * (u1 + u2) * (c * c + u1 * u1 + u2 * u2) / (u2 * s2 + u1 * s1)
    else:
        lin = u2 * s2 - u1 * s1
    x1 = u1 / c
    x2 = u2 / c
    r1 = math.sqrt(1.0 + x1 * x1)
    r2 = math.sqrt(1.0 + x2 * x2)
    if same_sign:
        ash = math.asinh((du / c) * (x1 + x2) / (x2 * r1 + x1 * r2))
    else:
        ash = math.asinh(x2) - math.asinh(x1)
    return 0.5 * (lin + c * c * ash) / g


@njit(cache=True, nogil=True)
def flight_time(b, c, g, eta):
    """Invert ``arc_length`` in ``t``; returns -1.0 if the iteration fails.

    Newton on ``L(t) - eta`` with ``L' = speed``, safeguarded by bisection on a
    bracket whose upper end grows geometrically until ``L(hi) >= eta``.
    """
    if eta <= 0.0:
        return 0.0
    s0 = math.sqrt(c * c + b * b)
    hi = eta / max(s0, math.sqrt(g * eta))
    n = 0
    while arc_length(b, c, g, hi) < eta:
        hi *= 2.0
        n += 1
        if n > _MAX_ITER:
            return -1.0
    lo = 0.0
    t = hi
    for _ in range(_MAX_ITER):
        f = arc_length(b, c, g, t) - eta
        if abs(f) <= 2.0 * _EPS * eta:
            return t
        if f > 0.0:
            hi = t
        else:
            lo = t
        if hi - lo <= 2.0 * _EPS * hi:
            break
        d = speed(b, c, g, t)
        t_new = t - f / d if d > 0.0 else -1.0
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        t = t_new
    if abs(arc_length(b, c, g, t) - eta) <= RTOL_INVERT * eta:
        return t
    return -1.0


def axial_split(v, a) -> tuple[float, float, float]:
    """Return ``(b, c, g)``: along-axis velocity, orthogonal speed, and ``|a|``."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    g = float(np.linalg.norm(a))
    if not g > 0.0:
        raise UnsupportedParameterError("acceleration must be nonzero (|a| > 0)")
    e = a / g
    b = float(v @ e)
    c = float(np.linalg.norm(v - b * e))
    return b, c, g


def path_length(v, a, t: float) -> float:
    """Distance travelled along ``s -> v s + a s^2/2`` over ``[0, t]``."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    b, c, g = axial_split(v, a)
    return arc_length(b, c, g, float(t))


def free_flight_time(v, a, eta: float, rtol: float = RTOL_INVERT) -> float:
    """Time needed to travel path length ``eta`` starting with velocity ``v``."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    b, c, g = axial_split(v, a)
    t = flight_time(b, c, g, float(eta))
    if t < 0.0 or abs(arc_length(b, c, g, t) - eta) > rtol * eta:
        raise NumericError(
            f"flight-time inversion did not converge: v={list(np.asarray(v, float))}, "
            f"|a|={g}, eta={eta}"
        )
    return t
