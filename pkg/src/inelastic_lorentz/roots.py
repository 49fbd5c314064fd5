"""Real roots of low-degree polynomials on an interval.

Roots are isolated with the derivative sequence: the critical points of ``p``
(roots of ``p'``, found the same way one degree lower) split the interval into
pieces on which ``p`` is monotone, so each piece holds at most one root and a
sign change brackets it. A critical point where ``|p|`` is at round-off level is
reported as a (tangential) root. Each root also gets a kind: ``+1`` when ``p``
arrives at zero from positive values (for a squared distance minus ``r^2`` this
is the particle reaching the sphere from outside) and ``-1`` otherwise.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_EPS = 2.220446049250313e-16
_MAXDEG = 4


@njit(cache=True, nogil=True)
def _peval(c, d, x):
    y = c[d]
    for k in range(d - 1, -1, -1):
        y = y * x + c[k]
    return y


@njit(cache=True, nogil=True)
def _pscale(c, d, x):
    ax = abs(x)
    y = abs(c[d])
    for k in range(d - 1, -1, -1):
        y = y * ax + abs(c[k])
    return y


@njit(cache=True, nogil=True)
def _monotone_root(c, d, dc, lo, hi, flo):
    """Root of ``p`` in ``(lo, hi)`` given a strict sign change; Newton with bisection fallback."""
    x = 0.5 * (lo + hi)
    width = hi - lo
    for _ in range(200):
        fx = _peval(c, d, x)
        if fx == 0.0:
            return x
        if (fx < 0.0) == (flo < 0.0):
            lo = x
            flo = fx
        else:
            hi = x
        if hi - lo <= 4.0 * _EPS * max(abs(lo), abs(hi), 1e-300):
            return 0.5 * (lo + hi)
        dfx = _peval(dc, d - 1, x)
        shrink = (hi - lo) <= 0.5 * width
        width = hi - lo
        xn = x - fx / dfx if dfx != 0.0 else lo - 1.0
        if not shrink or not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        x = xn
    return 0.5 * (lo + hi)


@njit(cache=True, nogil=True)
def _roots_level(c, d, dc, crit, ncrit, lo, hi, out, kind):
    """Roots of ``p`` (degree ``d``) on ``[lo, hi]`` given sorted critical points."""
    pts = np.empty(ncrit + 2)
    pts[0] = lo
    m = 1
    for i in range(ncrit):
        x = crit[i]
        if lo < x < hi and x > pts[m - 1]:
            pts[m] = x
            m += 1
    pts[m] = hi
    m += 1
    vals = np.empty(m)
    isroot = np.zeros(m, dtype=np.bool_)
    for j in range(m):
        vals[j] = _peval(c, d, pts[j])
        if vals[j] == 0.0:
            isroot[j] = True
        elif 0 < j < m - 1 and abs(vals[j]) <= 64.0 * _EPS * _pscale(c, d, pts[j]):
            isroot[j] = True
    n = 0
    for j in range(m):
        if isroot[j]:
            out[n] = pts[j]
            if j > 0:
                kind[n] = 1 if vals[j - 1] > 0.0 else -1
            else:
                kind[n] = 1 if (m > 1 and vals[1] < 0.0) else -1
            n += 1
        elif j < m - 1 and not isroot[j + 1] and (vals[j] < 0.0) != (vals[j + 1] < 0.0):
            out[n] = _monotone_root(c, d, dc, pts[j], pts[j + 1], vals[j])
            kind[n] = 1 if vals[j] > 0.0 else -1
            n += 1
    return n


@njit(cache=True, nogil=True)
def real_roots_lowfirst(c, lo, hi, out, kind):
    """Sorted real roots in ``[lo, hi]`` of ``sum_k c[k] x^k`` (degree <= 4).

    Writes roots to ``out`` and kinds to ``kind``; returns the count.
    """
    d = c.size - 1
    while d > 0 and c[d] == 0.0:
        d -= 1
    if d == 0:
        return 0
    # derivative table: row k holds the k-th derivative, lowest-first
    D = np.zeros((d + 1, d + 1))
    for j in range(d + 1):
        D[0, j] = c[j]
    for k in range(1, d + 1):
        for j in range(d - k + 1):
            D[k, j] = (j + 1) * D[k - 1, j + 1]
    crit = np.empty(_MAXDEG + 1)
    kbuf = np.empty(_MAXDEG + 1, dtype=np.int64)
    x0 = -D[d - 1, 0] / D[d - 1, 1]
    ncrit = 0
    if lo <= x0 <= hi:
        crit[0] = x0
        kbuf[0] = 1 if D[d - 1, 1] < 0.0 else -1
        ncrit = 1
    if d == 1:
        for i in range(ncrit):
            out[i] = crit[i]
            kind[i] = kbuf[i]
        return ncrit
    tmp = np.empty(_MAXDEG + 1)
    for k in range(d - 2, -1, -1):
        deg = d - k
        ncrit = _roots_level(D[k], deg, D[k + 1], crit, ncrit, lo, hi, tmp, kbuf)
        for i in range(ncrit):
            crit[i] = tmp[i]
    for i in range(ncrit):
        out[i] = crit[i]
        kind[i] = kbuf[i]
    return ncrit


def real_roots(coeffs, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Real roots in ``[lo, hi]`` of a polynomial given highest-degree first (numpy order)."""
    c = np.asarray(coeffs, dtype=float)[::-1].copy()
    if c.size - 1 > _MAXDEG:
        raise ValueError("degree above 4 is not supported")
    out = np.empty(_MAXDEG + 1)
    kind = np.empty(_MAXDEG + 1, dtype=np.int64)
    n = real_roots_lowfirst(c, float(lo), float(hi), out, kind)
    return out[:n].copy(), kind[:n].copy()


def quartic_smallest_root(coeffs, interval) -> float | None:
    """Smallest real root of the polynomial in the closed ``interval``, or ``None``."""
    lo, hi = interval
    roots, _ = real_roots(coeffs, lo, hi)
    return float(roots[0]) if roots.size else None
