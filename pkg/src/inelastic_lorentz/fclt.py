"""Replica-ensemble checks of the Brownian limit of the rescaled position.

For ``M`` independent replicas the process ``Y_T(s) = (X(sT) - c1 a sT)/sqrt(T)``
is sampled on a grid. If ``Y_T`` is close to ``(c2 W1, c2 W2, c3 W3)`` then

* ``Y^i(s) / (c_i sqrt(s))`` is standard normal,
* distinct components are uncorrelated,
* increments over disjoint intervals are uncorrelated,
* ``Var Y^i(s)`` is linear in ``s`` with slope ``c_i^2``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .chain import positions_on_grid
from .collision import ModelParams
from .errors import InsufficientDataError
from .rng import RngStream

MIN_REPLICAS = 500
KS_POINTS = (0.25, 0.5, 1.0)
# replica m draws from stream FCLT_STREAM + m
FCLT_STREAM = 2_000_000


def default_grid(n_points: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_points)


def horizon_for(c4: float, mean_collisions: float = 1e4) -> float:
    """Clock time with ``mean_collisions`` expected collisions (``t / n(t) -> c4``)."""
    return c4 * mean_collisions


@dataclass
class FcltReport:
    M: int
    T: float
    grid_points: int
    seed: int
    c: list
    ks: list = field(default_factory=list)
    cross_correlation: list = field(default_factory=list)
    increment_correlation: list = field(default_factory=list)
    variance_slope: list = field(default_factory=list)
    variance_ratio: list = field(default_factory=list)
    mean_collisions: float = 0.0
    correlation_bound: float = 0.0
    p_threshold: float = 1e-3
    warnings: list = field(default_factory=list)
    passed: dict = field(default_factory=dict)

    SCHEMA_VERSION = "1.0"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = self.SCHEMA_VERSION
        return d


def _replica(args):
    v0, times, params, seed, m = args
    X, n_t = positions_on_grid(v0, times, params, RngStream(seed, FCLT_STREAM + m))
    return X, n_t


def simulate_Y(params: ModelParams, c1: float, M: int, T: float, grid, seed: int,
               v0=(0.0, 0.0, 1.0), threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """``Y_T`` on ``grid`` for replicas ``0..M-1`` -> ``(M, len(grid), 3)`` and ``n(T)`` per replica."""
    grid = np.asarray(grid, dtype=float)
    times = grid * T
    jobs = [(v0, times, params, seed, m) for m in range(M)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        out = list(pool.map(_replica, jobs))
    X = np.stack([o[0] for o in out])
    n_t = np.array([o[1] for o in out])
    Y = (X - c1 * times[None, :, None] * params.a[None, None, :]) / math.sqrt(T)
    return Y, n_t


def analyse_Y(Y: np.ndarray, grid, c2: float, c3: float, p_threshold: float = 1e-3) -> dict:
    """All test blocks of the suite for an ensemble ``Y`` of shape ``(M, n_grid, 3)``."""
    grid = np.asarray(grid, dtype=float)
    M = Y.shape[0]
    c = (c2, c2, c3)

    def idx(s):
        k = int(np.argmin(np.abs(grid - s)))
        if abs(grid[k] - s) > 1e-12:
            raise ValueError(f"grid lacks s = {s}")
        return k

    n_tests = 3 * len(KS_POINTS)
    ks = []
    for s in KS_POINTS:
        k = idx(s)
        for i in range(3):
            if c[i] <= 0:
                ks.append({"s": s, "component": i + 1, "D": None, "p": None, "p_bonferroni": None})
                continue
            z = Y[:, k, i] / (c[i] * math.sqrt(s))
            res = stats.kstest(z, "norm")
            ks.append({"s": s, "component": i + 1, "D": float(res.statistic),
                       "p": float(res.pvalue),
                       "p_bonferroni": float(min(1.0, n_tests * res.pvalue))})
    k1, kh = idx(1.0), idx(0.5)
    cross = []
    for i, j in ((0, 1), (0, 2), (1, 2)):
        cross.append({"pair": [i + 1, j + 1],
                      "corr": float(np.corrcoef(Y[:, k1, i], Y[:, k1, j])[0, 1])})
    inc = []
    for i in range(3):
        a, b = Y[:, kh, i], Y[:, k1, i] - Y[:, kh, i]
        inc.append({"component": i + 1, "corr": float(np.corrcoef(a, b)[0, 1])})
    var = Y.var(axis=0, ddof=1)
    pos = grid > 0
    slopes = [float(np.sum(grid[pos] * var[pos, i]) / np.sum(grid[pos] ** 2)) for i in range(3)]
    ratios = [float(var[k1, i] / var[kh, i]) for i in range(3)]
    bound = 3.0 / math.sqrt(M)
    passed = {
        "ks_normal": all(r["p_bonferroni"] is None or r["p_bonferroni"] > p_threshold for r in ks),
        "cross_uncorrelated": all(abs(r["corr"]) < bound for r in cross),
        "increments_uncorrelated": all(abs(r["corr"]) < bound for r in inc),
        "variance_ratio": all(1.7 <= r <= 2.3 for r in ratios),
    }
    return {"ks": ks, "cross_correlation": cross, "increment_correlation": inc,
            "variance_slope": slopes, "variance_ratio": ratios,
            "correlation_bound": bound, "passed": passed}


def fclt_suite(params: ModelParams, c1: float, c2: float, c3: float, M: int, T: float,
               grid, seed: int, v0=(0.0, 0.0, 1.0), c1_stderr: float | None = None,
               p_threshold: float = 1e-3, threads: int = 1,
               return_Y: bool = False):
    """Run ``M`` replicas to horizon ``T`` and test the Brownian limit."""
    if M < MIN_REPLICAS:
        raise InsufficientDataError(f"M = {M} replicas is below the minimum {MIN_REPLICAS}")
    grid = np.asarray(grid, dtype=float)
    notes = []
    if c1_stderr is not None and c1_stderr * math.sqrt(T) * params.a_magnitude >= 0.1 * c3:
        msg = (f"c1 uncertainty shifts Y^3 by {c1_stderr * math.sqrt(T):.3g}, "
               f"not below 0.1 c3 = {0.1 * c3:.3g}")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    Y, n_t = simulate_Y(params, c1, M, T, grid, seed, v0, threads)
    res = analyse_Y(Y, grid, c2, c3, p_threshold)
    report = FcltReport(M=M, T=float(T), grid_points=int(grid.size), seed=seed,
                        c=[c2, c2, c3], mean_collisions=float(n_t.mean()),
                        p_threshold=p_threshold, warnings=notes, **res)
    return (report, Y) if return_Y else report
