"""Particle position from a stored chain run, and the rescaled processes built on it.

Between collisions the motion is ``X(t) = X_n + w_n (t - t_n) + a (t - t_n)^2 / 2``
where ``w_n`` is the departure velocity of epoch ``n``. The functionals ``f`` and
``h`` turn the position at collision ``n`` into boundary terms plus an additive
functional of the chain, which is what the partial-sum process ``Z_t`` sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ChainPath, ChainState
from .collision import ModelParams
from .errors import OutOfRangeError


@dataclass(frozen=True)
class FunctionalValues:
    f_val: np.ndarray
    h_val: np.ndarray
    g_val: np.ndarray


def functionals_array(V, w, a_magnitude: float, c1: float):
    """Row-wise ``f``, ``h``, ``g = f - c1 h`` from pre-collision ``V`` and ``w = hat``."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    f = np.empty_like(V)
    f[:, 0] = V[:, 0] * V[:, 2] - w[:, 0] * w[:, 2]
    f[:, 1] = V[:, 1] * V[:, 2] - w[:, 1] * w[:, 2]
    f[:, 2] = 0.5 * (V[:, 2] ** 2 - w[:, 2] ** 2)
    f /= a_magnitude
    h = np.zeros_like(V)
    h[:, 2] = V[:, 2] - w[:, 2]
    return f, h, f - c1 * h


def functionals(state: ChainState, params: ModelParams, c1: float) -> FunctionalValues:
    w = state.hat(params.alpha)
    f, h, g = functionals_array(state.V, w, params.a_magnitude, c1)
    return FunctionalValues(f[0], h[0], g[0])


def positions_at_collisions(path: ChainPath) -> np.ndarray:
    """``X_0 = 0, X_1, ..., X_n`` from the per-epoch increments."""
    g = path.params.a_magnitude
    w, tau, vnext = path.w, path.tau, path.V[1:]
    inc = np.empty_like(w)
    inc[:, 0] = w[:, 0] * tau
    inc[:, 1] = w[:, 1] * tau
    inc[:, 2] = (vnext[:, 2] ** 2 - w[:, 2] ** 2) / (2.0 * g)
    X = np.zeros((len(path) + 1, 3))
    np.cumsum(inc, axis=0, out=X[1:])
    return X


@dataclass
class TrajectoryPath:
    records: ChainPath
    X_at_collisions: np.ndarray

    @classmethod
    def from_chain(cls, path: ChainPath) -> "TrajectoryPath":
        return cls(path, positions_at_collisions(path))

    @property
    def horizon(self) -> float:
        return float(self.records.t[-1])


def _as_traj(path) -> TrajectoryPath:
    return path if isinstance(path, TrajectoryPath) else TrajectoryPath.from_chain(path)


def collisions_by_time(path, t):
    """``n(t) = max{n : t_n <= t}`` (vectorised over ``t``)."""
    clocks = path.records.t if isinstance(path, TrajectoryPath) else path.t
    n = np.searchsorted(clocks, t, side="right") - 1
    return int(n) if np.ndim(n) == 0 else n


def position_at_time(path, t):
    """``X(t)`` for scalar or array ``t`` within the simulated horizon."""
    traj = _as_traj(path)
    rec = traj.records
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0) or np.any(t_arr > traj.horizon):
        raise OutOfRangeError(f"time outside [0, {traj.horizon}]")
    n = np.minimum(np.searchsorted(rec.t, t_arr, side="right") - 1, len(rec) - 1)
    dt = (t_arr - rec.t[n])[:, None]
    X = traj.X_at_collisions[n] + rec.w[n] * dt + 0.5 * rec.params.a * dt ** 2
    return X[0] if np.ndim(t) == 0 else X


def scaled_process_Y(path, t: float, c1: float, grid) -> np.ndarray:
    """``Y_t(s) = (X(s t) - c1 a s t) / sqrt(t)`` on the ``s`` grid."""
    traj = _as_traj(path)
    s = np.asarray(grid, dtype=float)
    if t > traj.horizon:
        raise OutOfRangeError(f"horizon {t} exceeds simulated clock {traj.horizon}")
    X = position_at_time(traj, s * t)
    return (X - c1 * np.outer(s * t, traj.records.params.a)) / np.sqrt(t)


def _nodes(traj: TrajectoryPath, t: float) -> int:
    """Index of the first collision clock beyond ``t`` (needed as right node)."""
    n_t = collisions_by_time(traj, t)
    if n_t + 1 > len(traj.records):
        raise OutOfRangeError(f"path must cover the collision after t={t}")
    return n_t + 1


def linear_interpolated_Y(path, t: float, c1: float, grid) -> np.ndarray:
    """``Y_t`` values at ``t_n / t`` joined linearly (the third coordinate differs from ``Y_t``)."""
    traj = _as_traj(path)
    rec = traj.records
    last = _nodes(traj, t)
    x = rec.t[: last + 1] / t
    vals = (traj.X_at_collisions[: last + 1] - c1 * np.outer(rec.t[: last + 1], rec.params.a)) / np.sqrt(t)
    s = np.asarray(grid, dtype=float)
    return np.column_stack([np.interp(s, x, vals[:, i]) for i in range(3)])


def partial_sum_process_Z(path, t: float, c1: float, grid) -> np.ndarray:
    """``Z_t(t_n/t) = t^{-1/2} sum_{i=1}^n g(Phi_i)``, linear in between."""
    traj = _as_traj(path)
    rec = traj.records
    last = _nodes(traj, t)
    hats = rec.hats
    _, _, g = functionals_array(rec.V[1: last + 1], hats[1: last + 1], rec.params.a_magnitude, c1)
    z = np.zeros((last + 1, 3))
    np.cumsum(g, axis=0, out=z[1:])
    z /= np.sqrt(t)
    x = rec.t[: last + 1] / t
    s = np.asarray(grid, dtype=float)
    return np.column_stack([np.interp(s, x, z[:, i]) for i in range(3)])


def representation_identity(path, c1: float, n: int) -> np.ndarray:
    """``X_n - c1 a t_n`` rebuilt from boundary terms plus ``sum_{i<=n} g(Phi_i)``."""
    rec = path.records if isinstance(path, TrajectoryPath) else path
    g_mag = rec.params.a_magnitude
    hats = rec.hats
    wn, w0 = hats[n], hats[0]
    boundary = np.array([
        wn[0] * wn[2] - w0[0] * w0[2],
        wn[1] * wn[2] - w0[1] * w0[2],
        0.5 * (wn[2] ** 2 - w0[2] ** 2),
    ]) / g_mag
    boundary -= c1 / g_mag * rec.params.a * (wn[2] - w0[2])
    if n == 0:
        return boundary
    _, _, g = functionals_array(rec.V[1: n + 1], hats[1: n + 1], g_mag, c1)
    return boundary + g.sum(axis=0)


def time_identity(path, n: int) -> float:
    """``t_n`` rebuilt from third components of departure and arrival velocities."""
    rec = path.records if isinstance(path, TrajectoryPath) else path
    hats = rec.hats
    g_mag = rec.params.a_magnitude
    tail = np.sum(rec.V[1: n + 1, 2] - hats[1: n + 1, 2])
    return float((hats[n, 2] - hats[0, 2]) / g_mag + tail / g_mag)


def interpolation_gap(path, t: float) -> float:
    """Exact ``sup_{s in [0,1]} |Y_t(s) - Ytilde_t(s)|`` (only the third coordinate differs)."""
    traj = _as_traj(path)
    rec = traj.records
    last = _nodes(traj, t)
    lo = rec.t[:last]
    hi = rec.t[1: last + 1]
    u = np.minimum(0.5 * (lo + hi), t)
    dev = 0.5 * rec.params.a_magnitude * (u - lo) * (hi - u)
    return float(dev.max() / np.sqrt(t))


def reduction_maxima(path, t: float) -> tuple[float, float]:
    """``max_{k<=n(t)} tau_k^2 / sqrt(t)`` and ``max_{1<=k<=n(t)+1} |hat Phi_k|^2 / sqrt(t)``."""
    traj = _as_traj(path)
    rec = traj.records
    last = _nodes(traj, t)
    tau_max = np.max(rec.tau[:last] ** 2)
    hats = rec.hats
    w_max = np.max(np.sum(hats[1: last + 1] ** 2, axis=1))
    return float(tau_max / np.sqrt(t)), float(w_max / np.sqrt(t))


