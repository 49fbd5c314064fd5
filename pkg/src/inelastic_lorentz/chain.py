"""The velocity Markov chain: pre-collision velocity plus scattering direction.

One step from state ``(V, sigma)``:

1. ``w = hat(V, sigma)`` is the departure velocity;
2. a path length ``eta ~ Exp(mean lam)`` is drawn and converted to a flight time
   ``tau = F(w, eta)``;
3. the next pre-collision velocity is ``w + a tau`` and a fresh uniform
   ``sigma`` is drawn.

Random variates are consumed in blocks: ``size`` uniforms (for ``eta``) followed
by ``size x 3`` standard normals (for the next ``sigma``), with ``size`` capped at
``BLOCK``. Every entry point uses that protocol, so a stored run, a streamed fold
and repeated single steps over the same stream agree draw for draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from numba import njit

from .collision import ModelParams, hat, hat3
from .errors import NumericError
from .kinematics import flight_time
from .rng import RngStream, exponential_from_uniform

BLOCK = 65536


@dataclass
class ChainState:
    V: np.ndarray
    sigma: np.ndarray
    n: int = 0
    t: float = 0.0

    def hat(self, alpha: float) -> np.ndarray:
        return hat(self.V, self.sigma, alpha)


@dataclass(frozen=True)
class StepRecord:
    n: int
    tau: float
    t_next: float
    V_next: np.ndarray
    v_hat: np.ndarray


def init_chain(v0) -> ChainState:
    """Initial state with the dummy direction ``-v0/|v0|`` (``(0,0,-1)`` for ``v0 = 0``)."""
    v0 = np.array(v0, dtype=float).reshape(3)
    speed = np.linalg.norm(v0)
    sigma = -v0 / speed if speed > 0 else np.array([0.0, 0.0, -1.0])
    return ChainState(v0, sigma)


def draw_block(rng: RngStream, size: int, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Path lengths and raw Gaussian triples for ``size`` consecutive steps."""
    eta = exponential_from_uniform(rng.generator.random(size), lam)
    gauss = rng.generator.standard_normal((size, 3))
    return eta, gauss


def _blocks(n_steps: int):
    done = 0
    while done < n_steps:
        size = min(BLOCK, n_steps - done)
        yield done, size
        done += size


@njit(cache=True, nogil=True)
def _advance(state, alpha, g, eta, gauss, tau_out, w_out, v_out, sig_out):
    """Advance ``state = [V(3), sigma(3)]`` through ``eta.size`` steps, storing each.

    Returns the number of completed steps (short on inversion failure).
    """
    V1, V2, V3, s1, s2, s3 = state[0], state[1], state[2], state[3], state[4], state[5]
    for k in range(eta.size):
        w1, w2, w3 = hat3(V1, V2, V3, s1, s2, s3, alpha)
        tau = flight_time(w3, math.sqrt(w1 * w1 + w2 * w2), g, eta[k])
        if tau < 0.0:
            state[0], state[1], state[2], state[3], state[4], state[5] = V1, V2, V3, s1, s2, s3
            return k
        V1, V2, V3 = w1, w2, w3 + g * tau
        z1, z2, z3 = gauss[k, 0], gauss[k, 1], gauss[k, 2]
        nz = math.sqrt(z1 * z1 + z2 * z2 + z3 * z3)
        s1, s2, s3 = z1 / nz, z2 / nz, z3 / nz
        tau_out[k] = tau
        w_out[k, 0], w_out[k, 1], w_out[k, 2] = w1, w2, w3
        v_out[k, 0], v_out[k, 1], v_out[k, 2] = V1, V2, V3
        sig_out[k, 0], sig_out[k, 1], sig_out[k, 2] = s1, s2, s3
    state[0], state[1], state[2], state[3], state[4], state[5] = V1, V2, V3, s1, s2, s3
    return eta.size


def step(state: ChainState, params: ModelParams, rng: RngStream) -> tuple[ChainState, StepRecord]:
    """One collision epoch."""
    eta, gauss = draw_block(rng, 1, params.lam)
    buf = np.concatenate([state.V, state.sigma]).astype(float)
    tau, w, v, s = np.empty(1), np.empty((1, 3)), np.empty((1, 3)), np.empty((1, 3))
    if _advance(buf, params.alpha, params.a_magnitude, eta, gauss, tau, w, v, s) != 1:
        raise NumericError(f"free-flight inversion failed at step {state.n}: V={state.V}")
    t_next = state.t + tau[0]
    rec = StepRecord(state.n, float(tau[0]), float(t_next), v[0].copy(), w[0].copy())
    return ChainState(v[0].copy(), s[0].copy(), state.n + 1, float(t_next)), rec


@dataclass
class ChainPath:
    """Stored run of ``n`` steps.

    ``V`` and ``sigma`` hold states ``0..n``; ``w`` and ``tau`` hold the departure
    velocity and flight time of steps ``0..n-1``; ``t`` holds collision clocks
    ``t_0 = 0, ..., t_n``. Indexing yields :class:`StepRecord`.
    """

    params: ModelParams
    V: np.ndarray
    sigma: np.ndarray
    w: np.ndarray
    tau: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return self.tau.size

    def __getitem__(self, k: int) -> StepRecord:
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        return StepRecord(k, float(self.tau[k]), float(self.t[k + 1]),
                          self.V[k + 1].copy(), self.w[k].copy())

    def __iter__(self) -> Iterator[StepRecord]:
        for k in range(len(self)):
            yield self[k]

    @property
    def hats(self) -> np.ndarray:
        """``hat(Phi_k)`` for ``k = 0..n`` (one more than ``w``)."""
        last = hat(self.V[-1], self.sigma[-1], self.params.alpha)
        return np.vstack([self.w, last[None, :]])

    @property
    def final_state(self) -> ChainState:
        return ChainState(self.V[-1].copy(), self.sigma[-1].copy(), len(self), float(self.t[-1]))


def run_chain(v0, n_steps: int, params: ModelParams, rng: RngStream,
              max_stored: int = 50_000_000) -> ChainPath:
    """Run ``n_steps`` collisions from ``init_chain(v0)`` and keep every record."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if n_steps > max_stored:
        raise ValueError(f"{n_steps} steps exceed the stored-run cap {max_stored}; use fold_chain")
    s0 = init_chain(v0)
    V = np.empty((n_steps + 1, 3))
    sigma = np.empty((n_steps + 1, 3))
    w = np.empty((n_steps, 3))
    tau = np.empty(n_steps)
    V[0], sigma[0] = s0.V, s0.sigma
    buf = np.concatenate([s0.V, s0.sigma])
    for start, size in _blocks(n_steps):
        eta, gauss = draw_block(rng, size, params.lam)
        sl = slice(start, start + size)
        done = _advance(buf, params.alpha, params.a_magnitude, eta, gauss,
                        tau[sl], w[sl], V[start + 1:start + size + 1],
                        sigma[start + 1:start + size + 1])
        if done != size:
            raise NumericError(f"free-flight inversion failed at step {start + done}")
    t = np.concatenate([[0.0], np.cumsum(tau)])
    return ChainPath(params, V, sigma, w, tau, t)


@dataclass
class ChainStatistics:
    """Mini-batch sums of a streamed run (post burn-in).

    Row ``j`` of ``f`` / ``h3`` / ``tau`` sums ``f(Phi_i)``, ``h^3(Phi_i)`` and
    ``tau_i`` over the ``count[j]`` steps of mini-batch ``j``. ``position`` and
    ``clock`` are the particle position and time after the last step.
    """

    params: ModelParams
    n_steps: int
    burn_in: int
    minibatch: int
    f: np.ndarray
    h3: np.ndarray
    tau: np.ndarray
    count: np.ndarray
    position: np.ndarray
    clock: float
    final_state: ChainState
    hat0: np.ndarray

    @property
    def n_used(self) -> int:
        return int(self.count.sum())


@njit(cache=True, nogil=True)
def _fold(state, alpha, g, eta, gauss, i0, burn_in, m, acc_f, acc_h, acc_tau, acc_n):
    """Advance ``state = [V, sigma, t, X]`` and accumulate mini-batch sums."""
    V1, V2, V3, s1, s2, s3 = state[0], state[1], state[2], state[3], state[4], state[5]
    t, X1, X2, X3 = state[6], state[7], state[8], state[9]
    for k in range(eta.size):
        w1, w2, w3 = hat3(V1, V2, V3, s1, s2, s3, alpha)
        tau = flight_time(w3, math.sqrt(w1 * w1 + w2 * w2), g, eta[k])
        if tau < 0.0:
            state[0], state[1], state[2], state[3], state[4], state[5] = V1, V2, V3, s1, s2, s3
            state[6], state[7], state[8], state[9] = t, X1, X2, X3
            return k
        i = i0 + k
        if i >= burn_in:
            j = (i - burn_in) // m
            acc_f[j, 0] += (V1 * V3 - w1 * w3) / g
            acc_f[j, 1] += (V2 * V3 - w2 * w3) / g
            acc_f[j, 2] += 0.5 * (V3 * V3 - w3 * w3) / g
            acc_h[j] += V3 - w3
            acc_tau[j] += tau
            acc_n[j] += 1
        X1 += w1 * tau
        X2 += w2 * tau
        X3 += w3 * tau + 0.5 * g * tau * tau
        t += tau
        V1, V2, V3 = w1, w2, w3 + g * tau
        z1, z2, z3 = gauss[k, 0], gauss[k, 1], gauss[k, 2]
        nz = math.sqrt(z1 * z1 + z2 * z2 + z3 * z3)
        s1, s2, s3 = z1 / nz, z2 / nz, z3 / nz
    state[0], state[1], state[2], state[3], state[4], state[5] = V1, V2, V3, s1, s2, s3
    state[6], state[7], state[8], state[9] = t, X1, X2, X3
    return eta.size


def fold_chain(v0, n_steps: int, params: ModelParams, rng: RngStream,
               burn_in: int = 1000, minibatch: int = 100) -> ChainStatistics:
    """Streamed run in O(n_steps / minibatch) memory.

    Produces the same trajectory as :func:`run_chain` on an identical stream.
    """
    if n_steps <= burn_in:
        raise ValueError("n_steps must exceed burn_in")
    s0 = init_chain(v0)
    n_mb = -(-(n_steps - burn_in) // minibatch)
    acc_f = np.zeros((n_mb, 3))
    acc_h = np.zeros(n_mb)
    acc_tau = np.zeros(n_mb)
    acc_n = np.zeros(n_mb, dtype=np.int64)
    buf = np.concatenate([s0.V, s0.sigma, np.zeros(4)])
    for start, size in _blocks(n_steps):
        eta, gauss = draw_block(rng, size, params.lam)
        done = _fold(buf, params.alpha, params.a_magnitude, eta, gauss, start, burn_in,
                     minibatch, acc_f, acc_h, acc_tau, acc_n)
        if done != size:
            raise NumericError(f"free-flight inversion failed at step {start + done}")
    final = ChainState(buf[0:3].copy(), buf[3:6].copy(), n_steps, float(buf[6]))
    return ChainStatistics(params, n_steps, burn_in, minibatch, acc_f, acc_h, acc_tau, acc_n,
                           buf[7:10].copy(), float(buf[6]), final, s0.hat(params.alpha))


@njit(cache=True, nogil=True)
def _sample_grid(state, alpha, g, eta, gauss, times, gi, out):
    """Advance ``state = [V, sigma, t, X, n]`` and record ``X`` at ``times[gi:]``.

    Returns ``(steps_done, next_grid_index)``; stops once every time is covered.
    """
    V1, V2, V3, s1, s2, s3 = state[0], state[1], state[2], state[3], state[4], state[5]
    t, X1, X2, X3, n = state[6], state[7], state[8], state[9], state[10]
    k = 0
    while k < eta.size and gi < times.size:
        w1, w2, w3 = hat3(V1, V2, V3, s1, s2, s3, alpha)
        tau = flight_time(w3, math.sqrt(w1 * w1 + w2 * w2), g, eta[k])
        if tau < 0.0:
            return -1, gi
        t_next = t + tau
        while gi < times.size and times[gi] < t_next:
            dt = times[gi] - t
            out[gi, 0] = X1 + w1 * dt
            out[gi, 1] = X2 + w2 * dt
            out[gi, 2] = X3 + w3 * dt + 0.5 * g * dt * dt
            gi += 1
        X1 += w1 * tau
        X2 += w2 * tau
        X3 += w3 * tau + 0.5 * g * tau * tau
        t = t_next
        V1, V2, V3 = w1, w2, w3 + g * tau
        z1, z2, z3 = gauss[k, 0], gauss[k, 1], gauss[k, 2]
        nz = math.sqrt(z1 * z1 + z2 * z2 + z3 * z3)
        s1, s2, s3 = z1 / nz, z2 / nz, z3 / nz
        n += 1.0
        k += 1
    state[0], state[1], state[2], state[3], state[4], state[5] = V1, V2, V3, s1, s2, s3
    state[6], state[7], state[8], state[9], state[10] = t, X1, X2, X3, n
    return k, gi


def positions_on_grid(v0, times: Sequence[float], params: ModelParams,
                      rng: RngStream) -> tuple[np.ndarray, int]:
    """Positions ``X(t)`` at increasing ``times`` without storing the path.

    Returns the ``(len(times), 3)`` positions and the number of collisions
    ``n(times[-1])`` by the last time.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be a nonempty nondecreasing array of nonnegative values")
    s0 = init_chain(v0)
    out = np.empty((times.size, 3))
    buf = np.concatenate([s0.V, s0.sigma, np.zeros(5)])
    gi = 0
    while gi < times.size:
        eta, gauss = draw_block(rng, BLOCK, params.lam)
        done, gi = _sample_grid(buf, params.alpha, params.a_magnitude, eta, gauss, times, gi, out)
        if done < 0:
            raise NumericError("free-flight inversion failed while sampling positions")
    # the step that covered the last time is counted in buf[10]; n(T) excludes it
    return out, int(buf[10]) - 1


def log_growth_constant(path: ChainPath) -> float:
    """``max_n |V_n| / log(n + 2)``; stays bounded when ``|V_n| = O(log n)``."""
    n = np.arange(path.V.shape[0])
    return float(np.max(np.linalg.norm(path.V, axis=1) / np.log(n + 2.0)))


def drift_ratio(v, sigma, params: ModelParams, n_draws: int, rng: RngStream,
                c: float = 1.0) -> float:
    """Monte Carlo estimate of ``E[U(Phi_1) | Phi_0 = x] / U(x)`` with ``U = exp(c |hat x|)``."""
    state = ChainState(np.asarray(v, float), np.asarray(sigma, float))
    u0 = c * np.linalg.norm(state.hat(params.alpha))
    vals = np.empty(n_draws)
    for k in range(n_draws):
        nxt, _ = step(state, params, rng)
        vals[k] = c * np.linalg.norm(nxt.hat(params.alpha)) - u0
    return float(np.mean(np.exp(vals)))
