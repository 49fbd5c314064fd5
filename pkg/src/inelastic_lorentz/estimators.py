"""Ergodic averages and long-run covariances of the chain functionals.

The constants are stationary averages of the chain:

* ``c4 = E_pi[h^3] / |a|`` (also the slope of ``t_n / n``);
* ``c1 = E_pi[f^3] / (c4 |a|) = E_pi[f^3] / E_pi[h^3]``;
* ``K`` is the long-run covariance of ``g = f - c1 h``, estimated with
  non-overlapping batch means, and ``K = c4 diag(c2^2, c2^2, c3^2)``.

Everything here consumes :class:`~inelastic_lorentz.chain.ChainStatistics`
(mini-batch sums). Stored runs are converted with :func:`as_statistics`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .chain import ChainPath, ChainStatistics, fold_chain, init_chain
from .collision import ModelParams
from .errors import EstimationError, InsufficientDataError
from .rng import RngStream
from .trajectory import functionals_array

MIN_STEPS = 1000
# stream ids: estimation chains use 0..n_chains-1, the hold-out chain this offset
VALIDATION_STREAM = 1_000_000


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def z(self, target: float = 0.0) -> float:
        return (self.value - target) / self.stderr if self.stderr > 0 else math.inf

    def __iter__(self):
        yield self.value
        yield self.stderr


def as_statistics(records, burn_in: int = 0, minibatch: int = 1) -> ChainStatistics:
    """Mini-batch sums from a stored :class:`ChainPath` (or pass-through)."""
    if isinstance(records, ChainStatistics):
        return records
    if not isinstance(records, ChainPath):
        raise TypeError(f"expected ChainPath or ChainStatistics, got {type(records).__name__}")
    n = len(records)
    if n <= burn_in:
        raise InsufficientDataError(f"{n} steps do not exceed burn-in {burn_in}")
    p = records.params
    f, h, _ = functionals_array(records.V[:n], records.w, p.a_magnitude, 0.0)
    idx = np.arange(burn_in, n)
    mb = (idx - burn_in) // minibatch
    n_mb = int(mb[-1]) + 1
    acc_f = np.zeros((n_mb, 3))
    np.add.at(acc_f, mb, f[burn_in:])
    acc_h = np.bincount(mb, weights=h[burn_in:, 2], minlength=n_mb)
    acc_tau = np.bincount(mb, weights=records.tau[burn_in:], minlength=n_mb)
    count = np.bincount(mb, minlength=n_mb).astype(np.int64)
    X = records.w * records.tau[:, None] + 0.5 * np.outer(records.tau ** 2, p.a)
    s0 = init_chain(records.V[0])
    return ChainStatistics(p, n, burn_in, minibatch, acc_f, acc_h, acc_tau, count,
                           X.sum(axis=0), float(records.t[-1]), records.final_state,
                           s0.hat(p.alpha))


def pool_statistics(parts: list[ChainStatistics]) -> ChainStatistics:
    """Concatenate mini-batches of independent sub-chains (order preserved)."""
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    return ChainStatistics(
        first.params,
        sum(p.n_steps for p in parts),
        sum(p.burn_in for p in parts),
        first.minibatch,
        np.concatenate([p.f for p in parts]),
        np.concatenate([p.h3 for p in parts]),
        np.concatenate([p.tau for p in parts]),
        np.concatenate([p.count for p in parts]),
        np.sum([p.position for p in parts], axis=0),
        float(sum(p.clock for p in parts)),
        parts[-1].final_state,
        first.hat0,
    )


def _check(stats: ChainStatistics, need: int = MIN_STEPS):
    if stats.n_used < need:
        raise InsufficientDataError(f"only {stats.n_used} post-burn-in steps; need at least {need}")


def batch_means(sums: np.ndarray, counts: np.ndarray, n_batches: int):
    """Long-run covariance from per-mini-batch sums.

    Consecutive mini-batches are merged into ``n_batches`` batches (trailing
    remainder dropped). Returns ``(cov, cov_stderr, grand_mean)`` where
    ``cov = sum_b L_b (m_b - m)(m_b - m)^T / (B - 1)`` and ``cov_stderr`` is the
    standard error of each entry from the spread of the per-batch products.
    """
    sums = np.asarray(sums, dtype=float)
    if sums.ndim == 1:
        sums = sums[:, None]
    counts = np.asarray(counts, dtype=float)
    if n_batches < 2:
        raise InsufficientDataError("need at least two batches")
    k = counts.size // n_batches
    if k < 1:
        raise InsufficientDataError(f"{counts.size} mini-batches cannot form {n_batches} batches")
    used = k * n_batches
    bs = sums[:used].reshape(n_batches, k, -1).sum(axis=1)
    bc = counts[:used].reshape(n_batches, k).sum(axis=1)
    means = bs / bc[:, None]
    grand = bs.sum(axis=0) / bc.sum()
    dev = means - grand
    prod = bc[:, None, None] * dev[:, :, None] * dev[:, None, :]
    cov = prod.sum(axis=0) / (n_batches - 1)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return cov, se, grand


def _n_batches_for(stats: ChainStatistics, n_batches: int | None) -> int:
    # default: floor(sqrt(n)) batches in steps, capped by available mini-batches
    if n_batches is None:
        n_batches = max(2, math.isqrt(stats.n_used))
    return min(n_batches, stats.count.size)


def mean_estimate(sums, counts, n_batches: int) -> list[Estimate]:
    cov, _, grand = batch_means(sums, counts, n_batches)
    n = float(np.sum(counts[: (counts.size // n_batches) * n_batches]))
    return [Estimate(float(grand[i]), float(math.sqrt(max(cov[i, i], 0.0) / n)))
            for i in range(grand.size)]


@dataclass(frozen=True)
class C4Estimate:
    ergodic: Estimate
    slope: Estimate

    @property
    def value(self) -> float:
        return self.ergodic.value

    @property
    def stderr(self) -> float:
        return self.ergodic.stderr

    def __iter__(self):
        yield self.value
        yield self.stderr

    def agreement_z(self) -> float:
        diff = self.ergodic.value - self.slope.value
        return abs(diff) / math.hypot(self.ergodic.stderr, self.slope.stderr)


def estimate_c4(records, params: ModelParams | None = None, burn_in: int = 0,
                n_batches: int | None = None) -> C4Estimate:
    """``c4`` as the ergodic mean of ``h^3/|a|`` and as the slope ``t_n / n``."""
    stats = as_statistics(records, burn_in)
    _check(stats)
    params = params or stats.params
    nb = _n_batches_for(stats, n_batches)
    erg = mean_estimate(stats.h3 / params.a_magnitude, stats.count, nb)[0]
    slope = mean_estimate(stats.tau, stats.count, nb)[0]
    return C4Estimate(erg, slope)


def estimate_c1(records, params: ModelParams | None = None, c4: float | None = None,
                burn_in: int = 0, n_batches: int | None = None) -> Estimate:
    """``c1 = mean(f^3) / (c4 |a|)``.

    The standard error treats ``c1`` as the ratio ``mean(f^3) / mean(h^3)``: it is
    the batch-means error of ``mean(g^3)`` divided by ``c4 |a|``.
    """
    stats = as_statistics(records, burn_in)
    _check(stats)
    params = params or stats.params
    g_mag = params.a_magnitude
    if c4 is None:
        c4 = float(stats.h3.sum() / stats.n_used / g_mag)
    n = stats.n_used
    c1 = float(stats.f[:, 2].sum() / n / (c4 * g_mag))
    nb = _n_batches_for(stats, n_batches)
    g3 = stats.f[:, 2] - c1 * stats.h3
    se = mean_estimate(g3, stats.count, nb)[0].stderr / (c4 * g_mag)
    return Estimate(c1, float(se))


def g_sums(stats: ChainStatistics, c1: float) -> np.ndarray:
    g = stats.f.copy()
    g[:, 2] -= c1 * stats.h3
    return g


def estimate_K(records, c1: float, burn_in: int = 0, n_batches: int | None = None):
    """Batch-means long-run covariance of ``g = f - c1 h``.

    Returns ``(K, K_stderr)``; ``K`` is symmetric positive semidefinite by construction.
    """
    stats = as_statistics(records, burn_in)
    nb = _n_batches_for(stats, n_batches)
    _check(stats, max(MIN_STEPS, 100 * nb) if stats.minibatch == 1 else MIN_STEPS)
    K, se, _ = batch_means(g_sums(stats, c1), stats.count, nb)
    return K, se


def diag_difference(records, c1: float, n_batches: int | None = None) -> Estimate:
    """``K11 - K22`` with a paired standard error (same batches for both entries)."""
    stats = as_statistics(records)
    nb = _n_batches_for(stats, n_batches)
    K, _, grand = batch_means(g_sums(stats, c1), stats.count, nb)
    k = stats.count.size // nb
    bs = g_sums(stats, c1)[: k * nb].reshape(nb, k, 3).sum(axis=1)
    bc = stats.count[: k * nb].reshape(nb, k).sum(axis=1)
    dev = bs / bc[:, None] - grand
    d = bc * (dev[:, 0] ** 2 - dev[:, 1] ** 2)
    return Estimate(float(K[0, 0] - K[1, 1]), float(d.std(ddof=1) / math.sqrt(nb)))


def derive_c2_c3(K, c4: float, K_stderr=None) -> tuple[float, float]:
    """``c2 = sqrt(mean(K11, K22) / c4)``, ``c3 = sqrt(K33 / c4)``.

    Diagonal entries that are negative within noise (3 standard errors when
    ``K_stderr`` is given, round-off otherwise) are clamped to zero.
    """
    K = np.asarray(K, dtype=float)
    if not c4 > 0:
        raise EstimationError(f"c4 must be positive, got {c4}")
    diag = np.diag(K).copy()
    tol = 3.0 * np.diag(np.asarray(K_stderr, float)) if K_stderr is not None else \
        1e-12 * max(1.0, float(np.abs(diag).max()))
    if np.any(diag < -tol):
        raise EstimationError(f"negative long-run variance beyond noise: diag(K) = {diag}")
    diag = np.maximum(diag, 0.0)
    return math.sqrt(0.5 * (diag[0] + diag[1]) / c4), math.sqrt(diag[2] / c4)


def _c23_stderr(K, K_se, c4: Estimate, c2: float, c3: float) -> tuple[float, float]:
    # delta method; the c4 term is small next to the K terms
    def one(val, var_se, c):
        if c == 0:
            return math.sqrt(var_se / c4.value)
        return 0.5 * c * math.hypot(var_se / max(val, 1e-300), c4.stderr / c4.value)
    k12 = 0.5 * (K[0, 0] + K[1, 1])
    se12 = 0.5 * math.hypot(K_se[0, 0], K_se[1, 1])
    return one(k12, se12, c2), one(K[2, 2], K_se[2, 2], c3)


def running_mean_excursion(sums, counts, n_batches: int, start_frac: float = 0.1) -> float:
    """Largest ``|m(n) - m(N)| / se(n)`` over mini-batch ends with ``n >= start_frac N``.

    ``m(n)`` is the running mean, ``se(n)`` its batch-means standard error at
    length ``n``. Small values mean the law of large numbers has settled.
    """
    sums = np.asarray(sums, float)
    counts = np.asarray(counts, float)
    cov, _, _ = batch_means(sums, counts, n_batches)
    sig = math.sqrt(max(float(cov[0, 0]), 1e-300))
    cs = np.cumsum(sums)
    cn = np.cumsum(counts)
    m = cs / cn
    keep = cn >= start_frac * cn[-1]
    return float(np.max(np.abs(m[keep] - m[-1]) * np.sqrt(cn[keep]) / sig))


@dataclass
class EstimateReport:
    """Point estimates and Monte Carlo standard errors of the model constants."""

    params: dict
    v0: list
    seed: int
    n_steps: int
    n_chains: int
    burn_in: int
    n_batches: int
    minibatch: int
    c1: Estimate
    c2: Estimate
    c3: Estimate
    c4: Estimate
    c4_slope: Estimate
    K: list
    K_stderr: list
    K_diag_difference: Estimate
    g_mean: list = field(default_factory=list)
    drift: dict = field(default_factory=dict)
    lln: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    SCHEMA_VERSION = "1.0"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = self.SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateReport":
        d = dict(d)
        d.pop("schema_version", None)
        for key in ("c1", "c2", "c3", "c4", "c4_slope", "K_diag_difference"):
            d[key] = Estimate(**d[key])
        d["g_mean"] = [Estimate(**e) for e in d.get("g_mean", [])]
        return cls(**d)


def _fold_one(args):
    v0, n_steps, params, seed, stream_id, burn_in, minibatch = args
    return fold_chain(v0, n_steps, params, RngStream(seed, stream_id), burn_in, minibatch)


def run_estimation(params: ModelParams, v0, n_steps: int, seed: int, burn_in: int = 1000,
                   n_chains: int = 1, minibatch: int = 100, n_batches: int | None = None,
                   validation_steps: int | None = None, threads: int = 1,
                   return_stats: bool = False):
    """Estimate ``c1..c4`` and ``K`` from ``n_chains`` pooled sub-chains.

    A hold-out chain (stream ``VALIDATION_STREAM``) checks that ``g`` has mean
    zero with the fitted ``c1`` and that ``X^3(t)/t`` approaches ``c1 |a|``.
    Results depend only on ``seed`` and the sizes, never on ``threads``.
    With ``return_stats`` the pooled mini-batch sums are returned as well.
    """
    per_chain = n_steps // n_chains
    if per_chain - burn_in < MIN_STEPS:
        raise InsufficientDataError(
            f"{per_chain} steps per chain leave fewer than {MIN_STEPS} after burn-in {burn_in}")
    jobs = [(v0, per_chain, params, seed, k, burn_in, minibatch) for k in range(n_chains)]
    if validation_steps is None:
        validation_steps = per_chain
    jobs.append((v0, validation_steps, params, seed, VALIDATION_STREAM, burn_in, minibatch))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(_fold_one, jobs))
    held = parts.pop()
    stats = pool_statistics(parts)
    n_batches = _n_batches_for(stats, n_batches)

    c4 = estimate_c4(stats, params, n_batches=n_batches)
    c1 = estimate_c1(stats, params, c4.value, n_batches=n_batches)
    K, K_se = estimate_K(stats, c1.value, n_batches=n_batches)
    c2, c3 = derive_c2_c3(K, c4.value, K_se)
    c2_se, c3_se = _c23_stderr(K, K_se, c4.ergodic, c2, c3)
    ddiff = diag_difference(stats, c1.value, n_batches)

    # hold-out checks: the c1 error enters through c1 * mean(h3)
    nb_h = _n_batches_for(held, None)
    g_hold = mean_estimate(g_sums(held, c1.value), held.count, nb_h)
    h_mean = held.h3.sum() / held.n_used
    g_mean = [g_hold[0], g_hold[1],
              Estimate(g_hold[2].value, math.hypot(g_hold[2].stderr, c1.stderr * h_mean))]
    Kh, _, _ = batch_means(g_sums(held, c1.value), held.count, nb_h)
    drift_val = held.position[2] / held.clock
    drift_se = math.hypot(math.sqrt(Kh[2, 2] * held.n_steps) / held.clock,
                          c1.stderr * params.a_magnitude)
    drift = {"x3_over_t": float(drift_val), "target": c1.value * params.a_magnitude,
             "stderr": float(drift_se),
             "z": float((drift_val - c1.value * params.a_magnitude) / drift_se)}

    lln = {
        "h3_excursion": running_mean_excursion(stats.h3, stats.count, n_batches),
        "f3_excursion": running_mean_excursion(stats.f[:, 2], stats.count, n_batches),
    }
    flags = {
        "c4_positive_5sigma": bool(c4.value > 5 * c4.stderr),
        "c1_positive_5sigma": bool(c1.value > 5 * c1.stderr),
        "c4_routes_agree_3sigma": bool(c4.agreement_z() < 3),
        "g_mean_zero_3sigma": bool(all(abs(e.z()) < 3 for e in g_mean)),
        "K_offdiag_zero_3sigma": bool(all(abs(K[i, j]) < 3 * K_se[i, j]
                                          for i, j in ((0, 1), (0, 2), (1, 2)))),
        "K11_eq_K22_3sigma": bool(abs(ddiff.z()) < 3),
        "drift_matches_c1_3sigma": bool(abs(drift["z"]) < 3),
        "lln_settled_5sigma": bool(max(lln.values()) < 5),
    }
    report = EstimateReport(
        params={"alpha": params.alpha, "a_magnitude": params.a_magnitude, "lambda": params.lam},
        v0=[float(x) for x in np.asarray(v0, float)], seed=seed, n_steps=n_steps,
        n_chains=n_chains, burn_in=burn_in, n_batches=n_batches, minibatch=minibatch,
        c1=c1, c2=Estimate(c2, c2_se), c3=Estimate(c3, c3_se), c4=c4.ergodic, c4_slope=c4.slope,
        K=K.tolist(), K_stderr=K_se.tolist(), K_diag_difference=ddiff,
        g_mean=g_mean, drift=drift, lln=lln, flags=flags,
    )
    return (report, stats) if return_stats else report


def consistency_z(a: Estimate, b: Estimate) -> float:
    return abs(a.value - b.value) / math.hypot(a.stderr, b.stderr)


def initial_condition_invariance(params: ModelParams, v0_list, n_steps: int, seed: int,
                                 burn_in: int = 1000, minibatch: int = 100,
                                 threads: int = 1) -> dict:
    """Estimate ``c4`` and ``c1`` from each initial velocity on independent streams.

    Every pair is compared by ``|difference| / combined stderr``.
    """
    if len(v0_list) < 2:
        raise ValueError("need at least two initial velocities")
    jobs = [(v0, n_steps, params, seed, k, burn_in, minibatch) for k, v0 in enumerate(v0_list)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(_fold_one, jobs))
    rows = []
    for v0, st in zip(v0_list, parts):
        c4 = estimate_c4(st, params)
        c1 = estimate_c1(st, params, c4.value)
        rows.append({"v0": [float(x) for x in v0], "c4": c4.ergodic, "c1": c1})
    pairs = []
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            pairs.append({"i": i, "j": j,
                          "z_c4": consistency_z(rows[i]["c4"], rows[j]["c4"]),
                          "z_c1": consistency_z(rows[i]["c1"], rows[j]["c1"])})
    worst = max(max(p["z_c4"], p["z_c1"]) for p in pairs)
    return {"estimates": rows, "pairs": pairs, "max_z": worst, "consistent": bool(worst < 3)}
