"""Direct simulation of the first collision in a Poisson field of spherical obstacles.

Obstacle centres form a Poisson process of intensity ``1 / (pi lam r^2)``. The
particle starts at the origin with velocity ``v0`` and follows
``p(s) = v0 s + a s^2 / 2``; it hits the obstacle centred at ``c`` at the first
time the quartic ``|p(s) - c|^2 - r^2`` reaches zero from above. The contact
normal ``nu = (c - p(tau0)) / r`` then lies in the forward hemisphere of the
arrival velocity.

Centres are drawn lazily: only inside the axis-aligned hull of the path,
inflated by ``r``. When no collision happens before the horizon, the horizon
doubles and the field is extended with fresh centres in the new part of the hull.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import stats

from .collision import ModelParams, bisectrix_normals, hat, reflect_normal
from .kinematics import arc_length, axial_split, free_flight_time
from .rng import RngStream
from .roots import real_roots_lowfirst

# first-collision block b draws from stream FULL_STREAM + b
FULL_STREAM = 3_000_000
TUBE_STREAM = 4_000_000
CROSSCHECK_STREAM = 5_000_000


def intensity(params: ModelParams) -> float:
    return 1.0 / (math.pi * params.lam * params.r ** 2)


def in_condition(v0, params: ModelParams) -> bool:
    """Whether ``|v0_perp|^2 > r |a|`` (perpendicular to the acceleration)."""
    v0 = np.asarray(v0, dtype=float)
    return float(v0[0] ** 2 + v0[1] ** 2) > params.r * params.a_magnitude


def path_box(v0, params: ModelParams, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned hull of ``{p(s): 0 <= s <= t}`` inflated by ``r``."""
    v0 = np.asarray(v0, dtype=float)
    a = params.a
    cand = [0.0, t]
    for j in range(3):
        if a[j] != 0.0:
            s = -v0[j] / a[j]
            if 0.0 < s < t:
                cand.append(s)
    s = np.array(cand)
    pts = np.outer(s, v0) + 0.5 * np.outer(s ** 2, a)
    return pts.min(axis=0) - params.r, pts.max(axis=0) + params.r


class ObstacleField:
    """Lazily sampled Poisson centres on a growing box."""

    def __init__(self, params: ModelParams, rng: RngStream):
        self.params = params
        self.rng = rng
        self.intensity = intensity(params)
        self.lo = None
        self.hi = None
        self.centers = np.empty((0, 3))

    def cover(self, lo, hi):
        """Grow the sampled region to the box ``[lo, hi]`` (which must contain the old one)."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        if self.lo is not None:
            lo = np.minimum(lo, self.lo)
            hi = np.maximum(hi, self.hi)
        vol = float(np.prod(hi - lo))
        n = self.rng.poisson(self.intensity * vol)
        pts = lo + (hi - lo) * self.rng.uniform((n, 3))
        if self.lo is not None:
            inside = np.all((pts >= self.lo) & (pts <= self.hi), axis=1)
            pts = pts[~inside]
        self.centers = np.vstack([self.centers, pts])
        self.lo, self.hi = lo, hi
        return self

    def counts(self, boxes) -> np.ndarray:
        """Number of centres in each ``(lo, hi)`` box."""
        return np.array([int(np.sum(np.all((self.centers >= lo) & (self.centers < hi), axis=1)))
                         for lo, hi in boxes])


@njit(cache=True, nogil=True)
def _entry_time(v0, g, r, c, t_max, coef, out, kind):
    """First time in ``[0, t_max]`` the path enters the sphere ``|x - c| = r``; -1 if none."""
    lo, hi = 0.0, t_max
    # axes orthogonal to a move linearly: |p_j(s) - c_j| <= r bounds s
    for j in range(2):
        if v0[j] != 0.0:
            s1 = (c[j] - r) / v0[j]
            s2 = (c[j] + r) / v0[j]
            if s1 > s2:
                s1, s2 = s2, s1
            lo = max(lo, s1)
            hi = min(hi, s2)
        elif abs(c[j]) > r:
            return -1.0
    if lo > hi:
        return -1.0
    vv = v0[0] * v0[0] + v0[1] * v0[1] + v0[2] * v0[2]
    vc = v0[0] * c[0] + v0[1] * c[1] + v0[2] * c[2]
    cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2]
    coef[0] = cc - r * r
    coef[1] = -2.0 * vc
    coef[2] = vv - g * c[2]
    coef[3] = g * v0[2]
    coef[4] = 0.25 * g * g
    n = real_roots_lowfirst(coef, lo, hi, out, kind)
    for i in range(n):
        if kind[i] > 0:
            return out[i]
    return -1.0


@njit(cache=True, nogil=True)
def _first_entry(v0, g, r, centers, t_max):
    coef = np.empty(5)
    out = np.empty(5)
    kind = np.empty(5, dtype=np.int64)
    best = -1.0
    arg = -1
    for i in range(centers.shape[0]):
        s = _entry_time(v0, g, r, centers[i], t_max, coef, out, kind)
        if s >= 0.0 and (best < 0.0 or s < best):
            best = s
            arg = i
    return best, arg


def first_hit(v0, params: ModelParams, centers, horizon: float) -> tuple[float, int]:
    """Earliest entry time into any of the given obstacles and its index, ``(-1, -1)`` if none."""
    v0 = np.asarray(v0, dtype=float)
    centers = np.ascontiguousarray(np.atleast_2d(centers), dtype=float)
    s, i = _first_entry(v0, params.a_magnitude, params.r, centers, float(horizon))
    return float(s), int(i)


@njit(cache=True, nogil=True)
def _in_tube(v0, g, r, pts, t, hit):
    coef = np.empty(5)
    out = np.empty(5)
    kind = np.empty(5, dtype=np.int64)
    for i in range(pts.shape[0]):
        s = _entry_time(v0, g, r, pts[i], t, coef, out, kind)
        hit[i] = 0.0 <= s < t


@njit(cache=True, nogil=True)
def _arc_lengths(b, c, g, ts, out):
    for i in range(ts.size):
        out[i] = arc_length(b, c, g, ts[i])


def arc_lengths(v0, params: ModelParams, ts) -> np.ndarray:
    b, c, g = axial_split(v0, params.a)
    ts = np.ascontiguousarray(ts, dtype=float)
    out = np.empty_like(ts)
    _arc_lengths(b, c, g, ts, out)
    return out


@dataclass(frozen=True)
class FirstCollision:
    tau0: float
    nu: np.ndarray | None
    obstacle_center: np.ndarray | None
    censored: bool
    horizon: float

    def arrival_velocity(self, v0, params: ModelParams) -> np.ndarray:
        return np.asarray(v0, float) + params.a * self.tau0


def default_horizon(v0, params: ModelParams, survival: float = math.exp(-4)) -> float:
    """Time by which the no-collision probability has dropped to ``survival``."""
    return free_flight_time(v0, params.a, -params.lam * math.log(survival))


def horizon_cap(v0, params: ModelParams) -> float:
    speed = max(float(np.linalg.norm(v0)), math.sqrt(params.lam * params.a_magnitude))
    return 64.0 * params.lam / speed


def _first_collision(v0, params, horizon, rng, cap):
    v0 = np.asarray(v0, dtype=float)
    field = ObstacleField(params, rng)
    H = horizon
    while True:
        field.cover(*path_box(v0, params, H))
        s, i = _first_entry(v0, params.a_magnitude, params.r, field.centers, H)
        if s >= 0.0:
            c = field.centers[i]
            p = v0 * s + 0.5 * params.a * s * s
            d = c - p
            return FirstCollision(float(s), d / np.linalg.norm(d), c.copy(), False, H), field
        if H >= cap:
            return FirstCollision(math.inf, None, None, True, H), field
        H = min(2.0 * H, cap)


def first_collision(v0, params: ModelParams, horizon: float | None, rng: RngStream,
                    cap: float | None = None) -> FirstCollision:
    """First obstacle hit by the particle in a freshly sampled field.

    The search window starts at ``horizon`` and doubles until a hit or ``cap``;
    a miss up to the cap is returned as censored.
    """
    if not in_condition(v0, params):
        warnings.warn("|v0_perp|^2 <= r|a|: outside the regime where the tube is a "
                      "one-to-one sweep", RuntimeWarning, stacklevel=2)
    if horizon is None:
        horizon = default_horizon(v0, params)
    if cap is None:
        cap = max(horizon, horizon_cap(v0, params))
    return _first_collision(v0, params, horizon, rng, cap)[0]


def collision_certificate(v0, params: ModelParams, fc: FirstCollision) -> tuple[float, float]:
    """``(| |p(tau0) - c| - r |, (nu, v(tau0)))`` for a non-censored collision."""
    v0 = np.asarray(v0, float)
    p = v0 * fc.tau0 + 0.5 * params.a * fc.tau0 ** 2
    gap = abs(float(np.linalg.norm(p - fc.obstacle_center)) - params.r)
    return gap, float(fc.nu @ (v0 + params.a * fc.tau0))


def no_earlier_collision(v0, params: ModelParams, centers, tau0: float, n_grid: int = 20001) -> bool:
    """Dense-grid audit: no centre is approached to within ``r`` before ``tau0``.

    A centre whose ball contains the start point only counts if the path leaves
    the ball and comes back before ``tau0``.
    """
    v0 = np.asarray(v0, float)
    s = np.linspace(0.0, tau0, n_grid)[:-1]
    p = np.outer(s, v0) + 0.5 * np.outer(s ** 2, params.a)
    for c in np.asarray(centers, float):
        inside = np.sum((p - c) ** 2, axis=1) < params.r ** 2
        if not inside.any():
            continue
        outside = ~inside
        if outside.any() and inside[np.argmax(outside):].any():
            return False
    return True


@dataclass
class FirstCollisionSample:
    tau0: np.ndarray
    nu: np.ndarray
    V1: np.ndarray
    censored: np.ndarray
    certificate_gap: float
    certificate_min_dot: float
    audited: int
    audit_failures: int


def _collision_block(args):
    v0, params, n, seed, block, horizon, cap, audit_every = args
    rng = RngStream(seed, FULL_STREAM + block)
    tau = np.full(n, np.inf)
    nu = np.full((n, 3), np.nan)
    cens = np.zeros(n, dtype=bool)
    gap, min_dot, audited, failures = 0.0, np.inf, 0, 0
    for k in range(n):
        fc, field = _first_collision(v0, params, horizon, rng, cap)
        if fc.censored:
            cens[k] = True
            continue
        tau[k], nu[k] = fc.tau0, fc.nu
        g_k, d_k = collision_certificate(v0, params, fc)
        gap = max(gap, g_k)
        min_dot = min(min_dot, d_k)
        if audit_every and k % audit_every == 0:
            audited += 1
            if not no_earlier_collision(v0, params, field.centers, fc.tau0):
                failures += 1
    return tau, nu, cens, gap, min_dot, audited, failures


def sample_first_collisions(v0, params: ModelParams, n_fields: int, seed: int,
                            block: int = 1000, horizon: float | None = None,
                            audit_every: int = 100, threads: int = 1) -> FirstCollisionSample:
    """``n_fields`` independent first collisions; block ``b`` uses its own stream."""
    v0 = np.asarray(v0, dtype=float)
    if horizon is None:
        horizon = default_horizon(v0, params)
    cap = max(horizon, horizon_cap(v0, params))
    sizes = [min(block, n_fields - b0) for b0 in range(0, n_fields, block)]
    jobs = [(v0, params, n, seed, b, horizon, cap, audit_every) for b, n in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(_collision_block, jobs))
    tau = np.concatenate([p[0] for p in parts])
    nu = np.concatenate([p[1] for p in parts])
    cens = np.concatenate([p[2] for p in parts])
    V1 = v0 + np.outer(np.where(cens, np.nan, tau), params.a)
    return FirstCollisionSample(
        tau, nu, V1, cens,
        certificate_gap=max(p[3] for p in parts),
        certificate_min_dot=min(p[4] for p in parts),
        audited=sum(p[5] for p in parts), audit_failures=sum(p[6] for p in parts))


def latitude(nu, v) -> np.ndarray:
    """Angle between ``nu`` and ``v`` (row-wise)."""
    nu = np.atleast_2d(nu)
    v = np.atleast_2d(v)
    cosang = np.sum(nu * v, axis=1) / np.linalg.norm(v, axis=1)
    return np.arccos(np.clip(cosang, -1.0, 1.0))


def longitude(nu, v) -> np.ndarray:
    """Azimuth of ``nu`` about ``v`` measured from the projection of ``e1``, in ``[0, 2 pi)``."""
    nu = np.atleast_2d(nu)
    v = np.atleast_2d(v)
    e1 = v / np.linalg.norm(v, axis=1, keepdims=True)
    ref = np.zeros_like(e1)
    ref[:, 0] = 1.0
    ref -= np.sum(ref * e1, axis=1, keepdims=True) * e1
    weak = np.linalg.norm(ref, axis=1) < 1e-6
    if weak.any():
        alt = np.zeros((int(weak.sum()), 3))
        alt[:, 1] = 1.0
        alt -= np.sum(alt * e1[weak], axis=1, keepdims=True) * e1[weak]
        ref[weak] = alt
    e2 = ref / np.linalg.norm(ref, axis=1, keepdims=True)
    e3 = np.cross(e1, e2)
    return np.mod(np.arctan2(np.sum(nu * e3, axis=1), np.sum(nu * e2, axis=1)), 2 * np.pi)


def sin2_cdf(theta):
    return np.sin(np.clip(theta, 0.0, np.pi / 2)) ** 2


def survival_test(v0, params: ModelParams, sample: FirstCollisionSample) -> dict:
    """KS of ``L(tau0)/lam`` against Exp(1), i.e. of ``P(tau0 > t) = exp(-L(t)/lam)``."""
    ok = ~sample.censored
    u = arc_lengths(v0, params, sample.tau0[ok]) / params.lam
    res = stats.kstest(u, "expon")
    return {"n": int(ok.sum()), "censored": int(sample.censored.sum()),
            "D": float(res.statistic), "p": float(res.pvalue)}


def nu_law_test(sample: FirstCollisionSample) -> dict:
    ok = ~sample.censored
    theta = latitude(sample.nu[ok], sample.V1[ok])
    phi = longitude(sample.nu[ok], sample.V1[ok])
    lat = stats.kstest(theta, sin2_cdf)
    lon = stats.kstest(phi / (2 * np.pi), "uniform")
    corr = float(np.corrcoef(theta, sample.tau0[ok])[0, 1])
    return {"latitude_D": float(lat.statistic), "latitude_p": float(lat.pvalue),
            "longitude_D": float(lon.statistic), "longitude_p": float(lon.pvalue),
            "corr_theta_tau0": corr, "corr_bound": 3.0 / math.sqrt(int(ok.sum()))}


def mean_free_path_test(v0, params: ModelParams, sample: FirstCollisionSample) -> dict:
    """``E[L(tau0)] = lam`` checked with a z-score."""
    ok = ~sample.censored
    L = arc_lengths(v0, params, sample.tau0[ok])
    se = float(L.std(ddof=1) / math.sqrt(L.size))
    return {"mean_path": float(L.mean()), "lambda": params.lam, "stderr": se,
            "z": float((L.mean() - params.lam) / se)}


def tube_volume_mc(v0, params: ModelParams, t: float, n_samples: int, rng: RngStream,
                   chunk: int = 1_000_000) -> tuple[float, float]:
    """Volume of the swept forward-hemisphere tube ``A_{0,t}`` by hit-or-miss sampling."""
    v0 = np.asarray(v0, dtype=float)
    if t <= 0.0:
        return 0.0, 0.0
    lo, hi = path_box(v0, params, t)
    box_vol = float(np.prod(hi - lo))
    hits = 0
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        pts = lo + (hi - lo) * rng.uniform((n, 3))
        hit = np.empty(n, dtype=np.bool_)
        _in_tube(v0, params.a_magnitude, params.r, pts, float(t), hit)
        hits += int(hit.sum())
        done += n
    frac = hits / n_samples
    return box_vol * frac, box_vol * math.sqrt(frac * (1.0 - frac) / n_samples)


def tube_volume_formula(v0, params: ModelParams, t: float) -> float:
    """``pi r^2 L(t)``."""
    return math.pi * params.r ** 2 * float(arc_lengths(v0, params, [t])[0])


def bisectrix_law_crosscheck(v0, params: ModelParams, n_samples: int, seed: int,
                             sample: FirstCollisionSample | None = None) -> dict:
    """Compare obstacle normals with bisectrix normals at the same arrival velocities.

    Route (i): ``nu`` from simulated first collisions starting at ``v0``. Route
    (ii): for each arrival velocity ``V1`` of route (i), an independent uniform
    ``sigma`` and ``bisectrix(V1, sigma)``. Both routes are therefore conditioned
    on identical arrival velocities; latitude, longitude and post-collision speed
    are compared by two-sample KS.
    """
    if sample is None:
        sample = sample_first_collisions(v0, params, n_samples, seed, audit_every=0)
    ok = ~sample.censored
    V1 = sample.V1[ok]
    nu = sample.nu[ok]
    rng = RngStream(seed, CROSSCHECK_STREAM)
    sigma = rng.unit_vectors(V1.shape[0])
    nu_b = bisectrix_normals(V1, sigma)
    lat_a, lat_b = latitude(nu, V1), latitude(nu_b, V1)
    lon_a, lon_b = longitude(nu, V1), longitude(nu_b, V1)
    sp_a = np.linalg.norm(reflect_normal(V1, nu, params.alpha), axis=1)
    sp_b = np.linalg.norm(hat(V1, sigma, params.alpha), axis=1)
    out = {"n": int(V1.shape[0])}
    for name, x, y in (("latitude", lat_a, lat_b), ("longitude", lon_a, lon_b),
                       ("speed", sp_a, sp_b)):
        res = stats.ks_2samp(x, y)
        out[f"{name}_D"] = float(res.statistic)
        out[f"{name}_p"] = float(res.pvalue)
    out["bisectrix_latitude_p"] = float(stats.kstest(lat_b, sin2_cdf).pvalue)
    out["bisectrix_longitude_p"] = float(stats.kstest(lon_b / (2 * np.pi), "uniform").pvalue)
    return out


def poisson_gof(counts, mean: float) -> float:
    """Chi-square p-value of integer ``counts`` against Poisson(``mean``), tails pooled."""
    counts = np.asarray(counts, dtype=int)
    n = counts.size
    lo = int(stats.poisson.ppf(0.005, mean))
    hi = int(stats.poisson.ppf(0.995, mean))
    edges = np.arange(lo, hi + 1)
    obs = np.array([np.sum(counts <= lo)] + [np.sum(counts == k) for k in edges[1:-1]]
                   + [np.sum(counts >= hi)])
    probs = np.concatenate([[stats.poisson.cdf(lo, mean)],
                            stats.poisson.pmf(edges[1:-1], mean),
                            [stats.poisson.sf(hi - 1, mean)]])
    exp = probs * n
    # merge bins with small expectation into neighbours
    o, e = [], []
    acc_o = acc_e = 0.0
    for oi, ei in zip(obs, exp):
        acc_o += oi
        acc_e += ei
        if acc_e >= 5:
            o.append(acc_o)
            e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        o[-1] += acc_o
        e[-1] += acc_e
    return float(stats.chisquare(o, np.array(e) * sum(o) / sum(e)).pvalue)


def validate_full_model(v0, params: ModelParams, n_fields: int, seed: int,
                        volume_t: float = 1.0, volume_samples: int = 1_000_000,
                        threads: int = 1) -> dict:
    """Survival law, normal law, tube volume and mean free path in one report."""
    v0 = np.asarray(v0, dtype=float)
    flag = not in_condition(v0, params)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sample = sample_first_collisions(v0, params, n_fields, seed, threads=threads)
    vol, vol_se = tube_volume_mc(v0, params, volume_t, volume_samples, RngStream(seed, TUBE_STREAM))
    formula = tube_volume_formula(v0, params, volume_t)
    return {
        "in_condition_violated": flag,
        "n_fields": n_fields,
        "certificates": {"max_radius_gap": sample.certificate_gap,
                         "min_normal_dot_velocity": sample.certificate_min_dot,
                         "audited": sample.audited, "audit_failures": sample.audit_failures},
        "survival": survival_test(v0, params, sample),
        "nu_law": nu_law_test(sample),
        "tube_volume": {"t": volume_t, "samples": volume_samples, "estimate": vol,
                        "stderr": vol_se, "formula": formula,
                        "z": (vol - formula) / vol_se if vol_se > 0 else 0.0,
                        "relative_stderr": vol_se / vol if vol > 0 else math.inf},
        "mean_free_path": mean_free_path_test(v0, params, sample),
    }, sample
