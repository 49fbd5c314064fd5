"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line at the end of the run."""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import integrate

from inelastic_lorentz.chain import run_chain
from inelastic_lorentz.collision import ModelParams
from inelastic_lorentz.estimators import initial_condition_invariance, run_estimation
from inelastic_lorentz.fclt import default_grid, fclt_suite, horizon_for
from inelastic_lorentz.fullmodel import (nu_law_test, sample_first_collisions, survival_test,
                                         tube_volume_formula, tube_volume_mc)
from inelastic_lorentz.kinematics import free_flight_time, path_length
from inelastic_lorentz.rng import RngStream
from inelastic_lorentz.trajectory import reduction_maxima, representation_identity, time_identity

from conftest import record

THREADS = max(1, min(8, os.cpu_count() or 1))
DEFAULT = ModelParams(alpha=0.5, a_magnitude=1.0, lam=1.0, r=0.2)


@pytest.fixture(scope="module")
def estimation():
    return run_estimation(DEFAULT, (0.0, 0.0, 1.0), 10_000_000, seed=2024, threads=THREADS)


def test_01_kinematics_oracle():
    rng = np.random.default_rng(1)
    a = np.array([0.0, 0.0, 1.0])
    V = rng.normal(0, 3, (1000, 3))
    T = rng.uniform(0, 5, 1000)
    ETA = rng.exponential(2.0, 1000)
    path_length(V[0], a, T[0]), free_flight_time(V[0], a, ETA[0])  # compile outside the clock
    t0 = time.perf_counter()
    L = np.array([path_length(V[i], a, T[i]) for i in range(1000)])
    F = np.array([free_flight_time(V[i], a, ETA[i]) for i in range(1000)])
    elapsed = time.perf_counter() - t0
    quad = np.array([integrate.quad(lambda s, v=V[i]: np.linalg.norm(v + a * s), 0, T[i],
                                    epsabs=0, epsrel=1e-13, limit=200)[0] for i in range(1000)])
    rel_q = np.max(np.abs(L - quad) / quad)
    rt = np.array([path_length(V[i], a, F[i]) for i in range(1000)])
    rel_rt = np.max(np.abs(rt - ETA) / ETA)
    ok = rel_q <= 1e-10 and rel_rt <= 1e-12 and elapsed < 1.0
    record(1, "kinematics oracle", ok,
           f"quadrature rel {rel_q:.2e} (<=1e-10), round trip rel {rel_rt:.2e} (<=1e-12), "
           f"{elapsed:.3f} s (<1 s)")
    assert ok


def test_02_full_model_geometry_laws():
    v0 = np.array([0.0, 2.0, 0.0])
    sample = sample_first_collisions(v0, DEFAULT, 100_000, seed=77, threads=THREADS)
    surv = survival_test(v0, DEFAULT, sample)
    nu = nu_law_test(sample)
    ok = surv["p"] > 1e-3 and nu["latitude_p"] > 1e-3 and sample.censored.sum() == 0
    record(2, "first-collision laws (1e5 fields)", ok,
           f"survival KS p={surv['p']:.3g}, latitude KS p={nu['latitude_p']:.3g}, "
           f"censored={int(sample.censored.sum())}, audit failures={sample.audit_failures}")
    assert ok


def test_03_tube_volume():
    v0 = np.array([0.0, 2.0, 0.0])
    t = 1.0
    vol, se = tube_volume_mc(v0, DEFAULT, t, 1_000_000, RngStream(78, 0))
    exact = tube_volume_formula(v0, DEFAULT, t)
    z = (vol - exact) / se
    ok = abs(z) < 3 and se / vol <= 0.01
    record(3, "tube volume", ok, f"MC {vol:.5f} +- {se:.1e} vs {exact:.5f} (z={z:.2f}), "
                                 f"relative precision {se / vol:.2%}")
    assert ok


def test_04_representation_identity():
    path = run_chain((0.0, 0.0, 1.0), 10_000, DEFAULT, RngStream(79, 0))
    c1 = 0.74
    direct = np.vstack([np.zeros(3), np.cumsum(path.w * path.tau[:, None]
                                               + 0.5 * np.outer(path.tau ** 2, DEFAULT.a), axis=0)])
    worst_x = worst_t = 0.0
    for n in list(range(1, 100)) + list(range(100, 10_001, 100)):
        target = direct[n] - c1 * DEFAULT.a * path.t[n]
        rep = representation_identity(path, c1, n)
        worst_x = max(worst_x, np.linalg.norm(rep - target) / np.linalg.norm(target))
        tsum = math.fsum(path.tau[:n])
        worst_t = max(worst_t, abs(time_identity(path, n) - tsum) / tsum)
    ok = worst_x <= 1e-8 and worst_t <= 1e-10
    record(4, "representation identity", ok,
           f"X_n - c1 a t_n rel {worst_x:.2e} (<=1e-8), t_n rel {worst_t:.2e} (<=1e-10)")
    assert ok


def test_05_lln_constants(estimation):
    r = estimation
    z_routes = abs(r.c4.value - r.c4_slope.value) / math.hypot(r.c4.stderr, r.c4_slope.stderr)
    z_g = [abs(e.z()) for e in r.g_mean]
    ok = (z_routes < 3 and r.c4.value > 5 * r.c4.stderr and r.c1.value > 5 * r.c1.stderr
          and max(z_g) < 3)
    record(5, "LLN and constants (1e7 steps)", ok,
           f"c4={r.c4.value:.5f}+-{r.c4.stderr:.1e}, slope={r.c4_slope.value:.5f} (z={z_routes:.2f}), "
           f"c1={r.c1.value:.5f}+-{r.c1.stderr:.1e}, |z(mean g)|={', '.join(f'{z:.2f}' for z in z_g)}")
    assert ok


def test_06_covariance_structure(estimation):
    r = estimation
    K, se = np.array(r.K), np.array(r.K_stderr)
    z_off = [abs(K[i, j]) / se[i, j] for i, j in ((0, 1), (0, 2), (1, 2))]
    z_diag = abs(r.K_diag_difference.z())
    ok = max(z_off) < 3 and z_diag < 3
    record(6, "K structure", ok,
           f"off-diagonal |z|={', '.join(f'{z:.2f}' for z in z_off)}, K11-K22 |z|={z_diag:.2f}, "
           f"diag=({K[0, 0]:.4f}, {K[1, 1]:.4f}, {K[2, 2]:.4f})")
    assert ok


def test_07_fclt_suite(estimation):
    r = estimation
    T = horizon_for(r.c4.value, 1e4)
    rep = fclt_suite(DEFAULT, r.c1.value, r.c2.value, r.c3.value, 2000, T, default_grid(101),
                     seed=2025, c1_stderr=r.c1.stderr, threads=THREADS)
    ok = all(rep.passed.values())
    pmin = min(k["p_bonferroni"] for k in rep.ks)
    record(7, "FCLT suite (M=2000)", ok,
           f"mean n(T)={rep.mean_collisions:.0f}, min Bonferroni p={pmin:.3g}, "
           f"max |cross corr|={max(abs(c['corr']) for c in rep.cross_correlation):.3f}, "
           f"max |increment corr|={max(abs(c['corr']) for c in rep.increment_correlation):.3f} "
           f"(bound {rep.correlation_bound:.3f}), variance ratios "
           f"{', '.join(f'{v:.2f}' for v in rep.variance_ratio)}")
    assert ok


def test_08_reduction_decay():
    fails = []
    for seed in range(10):
        path = run_chain((0.0, 0.0, 1.0), 100_000, DEFAULT, RngStream(seed, 8))
        while path.t[-1] <= 1.05e5:
            path = run_chain((0.0, 0.0, 1.0), 2 * len(path), DEFAULT, RngStream(seed, 8))
        vals = [reduction_maxima(path, t) for t in (1e3, 1e4, 1e5)]
        tau_seq = [v[0] for v in vals]
        w_seq = [v[1] for v in vals]
        if not (tau_seq[0] > tau_seq[1] > tau_seq[2] and w_seq[0] > w_seq[1] > w_seq[2]):
            fails.append(seed)
    ok = not fails
    record(8, "reduction decay (10 seeds)", ok,
           "strictly decreasing on all seeds" if ok else f"not decreasing for seeds {fails}")
    assert ok


def test_09_initial_condition_invariance():
    res = initial_condition_invariance(DEFAULT, [(0.0, 0.0, 1.0), (10.0, 0.0, -5.0), (0.0, 0.0, 0.0)],
                                       2_000_000, seed=90, threads=THREADS)
    ok = res["consistent"]
    record(9, "initial-condition invariance", ok,
           f"max pairwise |z| over c4, c1 = {res['max_z']:.2f} (<3)")
    assert ok


def _run(args, tmp, threads_env=None):
    env = dict(os.environ)
    env.pop("LORENTZ_THREADS", None)
    if threads_env is not None:
        env["LORENTZ_THREADS"] = str(threads_env)
    proc = subprocess.run([sys.executable, "-m", "inelastic_lorentz.cli", *args],
                          cwd=tmp, env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def test_10_determinism(tmp_path):
    cfg = {"model": {"v0": [0.0, 2.0, 0.0]},
           "run": {"n_steps": 200_000, "burn_in": 1000, "n_replicas": 500, "horizon_T": 200.0,
                   "grid_points": 21},
           "seed": 31, "output_dir": "unused"}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    runs = {"t1": ["--threads", "1"], "t4": ["--threads", "4"], "env3": []}
    for tag, flags in runs.items():
        out = f"out_{tag}"
        env = 3 if tag == "env3" else None
        base = ["--config", "cfg.json", "--out", out, *flags]
        _run(["simulate", *base, "--n-steps", "20000"], tmp_path, env)
        _run(["constants", *base], tmp_path, env)
        _run(["fclt", *base, "--constants", f"{out}/constants.json"], tmp_path, env)
        _run(["validate-full", *base, "--fields", "3000", "--samples", "100000"], tmp_path, env)
        _run(["tube-volume", *base, "--samples", "100000"], tmp_path, env)
    ref = sorted(p.name for p in (tmp_path / "out_t1").iterdir())
    diffs = []
    for tag in ("t4", "env3"):
        names = sorted(p.name for p in (tmp_path / f"out_{tag}").iterdir())
        if names != ref:
            diffs.append(f"{tag}: file set differs")
            continue
        for name in ref:
            if (tmp_path / "out_t1" / name).read_bytes() != (tmp_path / f"out_{tag}" / name).read_bytes():
                diffs.append(f"{tag}/{name}")
    ok = not diffs
    record(10, "determinism across thread counts", ok,
           f"{len(ref)} output files byte-identical for threads 1, 4 and LORENTZ_THREADS=3"
           if ok else f"differences: {diffs}")
    assert ok
