import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inelastic_lorentz.chain import ChainPath, ChainState, run_chain
from inelastic_lorentz.collision import ModelParams
from inelastic_lorentz.errors import OutOfRangeError
from inelastic_lorentz.estimators import estimate_c4
from inelastic_lorentz.rng import RngStream
from inelastic_lorentz.trajectory import (TrajectoryPath, collisions_by_time, functionals,
                                          functionals_array, interpolation_gap,
                                          linear_interpolated_Y, partial_sum_process_Z,
                                          position_at_time, positions_at_collisions,
                                          reduction_maxima, representation_identity,
                                          scaled_process_Y, time_identity)

from conftest import random_unit


def one_step_path(w, g, tau):
    p = ModelParams(a_magnitude=g)
    w = np.asarray(w, float)
    V = np.vstack([w, w + p.a * tau])
    sigma = np.array([[0, 0, -1.0], [0, 0, 1.0]])
    return ChainPath(p, V, sigma, w[None, :], np.array([tau]), np.array([0.0, tau]))


def test_origin(path_1e4):
    assert np.array_equal(positions_at_collisions(path_1e4)[0], np.zeros(3))


def test_single_step_drop():
    X = positions_at_collisions(one_step_path((0, 0, 0), 2.0, 1.0))
    assert np.allclose(X[1], (0, 0, 1))


def test_positions_vs_direct_integration(path_1e4, params):
    X = positions_at_collisions(path_1e4)
    direct = np.cumsum(path_1e4.w * path_1e4.tau[:, None]
                       + 0.5 * np.outer(path_1e4.tau ** 2, params.a), axis=0)
    scale = np.abs(direct).max()
    assert np.allclose(X[1:1001], direct[:1000], rtol=0, atol=1e-10 * scale)
    assert np.allclose(X[1:], direct, rtol=0, atol=1e-9 * scale)


def test_position_at_collision_times(path_1e4):
    traj = TrajectoryPath.from_chain(path_1e4)
    idx = np.array([0, 1, 17, 5000, 9999])
    assert np.allclose(position_at_time(traj, path_1e4.t[idx]), traj.X_at_collisions[idx],
                       rtol=1e-13, atol=1e-13)


def test_position_midway():
    path = one_step_path((1, 0, 0), 1.0, 2.0)
    assert np.allclose(position_at_time(path, 1.0), (1, 0, 0.5))


def test_position_continuity(path_1e4):
    traj = TrajectoryPath.from_chain(path_1e4)
    rec = traj.records
    for n in (1, 10, 4000, 9000):
        tn = rec.t[n]
        dt = rec.t[n] - rec.t[n - 1]
        left = traj.X_at_collisions[n - 1] + rec.w[n - 1] * dt + 0.5 * rec.params.a * dt ** 2
        right = position_at_time(traj, tn)
        assert np.allclose(left, right, rtol=1e-12, atol=1e-12 * np.abs(right).max())


def test_position_out_of_range(path_1e4):
    with pytest.raises(OutOfRangeError):
        position_at_time(path_1e4, path_1e4.t[-1] * 1.01)
    with pytest.raises(OutOfRangeError):
        position_at_time(path_1e4, -1.0)


def test_collisions_by_time(path_1e4):
    t = path_1e4.t
    assert collisions_by_time(path_1e4, 0.5 * t[1]) == 0
    assert collisions_by_time(path_1e4, t[5]) == 5
    assert collisions_by_time(path_1e4, np.nextafter(t[5], 0)) == 4


def test_collision_rate_matches_c4(path_2e5, params):
    c4 = estimate_c4(path_2e5, params, burn_in=1000).ergodic
    t = path_2e5.t[-1] * 0.99
    n = collisions_by_time(path_2e5, t)
    # t/n(t) vs c4: the slope estimator has its own error, bounded here by 5 c4 stderr
    assert abs(t / n - c4.value) < 5 * c4.stderr + 0.01 * c4.value


def test_functionals_dummy_state(params):
    fv = functionals(ChainState(np.array([1.0, 2.0, 3.0]), -np.array([1.0, 2.0, 3.0]) / math.sqrt(14)),
                     params, c1=0.7)
    assert np.allclose(fv.f_val, 0, atol=1e-15) and np.allclose(fv.h_val, 0, atol=1e-15)


def test_functionals_head_on():
    fv = functionals(ChainState(np.array([0.0, 0.0, 2.0]), np.array([0.0, 0.0, 1.0])),
                     ModelParams(alpha=0.5), c1=0.25)
    assert np.allclose(fv.f_val, (0, 0, 1.5))
    assert np.allclose(fv.h_val, (0, 0, 3))
    assert np.array_equal(fv.g_val, fv.f_val - 0.25 * fv.h_val)


def test_h3_bound():
    rng = np.random.default_rng(0)
    for alpha in (0.1, 0.5, 0.9):
        V = rng.normal(0, 3, (10_000, 3))
        s = random_unit(rng, 10_000)
        w = V - 0.5 * (1 + alpha) * (V + np.linalg.norm(V, axis=1, keepdims=True) * s)
        _, h, _ = functionals_array(V, w, 1.0, 0.3)
        assert np.all(h[:, :2] == 0)
        bound = (1 + 1 / alpha) * np.linalg.norm(w, axis=1)
        assert np.all(np.abs(h[:, 2]) <= bound * (1 + 1e-12))


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 3))
def test_g_definition_exact(c1, g):
    rng = np.random.default_rng(1)
    V = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 3))
    f, h, gv = functionals_array(V, w, g, c1)
    assert np.array_equal(gv, f - c1 * h)


def test_Y_at_zero_and_continuity(path_1e4):
    t = 0.9 * path_1e4.t[-1]
    grid = np.linspace(0, 1, 1001)
    Y = scaled_process_Y(path_1e4, t, 0.7, grid)
    assert np.array_equal(Y[0], np.zeros(3))
    assert np.max(np.abs(np.diff(Y, axis=0))) < 1.0
    with pytest.raises(OutOfRangeError):
        scaled_process_Y(path_1e4, 2 * path_1e4.t[-1], 0.7, grid)


def test_Z_at_zero_and_single_collision():
    path = run_chain((0, 0, 1), 3, ModelParams(), RngStream(2))
    t = 0.5 * (path.t[1] + path.t[2])
    grid = np.linspace(0, path.t[1] / t, 11)
    Z = partial_sum_process_Z(path, t, 0.5, grid)
    assert np.array_equal(Z[0], np.zeros(3))
    # linear between 0 and t1/t
    assert np.allclose(Z, np.outer(grid / grid[-1], Z[-1]), atol=1e-14)


def test_interpolation_gap_exact_and_bounded(path_1e4):
    t = 0.8 * path_1e4.t[-1]
    gap = interpolation_gap(path_1e4, t)
    grid = np.linspace(0, 1, 200_001)
    Y = scaled_process_Y(path_1e4, t, 0.7, grid)
    Yt = linear_interpolated_Y(path_1e4, t, 0.7, grid)
    assert np.max(np.abs(Y[:, :2] - Yt[:, :2])) < 1e-9
    measured = np.max(np.abs(Y[:, 2] - Yt[:, 2]))
    assert measured <= gap * (1 + 1e-9)
    assert measured >= 0.9 * gap
    n_t = collisions_by_time(path_1e4, t)
    tau_max = np.max(path_1e4.tau[: n_t + 1])
    assert gap <= path_1e4.params.a_magnitude * tau_max ** 2 / (8 * math.sqrt(t)) * (1 + 1e-12)


def test_representation_identity_small(path_1e4, params):
    X = positions_at_collisions(path_1e4)
    for n in (0, 1, 2, 100):
        rep = representation_identity(path_1e4, 0.6, n)
        assert np.allclose(rep, X[n] - 0.6 * params.a * path_1e4.t[n], rtol=1e-10, atol=1e-12)


def test_time_identity_small(path_1e4):
    for n in (0, 1, 5, 1000):
        assert time_identity(path_1e4, n) == pytest.approx(path_1e4.t[n], rel=1e-10, abs=1e-14)


def test_Y_minus_Z_gap_decreases(params):
    path = run_chain((0, 0, 1), 150_000, params, RngStream(40))
    gaps = []
    for t in (1e3, 1e4, 1e5):
        grid = np.linspace(0, 1, 2001)
        gaps.append(np.max(np.abs(scaled_process_Y(path, t, 0.7, grid)
                                  - partial_sum_process_Z(path, t, 0.7, grid))))
    assert gaps[0] > gaps[1] > gaps[2]


def test_reduction_maxima_shapes(path_1e4):
    a, b = reduction_maxima(path_1e4, 1000.0)
    assert a > 0 and b > 0
