import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.spatial.transform import Rotation

from inelastic_lorentz.collision import (ModelParams, bisectrix_normal, bisectrix_normals, hat,
                                         hat3, reflect_normal)
from inelastic_lorentz.errors import DegenerateBisectrixError, UnsupportedParameterError

from conftest import random_unit


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_dummy_collision(alpha):
    assert np.allclose(hat((0, 0, 1), (0, 0, -1), alpha), (0, 0, 1), atol=0)


def test_hat_examples():
    assert np.allclose(hat((0, 0, 1), (0, 0, 1), 0.5), (0, 0, -0.5))
    out = hat((1, 0, 0), (0, 1, 0), 0.5)
    assert np.allclose(out, (0.25, -0.75, 0), atol=1e-15)
    assert 0.5 <= np.linalg.norm(out) <= 1


def test_hat_zero_velocity():
    assert np.array_equal(hat((0, 0, 0), (1, 0, 0), 0.5), np.zeros(3))


def test_reflect_examples():
    assert np.allclose(reflect_normal((0, 0, -1), (0, 0, 1), 0.5), (0, 0, 0.5))
    assert np.allclose(reflect_normal((1, 0, -1), (0, 0, 1), 1.0), (1, 0, 1))


def test_reflect_tangential_preserved():
    rng = np.random.default_rng(0)
    v = np.array([1.0, 2.0, 3.0])
    for e in random_unit(rng, 100):
        out = reflect_normal(v, e, 0.3)
        vt = v - (v @ e) * e
        ot = out - (out @ e) * e
        assert np.allclose(ot, vt, atol=1e-14, rtol=0)
        assert out @ e == pytest.approx(-0.3 * (v @ e), abs=1e-14)


def test_bisectrix_examples():
    assert np.allclose(bisectrix_normal((0, 0, 1), (1, 0, 0)), np.array([1, 0, 1]) / math.sqrt(2))
    assert np.allclose(bisectrix_normal((0, 0, 2), (0, 0, 1)), (0, 0, 1))


def test_bisectrix_degenerate():
    with pytest.raises(DegenerateBisectrixError):
        bisectrix_normal((0, 0, 2), (0, 0, -1))
    with pytest.raises(DegenerateBisectrixError):
        bisectrix_normal((0, 0, 0), (0, 0, 1))
    with pytest.raises(DegenerateBisectrixError):
        bisectrix_normals(np.array([[0, 0, 1.0]]), np.array([[0, 0, -1.0]]))


def test_bisectrix_identity_and_equivalence():
    rng = np.random.default_rng(1)
    v = rng.normal(0, 3, (10_000, 3))
    s = random_unit(rng, 10_000)
    nu = bisectrix_normals(v, s)
    speed = np.linalg.norm(v, axis=1, keepdims=True)
    lhs = np.sum(v * nu, axis=1, keepdims=True) * nu
    assert np.allclose(lhs, 0.5 * (v + speed * s), atol=1e-12 * speed.max())
    alpha = rng.uniform(0.01, 0.99, (10_000, 1))
    assert np.allclose(reflect_normal(v, nu, alpha), hat(v, s, alpha), atol=1e-12 * speed.max(), rtol=0)


def test_norm_sandwich():
    rng = np.random.default_rng(2)
    v = rng.normal(0, 5, (10_000, 3))
    s = random_unit(rng, 10_000)
    alpha = rng.uniform(0.01, 0.99, (10_000, 1))
    n_out = np.linalg.norm(hat(v, s, alpha), axis=1)
    n_in = np.linalg.norm(v, axis=1)
    assert np.all(n_out <= n_in * (1 + 1e-14))
    assert np.all(n_out >= alpha[:, 0] * n_in * (1 - 1e-14))


def test_latitude_law():
    rng = np.random.default_rng(3)
    N = 100_000
    v = np.array([0.3, -1.0, 2.0])
    s = random_unit(rng, N)
    nu = bisectrix_normals(np.tile(v, (N, 1)), s)
    theta = np.arccos(np.clip(nu @ v / np.linalg.norm(v), -1, 1))
    D = stats.kstest(theta, lambda u: np.sin(np.clip(u, 0, np.pi / 2)) ** 2).statistic
    assert D < 2 / math.sqrt(N)


finite = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.tuples(finite, finite, finite), st.tuples(finite, finite, finite),
       st.floats(0.01, 0.99), st.floats(0, 2 * math.pi))
def test_rotation_equivariance(v, z, alpha, angle):
    z = np.asarray(z)
    if np.linalg.norm(z) < 1e-3:
        z = np.array([1.0, 0, 0])
    s = z / np.linalg.norm(z)
    R = Rotation.from_rotvec([0, 0, angle]).as_matrix()
    lhs = hat(R @ np.asarray(v), R @ s, alpha)
    rhs = R @ hat(v, s, alpha)
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + np.linalg.norm(v)), rtol=0)


def test_hat3_matches_hat():
    rng = np.random.default_rng(4)
    v = rng.normal(size=3)
    s = random_unit(rng, 1)[0]
    assert np.allclose(hat3(*v, *s, 0.4), hat(v, s, 0.4), atol=1e-15)


@pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=1.0), dict(a_magnitude=0.0),
                                dict(lam=-1.0), dict(r=0.0)])
def test_params_validation(kw):
    with pytest.raises(UnsupportedParameterError):
        ModelParams(**kw)


def test_params_acceleration_axis():
    assert np.array_equal(ModelParams(a_magnitude=2.5).a, [0, 0, 2.5])
