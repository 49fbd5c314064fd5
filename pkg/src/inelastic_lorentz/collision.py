"""Collision maps: restitution reflection and its scattering-direction form."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DegenerateBisectrixError, UnsupportedParameterError


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the inelastic Lorentz model.

    The acceleration always points along the third axis, ``a = (0, 0, a_magnitude)``.
    ``r`` (particle plus obstacle radius) only matters for the obstacle-field model.
    """

    alpha: float = 0.5
    a_magnitude: float = 1.0
    lam: float = 1.0
    r: float = 0.2
    a: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise UnsupportedParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.a_magnitude > 0.0:
            raise UnsupportedParameterError(f"|a| must be positive, got {self.a_magnitude}")
        if not self.lam > 0.0:
            raise UnsupportedParameterError(f"lambda must be positive, got {self.lam}")
        if not self.r > 0.0:
            raise UnsupportedParameterError(f"r must be positive, got {self.r}")
        object.__setattr__(self, "a", np.array([0.0, 0.0, float(self.a_magnitude)]))


def hat(v, sigma, alpha: float) -> np.ndarray:
    """Post-collision velocity ``v - (1+alpha)/2 (v + |v| sigma)``."""
    v = np.asarray(v, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    return v - 0.5 * (1.0 + alpha) * (v + speed * sigma)


def reflect_normal(v, nu, alpha: float) -> np.ndarray:
    """Reflect off a surface with unit normal ``nu``: the normal part is scaled by -alpha."""
    v = np.asarray(v, dtype=float)
    nu = np.asarray(nu, dtype=float)
    vn = np.sum(v * nu, axis=-1, keepdims=True)
    return v - (1.0 + alpha) * vn * nu


def bisectrix_normal(v, sigma) -> np.ndarray:
    """Unit normal along the bisectrix of ``v`` and ``sigma``.

    Reflecting ``v`` off this normal reproduces :func:`hat`. Undefined when
    ``sigma = -v/|v|``; that case raises :class:`DegenerateBisectrixError`.
    """
    v = np.asarray(v, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    speed = np.linalg.norm(v)
    if speed == 0.0:
        raise DegenerateBisectrixError("bisectrix undefined for zero velocity")
    u = v / speed + sigma
    norm = np.linalg.norm(u)
    if norm < 1e-12:
        raise DegenerateBisectrixError("sigma is antiparallel to v")
    return u / norm


def bisectrix_normals(v: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Row-wise :func:`bisectrix_normal` for ``(n, 3)`` arrays."""
    v = np.asarray(v, dtype=float)
    u = v / np.linalg.norm(v, axis=1, keepdims=True) + np.asarray(sigma, dtype=float)
    norm = np.linalg.norm(u, axis=1, keepdims=True)
    if np.any(norm < 1e-12):
        raise DegenerateBisectrixError("sigma is antiparallel to v in at least one row")
    return u / norm


@njit(cache=True, nogil=True)
def hat3(v1, v2, v3, s1, s2, s3, alpha):
    speed = math.sqrt(v1 * v1 + v2 * v2 + v3 * v3)
    k = 0.5 * (1.0 + alpha)
    return (v1 - k * (v1 + speed * s1),
            v2 - k * (v2 + speed * s2),
            v3 - k * (v3 + speed * s3))
