"""Seeded random streams.

Every stream is a Philox counter-based generator keyed by ``(seed, stream_id)``
through :class:`numpy.random.SeedSequence`, so replica ``k`` of a run draws the
same variates no matter which worker executes it.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """Independent random stream identified by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be nonnegative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def uniform(self, size=None):
        return self.generator.random(size)

    def exponential(self, mean: float, size=None):
        return sample_exponential(self, mean, size)

    def unit_vectors(self, n: int) -> np.ndarray:
        return gaussian_to_sphere(self.generator.standard_normal((n, 3)))

    def unit_vector(self) -> np.ndarray:
        return sample_unit_sphere(self)

    def poisson(self, mean: float) -> int:
        return int(self.generator.poisson(mean))


def exponential_from_uniform(u, mean: float):
    """Inverse CDF of the exponential law with the given *mean*."""
    return -mean * np.log1p(-np.asarray(u, dtype=float))


def sample_exponential(rng: RngStream, mean: float, size=None):
    """Exponential variates with mean ``mean`` (not rate)."""
    if not mean > 0:
        raise ValueError(f"mean must be positive, got {mean}")
    u = rng.generator.random(size)
    out = exponential_from_uniform(u, mean)
    return float(out) if size is None else out


def gaussian_to_sphere(z: np.ndarray) -> np.ndarray:
    """Project rows of standard Gaussian triples onto the unit sphere."""
    z = np.asarray(z, dtype=float)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def sample_unit_sphere(rng: RngStream) -> np.ndarray:
    """One draw from the uniform law on S^2."""
    return gaussian_to_sphere(rng.generator.standard_normal(3))
