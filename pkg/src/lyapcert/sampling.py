"""Deterministic low-discrepancy point sets for falsification and probing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc


def sobol(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """First ``count`` points of a scrambled Sobol sequence in ``[0, 1)^dim``.

    Larger ``count`` with the same seed extends the same sequence, so
    enlarging a sample never drops earlier points.
    """
    if count <= 0:
        return np.zeros((0, dim))
    m = max(0, math.ceil(math.log2(count)))
    points = qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(m)
    return points[:count]


def _unit_vectors(u: np.ndarray) -> np.ndarray:
    """Map uniform rows to unit vectors via the Gaussian trick."""
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    lengths = np.linalg.norm(g, axis=1, keepdims=True)
    lengths[lengths == 0] = 1.0
    return g / lengths


def ball_points(n: int, count: int, radius: float, inner_radius: float = 0.0,
                seed: int = 0, u: np.ndarray | None = None) -> np.ndarray:
    """Points uniformly spread over the shell ``inner_radius <= |x| <= radius``."""
    if u is None:
        u = sobol(n + 1, count, seed)
    directions = _unit_vectors(u[:, 1:n + 1]) if n > 1 else np.where(u[:, 1:2] < 0.5, -1.0, 1.0)
    lo, hi = inner_radius ** n, radius ** n
    r = (lo + u[:, 0] * (hi - lo)) ** (1.0 / n)
    return directions * r[:, None]


def sphere_directions(n: int, count: int | None = None, seed: int = 0) -> np.ndarray:
    """Unit directions: both signs for n=1, equally spaced angles for n=2
    (41 by default), Sobol-mapped Gaussian directions otherwise (20n by default)."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if count is None:
        count = 41 if n == 2 else 20 * n
    if n == 2:
        angles = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(angles), np.sin(angles)])
    return _unit_vectors(sobol(n, count, seed))


@dataclass(frozen=True)
class SamplingPlan:
    """Sample set over ``[0, t_max] x`` (domain ball minus a small inner ball)."""

    samples: int = 100_000
    t_max: float = 100.0
    inner_radius: float = 1e-6
    seed: int = 0

    def points(self, n: int, radius: float):
        """Return ``(t, X)`` with shapes (samples,) and (samples, n)."""
        u = sobol(n + 2, self.samples, self.seed)
        t = u[:, 0] * self.t_max
        X = ball_points(n, self.samples, radius, self.inner_radius, u=u[:, 1:])
        return t, X

    def times(self, count: int = 101) -> np.ndarray:
        return np.linspace(0.0, self.t_max, count)
