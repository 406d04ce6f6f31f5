"""Seeded synthetic datasets for tests and desk-scale benchmarks."""

from __future__ import annotations

from typing import List

import numpy as np


def uniform_cube(n: int, dim: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).random((n, dim))


def gaussian_clusters(n: int, dim: int, clusters: int = 10, spread: float = 0.15, seed: int = 0) -> np.ndarray:
    """Isotropic blobs around centers drawn from the unit cube."""
    rng = np.random.default_rng(seed)
    centers = rng.random((clusters, dim))
    labels = rng.integers(clusters, size=n)
    return centers[labels] + spread * rng.standard_normal((n, dim))


def line_fixture(n: int, dim: int = 1, length: float = 1.0, seed: int = 0) -> np.ndarray:
    """Points spread along a random direction; their Euclidean distances are realizable by any embedding width."""
    rng = np.random.default_rng(seed)
    t = np.sort(rng.random(n)) * length
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return t[:, None] * direction[None, :]


def random_sets(n: int, universe: int, mean_size: int = 8, seed: int = 0) -> List[np.ndarray]:
    """Sparse transaction rows; every row holds at least one id."""
    rng = np.random.default_rng(seed)
    sizes = np.clip(rng.poisson(mean_size, size=n), 1, universe)
    # a skewed item popularity gives the rows some shared structure
    weights = 1.0 / np.arange(1, universe + 1)
    weights /= weights.sum()
    return [np.sort(rng.choice(universe, size=int(s), replace=False, p=weights)) for s in sizes]


def random_symmetric(n: int, seed: int = 0, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """Symmetric matrix with uniform off-diagonal entries and a zero diagonal."""
    rng = np.random.default_rng(seed)
    A = rng.uniform(low, high, size=(n, n))
    D = np.triu(A, 1)
    return D + D.T
