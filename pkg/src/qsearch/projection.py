"""Canonical q-metric projection of a dissimilarity matrix.

Every pairwise value is replaced by the smallest q-length over all paths
connecting the two points.  The exact routine runs one shortest-path search
per source over the powered weights; the
approximate routine relaxes a fixed number of sweeps over k-nearest-neighbor
hops only.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numba
import numpy as np

from .qcore import (
    QExponent,
    QLike,
    as_q,
    from_powered,
    q_combine,
    q_triangle_violation,
    to_powered,
    validate_distance_matrix,
)

THREADS_ENV = "QSEARCH_THREADS"


class ProjectionMode(enum.Enum):
    EXACT = "exact"
    APPROXIMATE = "approx"


@dataclass(frozen=True)
class ProjectionConfig:
    q: QExponent
    mode: ProjectionMode = ProjectionMode.EXACT
    knn_k: int = 10
    iterations_l: int = 3
    # None means "auto": the max entry of the input matrix
    scale: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "q", as_q(self.q))
        object.__setattr__(self, "mode", ProjectionMode(self.mode))
        if self.knn_k < 1:
            raise ValueError("knn_k must be positive")
        if self.iterations_l < 0:
            raise ValueError("iterations_l must be nonnegative")
        if self.scale is not None and not self.scale > 0:
            raise ValueError("scale must be positive")


@dataclass
class ProjectedMatrix:
    """A pairwise matrix that satisfies the q-triangle inequality for ``q``."""

    values: np.ndarray
    q: QExponent
    scale_used: float

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    def powered(self, scale: Optional[float] = None) -> np.ndarray:
        return to_powered(self.values, self.q, self.scale_used if scale is None else scale)


def _auto_scale(D: np.ndarray, scale: Optional[float]) -> float:
    if scale is not None:
        return float(scale)
    top = float(D.max()) if D.size else 0.0
    return top if top > 0 else 1.0


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@numba.njit(cache=True, nogil=True)
def _single_source(W, src, inf_q, out):
    # dense Dijkstra: O(n) frontier scan per settle beats a heap on a complete graph
    n = W.shape[0]
    settled = np.zeros(n, np.bool_)
    for j in range(n):
        out[j] = W[src, j]
    out[src] = 0.0
    settled[src] = True
    for _ in range(n - 1):
        u = -1
        best = np.inf
        for j in range(n):
            if not settled[j] and out[j] < best:
                best = out[j]
                u = j
        if u < 0:
            break
        settled[u] = True
        for j in range(n):
            if not settled[j]:
                c = max(best, W[u, j]) if inf_q else best + W[u, j]
                if c < out[j]:
                    out[j] = c


@numba.njit(cache=True, nogil=True)
def _source_block(W, start, stop, inf_q, out):
    for s in range(start, stop):
        _single_source(W, s, inf_q, out[s])


def _shortest_powered(W: np.ndarray, inf_q: bool) -> np.ndarray:
    """All-pairs shortest powered path lengths, one Dijkstra run per source.

    Sources are split into contiguous blocks; each block writes disjoint rows,
    so the result does not depend on the thread schedule.
    """
    W = np.ascontiguousarray(W)
    n = W.shape[0]
    out = np.empty_like(W)
    threads = _thread_count()
    if threads == 1:
        _source_block(W, 0, n, inf_q, out)
        return out
    bounds = np.linspace(0, n, threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as pool:
        jobs = [pool.submit(_source_block, W, a, b, inf_q, out) for a, b in zip(bounds[:-1], bounds[1:])]
        for job in jobs:
            job.result()
    return out


def canonical_exact(D, q: QLike, scale: Optional[float] = None) -> ProjectedMatrix:
    """Exact canonical q-metric projection of a dissimilarity matrix."""
    q = as_q(q)
    D = validate_distance_matrix(D)
    s = _auto_scale(D, scale)
    n = D.shape[0]
    if n <= 2:
        return ProjectedMatrix(D.copy(), q, s)
    W = to_powered(D, q, s)
    P = _shortest_powered(W, q.is_inf)
    # row-wise runs can differ in the last bit across (i, j) and (j, i)
    P = np.minimum(P, P.T)
    np.fill_diagonal(P, 0.0)
    out = np.minimum(from_powered(P, q, s), D)
    return ProjectedMatrix(out, q, s)


def knn_neighborhoods(D: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest off-diagonal entries per row, ties by lower index."""
    n = D.shape[0]
    M = D.astype(np.float64, copy=True)
    np.fill_diagonal(M, np.inf)
    order = np.argsort(M, axis=1, kind="stable")
    return order[:, :k]


def canonical_approx(D, config: ProjectionConfig) -> ProjectedMatrix:
    """Approximate projection by relaxing paths through k-nearest-neighbor hops."""
    if config.mode is not ProjectionMode.APPROXIMATE:
        raise ValueError("canonical_approx requires an approximate-mode config")
    D = validate_distance_matrix(D)
    n = D.shape[0]
    if config.knn_k >= n:
        raise ValueError(f"knn_k={config.knn_k} must be smaller than n_points={n}")
    q = config.q
    s = _auto_scale(D, config.scale)
    W = to_powered(D, q, s)
    nbrs = knn_neighborhoods(D, config.knn_k)
    # rows per chunk keep the (rows, k, n) candidate tensor near 16M entries
    chunk = max(1, int(16_000_000 // max(1, config.knn_k * n)))
    for _ in range(config.iterations_l):
        new = W.copy()
        for start in range(0, n, chunk):
            rows = np.arange(start, min(n, start + chunk))
            nb = nbrs[rows]
            hop = W[rows[:, None], nb]
            cand = q_combine(hop[:, :, None], W[nb], q).min(axis=1)
            new[rows] = np.minimum(new[rows], cand)
        W = np.minimum(new, new.T)
    out = np.minimum(from_powered(W, q, s), D)
    np.fill_diagonal(out, 0.0)
    return ProjectedMatrix(out, q, s)


def project(D, config: Union[ProjectionConfig, QLike]) -> ProjectedMatrix:
    if not isinstance(config, ProjectionConfig):
        config = ProjectionConfig(q=config)
    if config.mode is ProjectionMode.EXACT:
        return canonical_exact(D, config.q, config.scale)
    return canonical_approx(D, config)


def extend_with_query(Dq: ProjectedMatrix, query_dissims, q: Optional[QLike] = None) -> np.ndarray:
    """Projected distances from an out-of-sample query to every dataset point.

    A shortest path from the query leaves it through one first hop ``u`` and
    then follows an already optimal in-dataset path, so the value to ``x`` is
    ``min_u combine(d(query, u), Dq(u, x))`` in the powered domain.
    """
    q = Dq.q if q is None else as_q(q)
    if q != Dq.q:
        raise ValueError(f"query exponent {q} does not match projection exponent {Dq.q}")
    d = np.asarray(query_dissims, dtype=np.float64)
    if d.shape != (Dq.n_points,):
        raise ValueError(f"expected {Dq.n_points} query dissimilarities, got shape {d.shape}")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("query dissimilarities must be finite and nonnegative")
    s = max(Dq.scale_used, float(d.max()) if d.size else 0.0) or 1.0
    P = Dq.powered(s)
    dp = to_powered(d, q, s)
    out = np.empty_like(d)
    chunk = max(1, 4_000_000 // max(1, d.size))
    for start in range(0, d.size, chunk):
        cols = slice(start, min(d.size, start + chunk))
        out[cols] = q_combine(dp[:, None], P[:, cols], q).min(axis=0)
    return np.minimum(from_powered(out, q, s), d)


def verify_q_triangle(M, q: QLike, tol: float = 0.0):
    """Ordered triples ``(x, y, z, amount)`` where ``d(x,y)`` breaks the q-triangle bound via ``z``."""
    q = as_q(q)
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    found = []
    for x in range(n):
        v = q_triangle_violation(M[x][:, None], M[x][None, :], M, q)
        ys, zs = np.nonzero(v > tol)
        found.extend((x, int(y), int(z), float(v[y, z])) for y, z in zip(ys, zs))
    return found


def extended_block(Dq: ProjectedMatrix, extended, q: Optional[QLike] = None) -> np.ndarray:
    """In-dataset distances of the projection over the dataset plus one query.

    ``extended`` is the output of :func:`extend_with_query`.  A path between
    two dataset points either stays inside the dataset (already optimal in
    ``Dq``) or passes through the query once, so the projected value is
    ``min(Dq(x, y), combine(E(x), E(y)))``.  Together with ``extended`` this
    block satisfies the q-triangle inequality, which the pair
    ``(Dq, extended)`` alone need not.
    """
    q = Dq.q if q is None else as_q(q)
    e = np.asarray(extended, dtype=np.float64)
    if e.shape != (Dq.n_points,):
        raise ValueError(f"expected {Dq.n_points} extended distances, got shape {e.shape}")
    s = max(Dq.scale_used, float(e.max()) if e.size else 0.0) or 1.0
    ep = to_powered(e, q, s)
    via = from_powered(q_combine(ep[:, None], ep[None, :], q), q, s)
    out = np.minimum(Dq.values, via)
    np.fill_diagonal(out, 0.0)
    return out
