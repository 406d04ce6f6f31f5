"""Vantage-point tree with q-power pruning.

Each node stores a vantage point and a split radius ``mu``; the left subtree
holds points within ``mu`` of the vantage and the right subtree points
strictly beyond it.  A search descends into one side only when the q-triangle
inequality proves the other side cannot hold anything closer than the current
k-th best distance ``tau``.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .qcore import QLike, as_q


class Decision(enum.Enum):
    LEFT_ONLY = "left"
    BOTH = "both"
    RIGHT_ONLY = "right"


def prune_decision(d: float, mu: float, tau: float, q: QLike, scale: float = 1.0) -> Decision:
    """Which children of a node may contain a point closer than ``tau``.

    ``scale`` divides all three radii before powering so large finite ``q``
    stays in floating range; it does not change the outcome.
    """
    q = as_q(q)
    if math.isinf(tau):
        return Decision.BOTH
    if q.is_inf:
        # right points lie strictly beyond mu >= d: each is farther than mu >= tau
        if max(d, tau) <= mu:
            return Decision.LEFT_ONLY
        # left points lie within mu < d: each is at distance >= d >= tau
        if d > mu and d >= tau:
            return Decision.RIGHT_ONLY
        return Decision.BOTH
    p = q.value
    dq, mq, tq = (d / scale) ** p, (mu / scale) ** p, (tau / scale) ** p
    if dq <= mq - tq:
        return Decision.LEFT_ONLY
    if dq > mq + tq:
        return Decision.RIGHT_ONLY
    return Decision.BOTH


class MatrixDistance:
    """Distance binding backed by a precomputed square matrix."""

    def __init__(self, M: np.ndarray):
        self.M = np.asarray(M, dtype=np.float64)

    def __call__(self, v: int, others: np.ndarray) -> np.ndarray:
        return self.M[v, others]


class EuclideanDistance:
    """Distance binding over the rows of a coordinate matrix."""

    def __init__(self, X: np.ndarray):
        self.X = np.asarray(X, dtype=np.float64)

    def __call__(self, v: int, others: np.ndarray) -> np.ndarray:
        diff = self.X[others] - self.X[v]
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))


@dataclass
class VpNode:
    vantage: int
    mu: float = 0.0
    left: Optional["VpNode"] = None
    right: Optional["VpNode"] = None


@dataclass
class SearchResult:
    ids: np.ndarray
    distances: np.ndarray
    comparisons: int
    both_count: int = 0
    truncated: bool = False


class _SearchState:
    def __init__(self, k: int):
        self.k = k
        self.heap: List[Tuple[float, int]] = []  # (-distance, -id): worst on top
        self.comparisons = 0
        self.both_count = 0

    @property
    def tau(self) -> float:
        if len(self.heap) < self.k:
            return math.inf
        return -self.heap[0][0]

    def offer(self, idx: int, d: float):
        item = (-d, -idx)
        if len(self.heap) < self.k:
            heapq.heappush(self.heap, item)
        elif item > self.heap[0]:
            # lexicographic (distance, id) order keeps lower ids on exact ties
            heapq.heapreplace(self.heap, item)


class VpTree:
    def __init__(self, root: Optional[VpNode], point_count: int, q: QLike, scale: float = 1.0, distance=None):
        self.root = root
        self.point_count = point_count
        self.q = as_q(q)
        self.scale = float(scale) if scale > 0 else 1.0
        self.distance = distance

    @classmethod
    def build(
        cls,
        point_indices: Sequence[int],
        distance: Callable[[int, np.ndarray], np.ndarray],
        q: QLike = 1,
        seed: int = 0,
        vantage: str = "random",
        candidates: int = 8,
    ) -> "VpTree":
        """Build a tree over ``point_indices``.

        ``vantage`` is ``"random"`` (seeded uniform choice) or ``"first"``
        (the first remaining index, for hand-traceable trees).  The split
        never separates points at equal distance from the vantage: left gets
        every point with distance <= mu and right every point with distance
        > mu, where mu is the distinct distance whose cut lands closest to
        ``ceil((n - 1) / 2)`` left points.  Under the random policy up to
        ``candidates`` vantages are drawn and the best-balanced one is kept.
        """
        idx = np.asarray(point_indices, dtype=np.int64)
        if np.unique(idx).size != idx.size:
            raise ValueError("point indices must be distinct")
        if vantage not in ("random", "first"):
            raise ValueError(f"unknown vantage policy {vantage!r}")
        rng = np.random.default_rng(seed)
        tries = max(1, candidates) if vantage == "random" else 1
        top = [0.0]

        def split(P: np.ndarray, pick: int):
            v = int(P[pick])
            rest = np.delete(P, pick)
            d = np.asarray(distance(v, rest), dtype=np.float64)
            order = np.lexsort((rest, d))
            ds = d[order]
            target = (rest.size + 1) // 2
            cuts = np.append(np.flatnonzero(np.diff(ds) > 0) + 1, rest.size)
            n_left = int(cuts[np.argmin(np.abs(cuts - target))])
            return abs(n_left - target), v, rest, d, order, n_left

        def grow(P: np.ndarray) -> Optional[VpNode]:
            if P.size == 0:
                return None
            if P.size == 1:
                return VpNode(int(P[0]))
            best = None
            for _ in range(min(tries, P.size)):
                pick = int(rng.integers(P.size)) if vantage == "random" else 0
                trial = split(P, pick)
                if best is None or trial[0] < best[0]:
                    best = trial
                if best[0] == 0:
                    break
            _, v, rest, d, order, n_left = best
            top[0] = max(top[0], float(d.max()))
            node = VpNode(v, float(d[order[n_left - 1]]))
            node.left = grow(rest[order[:n_left]])
            node.right = grow(rest[order[n_left:]])
            return node

        root = grow(idx)
        return cls(root, int(idx.size), q, top[0], distance)

    def search_knn(self, query_dist: Callable[[int], float], k: int = 1, prune: bool = True) -> SearchResult:
        """k nearest neighbors of a query given its distance to any indexed point."""
        if k < 1:
            raise ValueError("k must be at least 1")
        truncated = k > self.point_count
        state = _SearchState(min(k, max(1, self.point_count)))
        q, scale = self.q, self.scale

        def visit(node: Optional[VpNode]):
            if node is None:
                return
            d = float(query_dist(node.vantage))
            state.comparisons += 1
            state.offer(node.vantage, d)
            if node.left is None and node.right is None:
                return
            dec = prune_decision(d, node.mu, state.tau, q, scale) if prune else Decision.BOTH
            if dec is Decision.LEFT_ONLY:
                visit(node.left)
            elif dec is Decision.RIGHT_ONLY:
                visit(node.right)
            else:
                if node.left is not None and node.right is not None:
                    state.both_count += 1
                if d <= node.mu:
                    visit(node.left)
                    if not prune or prune_decision(d, node.mu, state.tau, q, scale) is not Decision.LEFT_ONLY:
                        visit(node.right)
                else:
                    visit(node.right)
                    if not prune or prune_decision(d, node.mu, state.tau, q, scale) is not Decision.RIGHT_ONLY:
                        visit(node.left)

        visit(self.root)
        found = sorted((-nd, -ni) for nd, ni in state.heap)
        ids = np.array([i for _, i in found], dtype=np.int64)
        dists = np.array([d for d, _ in found], dtype=np.float64)
        return SearchResult(ids, dists, state.comparisons, state.both_count, truncated)

    def preorder(self) -> Iterator[Tuple[int, float, bool, bool]]:
        """Node records ``(vantage, mu, has_left, has_right)`` in preorder."""
        stack = [self.root] if self.root is not None else []
        while stack:
            node = stack.pop()
            yield node.vantage, node.mu, node.left is not None, node.right is not None
            if node.right is not None:
                stack.append(node.right)
            if node.left is not None:
                stack.append(node.left)

    @classmethod
    def from_preorder(cls, records, q: QLike, scale: float, distance=None) -> "VpTree":
        it = iter(records)
        count = [0]

        def take() -> VpNode:
            try:
                v, mu, has_left, has_right = next(it)
            except StopIteration:
                raise ValueError("tree records end early") from None
            count[0] += 1
            node = VpNode(int(v), float(mu))
            if has_left:
                node.left = take()
            if has_right:
                node.right = take()
            return node

        records = list(records)
        it = iter(records)
        root = take() if records else None
        if count[0] != len(records):
            raise ValueError("tree records have trailing entries")
        return cls(root, len(records), q, scale, distance)

    def vantages(self) -> List[int]:
        return [v for v, _, _, _ in self.preorder()]

    def depth(self) -> int:
        def h(node):
            return 0 if node is None else 1 + max(h(node.left), h(node.right))

        return h(self.root)


def brute_force_knn(dists: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """k smallest entries of a distance vector, ties by lower index."""
    dists = np.asarray(dists, dtype=np.float64)
    order = np.lexsort((np.arange(dists.size), dists))[:k]
    return order, dists[order]
