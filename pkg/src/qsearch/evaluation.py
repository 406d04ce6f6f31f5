"""Ground truth, accuracy metrics and the benchmark runner."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .pipeline import IndexConfig, build_index, query, two_stage_query
from .projection import canonical_exact, extend_with_query, extended_block
from .qcore import DissimilarityKind, QLike, as_kind, as_q, distance_matrix, pairwise
from .vptree import MatrixDistance, VpTree

METHODS = ("one-stage", "two-stage", "projected-exact", "brute")


@dataclass
class GroundTruth:
    """Per query, the true k-NN ids and distances (ties by lower id)."""

    ids: np.ndarray
    distances: np.ndarray

    @property
    def k(self) -> int:
        return self.ids.shape[1]


def _rows(points, kind: DissimilarityKind):
    if kind.sparse:
        return list(points)
    return np.atleast_2d(np.asarray(points, dtype=np.float64))


def query_distances(dataset, queries, kind) -> np.ndarray:
    kind = as_kind(kind)
    return pairwise(_rows(queries, kind), _rows(dataset, kind), kind)


def brute_force_knn(dataset, queries, k: int, kind) -> GroundTruth:
    kind = as_kind(kind)
    n = len(dataset)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    D = query_distances(dataset, queries, kind)
    ids = np.empty((D.shape[0], k), dtype=np.int64)
    for r, row in enumerate(D):
        ids[r] = np.lexsort((np.arange(n), row))[:k]
    return GroundTruth(ids, np.take_along_axis(D, ids, axis=1))


def recall_at_k(truth: Sequence[int], approx: Sequence[int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    return len(set(list(truth)[:k]) & set(list(approx)[:k])) / k


def _displacement(truth: Sequence[int], approx: Sequence[int], k: int) -> float:
    truth, approx = list(truth), list(approx)
    if len(truth) != k or len(approx) != k:
        raise ValueError(f"rank order needs two lists of length k={k}, got {len(truth)} and {len(approx)}")
    pos = {t: i + 1 for i, t in enumerate(truth)}
    return float(sum(abs(i + 1 - pos.get(a, k + 1)) for i, a in enumerate(approx)))


def rank_order_abs(truth: Sequence[int], approx: Sequence[int], k: int) -> float:
    return _displacement(truth, approx, k) / k


def rank_order_rel(truth: Sequence[int], approx: Sequence[int], k: int, n: int) -> float:
    if n < 1:
        raise ValueError("n must be at least 1")
    return rank_order_abs(truth, approx, k) * 100.0 / n


def tie_aligned_truth(all_dists: np.ndarray, approx: Sequence[int], k: int) -> np.ndarray:
    """A true top-k ranking that agrees with ``approx`` wherever exact ties allow.

    Within each group of exactly equal distances, ids returned by the
    approximate method are placed first in their returned order; the rest
    follow by id.  Distances along the result are the true sorted distances.
    """
    d = np.asarray(all_dists, dtype=np.float64)
    rank = {int(a): i for i, a in enumerate(approx)}
    big = len(rank) + 1
    order = np.lexsort((np.arange(d.size), [rank.get(i, big) for i in range(d.size)], d))
    return order[:k]


def split_dataset(data, ratio: float = 0.8, seed: int = 0):
    """Seeded shuffle, then the first ``ratio`` share indexes and the rest queries."""
    n = len(data)
    if n < 2:
        raise ValueError("need at least two points to split")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    perm = np.random.default_rng(seed).permutation(n)
    cut = min(n - 1, max(1, int(round(ratio * n))))
    if isinstance(data, np.ndarray):
        return data[perm[:cut]], data[perm[cut:]]
    return [data[i] for i in perm[:cut]], [data[i] for i in perm[cut:]]


@dataclass
class MetricsReport:
    method: str
    q: str
    k: int
    recall: float
    rank_order_abs: float
    rank_order_abs_std: float
    rank_order_rel: float
    rank_order_rel_std: float
    comparisons_mean: float
    comparisons_std: float
    comparisons_max: int
    qps_excl: float
    qps_incl: float
    n_index: int
    n_queries: int
    both_mean: float = 0.0
    K: Optional[int] = None
    config: Dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def _aggregate(method, q, k, n, truth_rows, results, K=None, config=None) -> MetricsReport:
    """``truth_rows`` are full original-distance rows; ``results`` are (ids, comparisons, both, pre, search)."""
    rec, ra, rr, comps, both = [], [], [], [], []
    pre = search = 0.0
    for row, (ids, c, b, tp, ts) in zip(truth_rows, results):
        ids = list(ids)[:k]
        truth = tie_aligned_truth(row, ids, k)
        rec.append(recall_at_k(truth, ids, k))
        padded = ids + [-1 - j for j in range(k - len(ids))]
        ra.append(rank_order_abs(truth, padded, k))
        rr.append(rank_order_rel(truth, padded, k, n))
        comps.append(c)
        both.append(b)
        pre += tp
        search += ts
    nq = len(results)
    return MetricsReport(
        method=method,
        q=str(q),
        k=k,
        recall=float(np.mean(rec)),
        rank_order_abs=float(np.mean(ra)),
        rank_order_abs_std=float(np.std(ra)),
        rank_order_rel=float(np.mean(rr)),
        rank_order_rel_std=float(np.std(rr)),
        comparisons_mean=float(np.mean(comps)),
        comparisons_std=float(np.std(comps)),
        comparisons_max=int(np.max(comps)),
        qps_excl=nq / search if search > 0 else float("inf"),
        qps_incl=nq / (search + pre) if search + pre > 0 else float("inf"),
        n_index=n,
        n_queries=nq,
        both_mean=float(np.mean(both)),
        K=K,
        config=config or {},
    )


class ExactProjectedSearch:
    """Exact search in the projection of the dataset plus one query.

    The dataset matrix is projected once.  Each query gets its extended
    distances and the matching in-dataset block, and a tree is built on that
    block, so the searched distances form a genuine q-metric.
    """

    def __init__(self, D: np.ndarray, q: QLike, seed: int = 0, candidates: int = 8):
        self.q = as_q(q)
        self.P = canonical_exact(D, self.q)
        self.seed = seed
        self.candidates = candidates

    def distances(self, query_dissims: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        E = extend_with_query(self.P, query_dissims)
        return E, extended_block(self.P, E)

    def tree(self, block: np.ndarray) -> VpTree:
        n = block.shape[0]
        return VpTree.build(np.arange(n), MatrixDistance(block), q=self.q, seed=self.seed, candidates=self.candidates)

    def search(self, query_dissims: np.ndarray, k: int):
        t0 = time.perf_counter()
        E, B = self.distances(query_dissims)
        tree = self.tree(B)
        t1 = time.perf_counter()
        res = tree.search_knn(lambda i: E[i], k)
        t2 = time.perf_counter()
        return res, E, t1 - t0, t2 - t1


def run_benchmark(
    method: str,
    dataset,
    queries,
    k: int,
    q_sweep: Iterable[QLike],
    kind="euclidean",
    repetitions: int = 1,
    K: Optional[int] = None,
    index_config: Optional[dict] = None,
    seed: int = 0,
) -> List[MetricsReport]:
    """One report per q.  ``index_config`` holds extra IndexConfig fields for learned methods."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    kind = as_kind(kind)
    n = len(dataset)
    Dq = query_distances(dataset, queries, kind)
    reports = []
    for q in q_sweep:
        q = as_q(q)
        if method == "brute":
            gt_rows = []
            timings = []
            for rep in range(repetitions + 1):
                t0 = time.perf_counter()
                out = [np.lexsort((np.arange(n), row))[:k] for row in query_distances(dataset, queries, kind)]
                if rep:
                    timings.append(time.perf_counter() - t0)
            per = float(np.mean(timings)) / max(1, len(out))
            results = [(ids, n, 0, 0.0, per) for ids in out]
            reports.append(_aggregate(method, q, k, n, Dq, results, config={"kind": kind.value}))
            continue

        if method == "projected-exact":
            search = ExactProjectedSearch(distance_matrix(_rows(dataset, kind), kind), q, seed=seed)
            search.search(Dq[0], k)  # warm-up
            results = []
            for row in Dq:
                res, _, tp, ts = search.search(row, k)
                results.append((res.ids, res.comparisons, res.both_count, tp, ts))
            reports.append(_aggregate(method, q, k, n, Dq, results, config={"kind": kind.value, "seed": seed}))
            continue

        extra = dict(index_config or {})
        extra.setdefault("seed", seed)
        cfg = IndexConfig(kind=kind, q=q, **extra)
        index = build_index(dataset, cfg)
        if method == "two-stage":
            if K is None:
                raise ValueError("two-stage needs K")
            run = lambda x: two_stage_query(index, x, k, K)
        else:
            run = lambda x: query(index, x, k)
        qs = _rows(queries, kind)
        run(qs[0])  # warm-up
        results = []
        for x in qs:
            r = run(x)
            tp, ts = r.preprocess_seconds, r.search_seconds
            for _ in range(repetitions - 1):
                again = run(x)
                tp += again.preprocess_seconds
                ts += again.search_seconds
            results.append((r.ids, r.comparisons, r.both_count, tp / repetitions, ts / repetitions))
        reports.append(
            _aggregate(method, q, k, n, Dq, results, K=K if method == "two-stage" else None, config=cfg.to_dict())
        )
    return reports
