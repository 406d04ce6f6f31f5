import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qsearch.datasets import gaussian_clusters, random_sets, uniform_cube
from qsearch.evaluation import (
    MetricsReport,
    brute_force_knn,
    rank_order_abs,
    rank_order_rel,
    recall_at_k,
    run_benchmark,
    split_dataset,
    tie_aligned_truth,
)
from qsearch.qcore import INF, DimensionMismatch, dissimilarity

ids = st.lists(st.integers(0, 30), min_size=1, max_size=10, unique=True)


class TestGroundTruth:
    def test_query_equal_to_point(self):
        X = uniform_cube(40, 3, seed=1)
        gt = brute_force_knn(X, X[[7]], 1, "euclidean")
        assert gt.ids[0, 0] == 7 and gt.distances[0, 0] == 0

    def test_matches_naive_double_loop(self):
        X = uniform_cube(50, 4, seed=2)
        Q = uniform_cube(10, 4, seed=3)
        gt = brute_force_knn(X, Q, 5, "manhattan")
        for j, q in enumerate(Q):
            d = [dissimilarity(q, x, "manhattan") for x in X]
            order = sorted(range(50), key=lambda i: (d[i], i))[:5]
            assert gt.ids[j].tolist() == order

    def test_permutation_invariance(self):
        X = uniform_cube(60, 3, seed=4)
        Q = uniform_cube(8, 3, seed=5)
        perm = np.random.default_rng(6).permutation(60)
        a = brute_force_knn(X, Q, 4, "euclidean")
        b = brute_force_knn(X[perm], Q, 4, "euclidean")
        assert np.array_equal(perm[b.ids], a.ids)

    def test_ties_by_lower_id(self):
        X = np.array([[1.0, 0], [0, 1.0], [-1.0, 0], [3, 3]])
        assert brute_force_knn(X, np.zeros((1, 2)), 3, "euclidean").ids[0].tolist() == [0, 1, 2]

    def test_sparse_and_errors(self):
        sets = random_sets(30, 20, seed=7)
        gt = brute_force_knn(sets, sets[:3], 1, "jaccard")
        assert gt.distances[:, 0].tolist() == [0, 0, 0]
        with pytest.raises(DimensionMismatch):
            brute_force_knn(uniform_cube(5, 3), uniform_cube(2, 4), 1, "euclidean")
        with pytest.raises(ValueError):
            brute_force_knn(uniform_cube(5, 3), uniform_cube(2, 3), 6, "euclidean")


class TestMetrics:
    def test_unit_values(self):
        assert recall_at_k(list("abcde"), list("abcde"), 5) == 1.0
        assert recall_at_k(list("abc"), list("xyz"), 3) == 0.0
        assert recall_at_k(list("abcde"), list("acxyz"), 5) == 0.4
        assert rank_order_abs(list("abc"), list("abc"), 3) == 0
        assert rank_order_abs(list("abc"), list("bac"), 3) == 2 / 3
        assert rank_order_abs(["a"], ["z"], 1) == 1
        assert rank_order_rel(["a"], ["z"], 1, 100) == 1.0

    def test_short_approx_counts_misses(self):
        assert recall_at_k([1, 2, 3], [1], 3) == pytest.approx(1 / 3)

    def test_errors(self):
        with pytest.raises(ValueError):
            recall_at_k([1], [1], 0)
        with pytest.raises(ValueError):
            rank_order_abs([1, 2], [1], 2)
        with pytest.raises(ValueError):
            rank_order_rel([1], [1], 1, 0)

    @given(ids)
    def test_self_agreement(self, xs):
        k = len(xs)
        assert recall_at_k(xs, xs, k) == 1 and rank_order_abs(xs, xs, k) == 0

    @given(ids, st.integers(0, 1000), st.integers(1, 500))
    def test_relative_is_scaled_absolute(self, xs, seed, n):
        ys = list(np.random.default_rng(seed).permutation(xs + [99, 98])[: len(xs)])
        k = len(xs)
        assert rank_order_rel(xs, ys, k, n) == rank_order_abs(xs, ys, k) * 100 / n
        assert 0 <= rank_order_rel(xs, ys, k, n) <= 100 or n < k

    def test_tie_alignment(self):
        d = np.array([0.5, 0.2, 0.2, 0.2, 0.9])
        assert tie_aligned_truth(d, [3, 1], 2).tolist() == [3, 1]
        assert tie_aligned_truth(d, [4], 2).tolist() == [1, 2]
        assert tie_aligned_truth(d, [2, 0], 4).tolist() == [2, 1, 3, 0]


class TestSplit:
    def test_sizes_and_determinism(self):
        X = np.arange(20).reshape(10, 2)
        a, b = split_dataset(X, 0.8, seed=1)
        assert len(a) == 8 and len(b) == 2
        a2, b2 = split_dataset(X, 0.8, seed=1)
        assert np.array_equal(a, a2) and np.array_equal(b, b2)
        assert sorted(map(tuple, np.vstack([a, b]).tolist())) == sorted(map(tuple, X.tolist()))

    def test_lists_and_errors(self):
        a, b = split_dataset([[1], [2], [3], [4]], 0.5, seed=0)
        assert len(a) == 2 and len(b) == 2
        with pytest.raises(ValueError):
            split_dataset(np.zeros((1, 2)), 0.5)
        with pytest.raises(ValueError):
            split_dataset(np.zeros((5, 2)), 1.0)


class TestBenchmark:
    def test_brute(self):
        X = uniform_cube(80, 3, seed=8)
        [r] = run_benchmark("brute", X, uniform_cube(10, 3, seed=9), 3, [2])
        assert r.recall == 1.0 and r.rank_order_abs == 0 and r.comparisons_mean == 80 == r.comparisons_max

    def test_projected_exact_trend(self):
        X = gaussian_clusters(300, 4, clusters=5, seed=10)
        Q = gaussian_clusters(30, 4, clusters=5, seed=11)
        reports = run_benchmark("projected-exact", X, Q, 1, [1, 2, INF], seed=1)
        assert reports[0].comparisons_mean > reports[-1].comparisons_mean
        assert all(r.rank_order_abs == 0 for r in reports[:2])
        assert reports[-1].both_mean == 0

    def test_learned_methods(self):
        X = gaussian_clusters(200, 4, clusters=4, seed=12)
        Q = gaussian_clusters(10, 4, clusters=4, seed=13)
        extra = {"subset_size": 100}
        one = run_benchmark("one-stage", X, Q, 1, [2], index_config=extra)[0]
        two = run_benchmark("two-stage", X, Q, 1, [2], K=200, index_config=extra)[0]
        assert two.recall == 1.0 and two.K == 200 and one.K is None
        assert one.qps_excl >= one.qps_incl > 0

    def test_report_json(self):
        X = uniform_cube(20, 2, seed=14)
        [r] = run_benchmark("brute", X, X[:3], 1, [INF])
        rec = json.loads(r.to_json())
        for key in ("method", "q", "k", "recall", "rank_order_abs", "rank_order_rel", "comparisons_mean", "comparisons_max", "qps_excl", "qps_incl"):
            assert key in rec
        assert rec["q"] == "inf"

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            run_benchmark("hnsw", uniform_cube(5, 2), uniform_cube(1, 2), 1, [2])

    def test_aggregation_order_independent(self):
        X = gaussian_clusters(150, 3, clusters=3, seed=15)
        Q = gaussian_clusters(12, 3, clusters=3, seed=16)
        a = run_benchmark("projected-exact", X, Q, 1, [2])[0]
        b = run_benchmark("projected-exact", X, Q[::-1], 1, [2])[0]
        assert a.comparisons_mean == pytest.approx(b.comparisons_mean) and a.recall == b.recall
