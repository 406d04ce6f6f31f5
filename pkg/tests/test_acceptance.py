"""Acceptance suite: one check per numbered criterion.

Each check returns ``(passed, detail)``.  Under pytest every criterion is its
own test and a pass/fail line per criterion is printed in the terminal
summary; ``python tests/test_acceptance.py`` prints the same lines directly.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from qsearch import formats
from qsearch.datasets import gaussian_clusters, line_fixture, random_sets, random_symmetric, uniform_cube
from qsearch.embedding import Batch, TrainConfig, gradient_check, init_params, kink_filter, train
from qsearch.evaluation import (
    ExactProjectedSearch,
    brute_force_knn,
    rank_order_abs,
    rank_order_rel,
    recall_at_k,
    run_benchmark,
    split_dataset,
    tie_aligned_truth,
)
from qsearch.pipeline import IndexConfig, build_index, dumps_index, loads_index, query, two_stage_query
from qsearch.projection import ProjectionConfig, ProjectionMode, canonical_approx, canonical_exact, extend_with_query, verify_q_triangle
from qsearch.qcore import INF, distance_matrix, pairwise
from qsearch.vptree import brute_force_knn as brute_row

Q_SET = [1, 2, 5, 10, INF]


def _instances(count=20, n=200):
    return [random_symmetric(n, seed=s) for s in range(count)]


def check_1():
    t0 = time.perf_counter()
    bad = 0
    for D in _instances():
        for q in Q_SET:
            bad += len(verify_q_triangle(canonical_exact(D, q).values, q, 1e-9)) > 0
    elapsed = time.perf_counter() - t0
    return bad == 0 and elapsed < 30, f"{bad} of 100 projections violate; {elapsed:.1f}s (limit 30s)"


def check_2():
    worst = 0.0
    for D in _instances():
        for q in Q_SET:
            once = canonical_exact(D, q).values
            worst = max(worst, float(np.abs(canonical_exact(once, q).values - once).max()))
    return worst < 1e-9, f"max |P(P(D)) - P(D)| = {worst:.3g} (limit 1e-9)"


def check_3():
    rng = np.random.default_rng(3)
    dom = mono = homo = a2 = strict = 0
    for s in range(10):
        D = random_symmetric(60, seed=100 + s)
        P = {q: canonical_exact(D, q).values for q in Q_SET}
        dom += sum(int(np.any(P[q] > D)) for q in Q_SET)
        # pow/root round-trips differ by a few ulps on mathematically equal entries
        mono += sum(int(np.any(P[b] > P[a] * (1 + 1e-12))) for a, b in zip(Q_SET, Q_SET[1:]))
        strict += sum(int(np.any(P[b] > P[a])) for a, b in zip(Q_SET, Q_SET[1:]))
        c = float(rng.uniform(0.01, 100))
        for q in Q_SET:
            scaled = canonical_exact(c * D, q).values
            homo += int(not np.allclose(scaled, c * P[q], rtol=1e-9, atol=0))
        shrink = np.triu(rng.uniform(0.2, 1.0, D.shape), 1)
        D2 = D * (shrink + shrink.T)
        for q in Q_SET:
            a2 += int(np.any(canonical_exact(D2, q).values > P[q]))
    total = dom + mono + homo + a2
    return total == 0, f"violations: dominance {dom}, q-monotone {mono}, homogeneity {homo}, A2 {a2} over 10 instances (q-monotone without rounding slack: {strict})"


def check_4():
    misses = 0
    total = 0
    for qi, q in enumerate([1, 2, 5]):
        X = uniform_cube(500, 6, seed=40 + qi)
        P = canonical_exact(distance_matrix(X, "euclidean"), q)
        queries = uniform_cube(100, 6, seed=50 + qi)
        for d in pairwise(queries, X, "euclidean"):
            E = extend_with_query(P, d)
            orig = set(np.flatnonzero(d <= d.min() + 1e-12))
            ext = set(np.flatnonzero(E <= E.min() + 1e-12))
            misses += not orig <= ext
            total += 1
    return misses == 0, f"{total - misses}/{total} queries keep their original nearest neighbor"


def _distinct(D, rng):
    """Symmetric jitter that makes every off-diagonal entry distinct."""
    J = np.triu(rng.uniform(0, 1e-9, D.shape), 1)
    return D + J + J.T


def check_5():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    X = uniform_cube(512, 8, seed=5)
    search = ExactProjectedSearch(_distinct(distance_matrix(X, "euclidean"), rng), INF, seed=5)
    queries = uniform_cube(200, 8, seed=6)
    worst, both, wrong = 0, 0, 0
    for d in pairwise(queries, X, "euclidean") + rng.uniform(0, 1e-9, (200, 512)):
        res, E, _, _ = search.search(d, 1)
        worst = max(worst, res.comparisons)
        both += res.both_count
        wrong += E[res.ids[0]] != E.min()
    elapsed = time.perf_counter() - t0
    ok = worst <= 9 and both == 0 and elapsed < 60
    return ok, f"max comparisons {worst} (limit 9), Both decisions {both}, wrong results {wrong}, {elapsed:.1f}s"


def check_6():
    mismatches = 0
    total = 0
    for seed in range(5):
        X = gaussian_clusters(300, 5, clusters=6, seed=60 + seed)
        queries = gaussian_clusters(100, 5, clusters=6, seed=70 + seed)
        search = ExactProjectedSearch(distance_matrix(X, "euclidean"), [1, 2, 5, INF, 2][seed], seed=seed)
        for d in pairwise(queries, X, "euclidean"):
            E, B = search.distances(d)
            tree = search.tree(B)
            for k in (1, 5, 10):
                res = tree.search_knn(lambda i: E[i], k)
                truth = tie_aligned_truth(E, res.ids, k)
                mismatches += set(res.ids.tolist()) != set(truth.tolist())
                total += 1
    return mismatches == 0, f"{total - mismatches}/{total} searches match brute force (5 seeds x 100 queries x k in 1,5,10)"


def check_7():
    limit_err = 0.0
    outside = 0
    for s in range(6):
        n = [8, 16, 24, 32, 48, 64][s]
        D = random_symmetric(n, seed=700 + s)
        for q in Q_SET:
            exact = canonical_exact(D, q).values
            full = canonical_approx(D, ProjectionConfig(q, ProjectionMode.APPROXIMATE, n - 1, n - 2)).values
            limit_err = max(limit_err, float(np.abs(full - exact).max()))
            for k in (1, 3, n // 2):
                for l in (0, 1, 2, 4):
                    A = canonical_approx(D, ProjectionConfig(q, ProjectionMode.APPROXIMATE, k, l)).values
                    outside += int(np.any(A < exact - 1e-12) or np.any(A > D))
    return limit_err < 1e-9 and outside == 0, f"full-graph limit error {limit_err:.3g} (limit 1e-9); {outside} runs outside [exact, D]"


def check_8():
    rng = np.random.default_rng(8)
    params = init_params((4, 16, 16, 3), seed=8)
    X = rng.standard_normal((30, 4))
    T = np.abs(rng.standard_normal((30, 30)))
    T = (T + T.T) / 2
    worst = 0.0
    control = math.inf
    for q in (1, 2, 5, INF):
        batch = Batch.from_indices(X, T, rng.integers(30, size=(24, 2)), rng.integers(30, size=(24, 3)))
        batch = kink_filter(params, batch, q)
        worst = max(worst, gradient_check(params, batch, 1e-5, 1.0, 0.3, q, n_coords=400, seed=1))
        corrupt = lambda g: [a * 1.05 + 1e-3 for a in g]
        control = min(control, gradient_check(params, batch, 1e-5, 1.0, 0.3, q, n_coords=400, seed=1, corrupt=corrupt))
    return worst < 1e-4 and control > 1e-2, f"max rel error {worst:.3g} (limit 1e-4); corrupted control {control:.3g} (needs > 1e-2)"


def check_9():
    X = line_fixture(200, 2, seed=9)
    t0 = time.perf_counter()
    _, report = train(X, cdist(X, X), TrainConfig(q=2, epochs=300, seed=9))
    elapsed = time.perf_counter() - t0
    first, last = report.stress[0], report.stress[-1]
    ok = last <= 0.5 * first and last < 1e-2 and elapsed < 60
    return ok, f"stress {first:.4g} -> {last:.4g} (needs <= 50% and < 1e-2); {elapsed:.1f}s"


def check_10():
    X = gaussian_clusters(1000, 8, clusters=12, seed=10)
    queries = gaussian_clusters(100, 8, clusters=12, seed=11)
    reports = run_benchmark("projected-exact", X, queries, 1, [1, 2, 5, INF], seed=10)
    means = [r.comparisons_mean for r in reports]
    decreasing = all(b < a for a, b in zip(means, means[1:]))
    finite_rank = [r.rank_order_abs for r in reports[:3]]
    ok = decreasing and means[-1] <= 10 and all(v == 0 for v in finite_rank)
    trail = ", ".join(f"q={r.q}: {r.comparisons_mean:.2f}" for r in reports)
    return ok, f"mean comparisons {trail} (q=inf limit 10); rank order at finite q {finite_rank}"


def check_11():
    cases = [
        (recall_at_k(list("abcde"), list("abcde"), 5), 1.0),
        (recall_at_k(list("abc"), list("xyz"), 3), 0.0),
        (recall_at_k(list("abcde"), list("acxyz"), 5), 0.4),
        (rank_order_abs(list("abc"), list("abc"), 3), 0.0),
        (rank_order_abs(list("abc"), list("bac"), 3), 2 / 3),
        (rank_order_abs(["a"], ["z"], 1), 1.0),
        (rank_order_rel(list("abc"), list("abc"), 3, 50), 0.0),
        (rank_order_rel(["a"], ["z"], 1, 100), 1.0),
        (rank_order_rel(list("abc"), list("bac"), 3, 40), rank_order_abs(list("abc"), list("bac"), 3) * 100 / 40),
    ]
    bad = sum(got != want for got, want in cases)
    return bad == 0, f"{len(cases) - bad}/{len(cases)} unit values exact"


def _fixtures():
    dense = gaussian_clusters(400, 6, clusters=8, seed=12)
    sets = random_sets(300, 60, seed=12)
    return [
        ("dense-euclidean", dense[:350], dense[350:], "euclidean"),
        ("dense-cosine", dense[:350] + 2.0, dense[350:] + 2.0, "cosine"),
        ("sparse-jaccard", sets[:260], sets[260:], "jaccard"),
    ]


def check_12():
    fails = []
    non_monotone = 0
    for name, data, queries, kind in _fixtures():
        index = build_index(data, IndexConfig(kind=kind, q=2, subset_size=200, seed=12, training=TrainConfig(q=2, epochs=60, seed=12)))
        n = len(data)
        gt = brute_force_knn(data, queries, 10, kind)
        for j, x in enumerate(queries):
            for k in (1, 5, 10):
                ids = two_stage_query(index, x, k, n).ids
                truth = tie_aligned_truth(pairwise_row(data, x, kind), ids, k)
                if recall_at_k(truth, ids, k) != 1.0:
                    fails.append((name, j, k))
            prev = -1.0
            for K in (5, 10, 20, 40, 80, 160, n):
                r = recall_at_k(gt.ids[j, :5], two_stage_query(index, x, 5, K).ids, 5)
                non_monotone += r < prev
                prev = r
    ok = not fails and non_monotone == 0
    return ok, f"K=n recall misses {len(fails)}; recall decreases as K grows: {non_monotone}"


def pairwise_row(data, x, kind):
    if isinstance(data, list):
        return pairwise([x], data, kind)[0]
    return pairwise(np.asarray(x)[None, :], data, kind)[0]


def check_13(tmp: Path):
    rng = np.random.default_rng(13)
    bad = []
    X = rng.standard_normal((20, 7)).astype(np.float32)
    if not np.array_equal(formats.loads_qvec(formats.dumps_qvec(X)).view(np.uint32), X.view(np.uint32)):
        bad.append("QVEC")
    sets = random_sets(25, 1000, seed=13)
    if formats.dumps_qset(formats.loads_qset(formats.dumps_qset(sets))) != formats.dumps_qset(sets):
        bad.append("QSET")
    for q in (2.5, INF):
        P = canonical_exact(random_symmetric(15, seed=13), q)
        M, q2 = formats.loads_qmat(formats.dumps_qmat(P))
        if not (np.array_equal(M.view(np.uint64), P.values.view(np.uint64)) and q2 == P.q):
            bad.append(f"QMAT q={q}")
    params, _ = train(X.astype(np.float64), cdist(X, X), TrainConfig(q=5, epochs=3, seed=13))
    blob = formats.dumps_qmlp(params)
    if formats.dumps_qmlp(formats.loads_qmlp(blob)) != blob:
        bad.append("QMLP")
    for name, data, queries, kind in _fixtures():
        index = build_index(data, IndexConfig(kind=kind, q=5, subset_size=120, seed=13, training=TrainConfig(q=5, epochs=20, seed=13)))
        path = tmp / f"{name}.qidx"
        formats.write_bytes(path, dumps_index(index))
        loaded = loads_index(formats.read_bytes(path))
        if dumps_index(loaded) != formats.read_bytes(path):
            bad.append(f"QIDX bytes {name}")
        for x in queries[:20]:
            a, b = query(index, x, 5), query(loaded, x, 5)
            if not (np.array_equal(a.ids, b.ids) and np.array_equal(a.distances, b.distances) and a.comparisons == b.comparisons):
                bad.append(f"QIDX query {name}")
                break
    return not bad, "all round trips bit-exact" if not bad else f"failed: {bad}"


def check_14():
    X = gaussian_clusters(2000, 16, clusters=20, seed=14)
    data, queries = split_dataset(X, 0.8, seed=14)
    queries = queries[:200]
    gt = brute_force_knn(data, queries, 1, "euclidean")
    comps = {}
    recall = None
    for q in (1, 5):
        index = build_index(data, IndexConfig(q=q, subset_size=1000, seed=14))
        comps[q] = float(np.mean([query(index, x, 1).comparisons for x in queries]))
        if q == 5:
            hits = []
            for j, x in enumerate(queries):
                ids = two_stage_query(index, x, 1, 32).ids
                truth = tie_aligned_truth(pairwise_row(data, x, "euclidean"), ids, 1)
                hits.append(recall_at_k(truth, ids, 1))
            recall = float(np.mean(hits))
    ok = comps[5] < comps[1] and recall >= 0.9
    return ok, f"mean comparisons q=1 {comps[1]:.1f}, q=5 {comps[5]:.1f}; q=5 two-stage K=32 recall@1 {recall:.3f} (needs >= 0.9)"


TITLES = {
    1: "q-triangle satisfaction",
    2: "idempotence",
    3: "order-theoretic properties",
    4: "nearest-neighbor preservation",
    5: "logarithmic comparisons at q=inf (m=512)",
    6: "q-VP-tree exactness",
    7: "approximate projection limit",
    8: "gradient correctness",
    9: "training sanity",
    10: "desk-scale comparison trend",
    11: "metric unit values",
    12: "two-stage completeness",
    13: "serialization",
    14: "learned-pipeline trend",
}


def _line(n, ok, detail):
    return f"criterion {n}: {'PASS' if ok else 'FAIL'} [{TITLES[n]}] {detail}"


def _run(n, tmp_path=None):
    from conftest import ACCEPTANCE_LINES

    fn = globals()[f"check_{n}"]
    ok, detail = fn(tmp_path) if n == 13 else fn()
    line = _line(n, ok, detail)
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok, line


class TestAcceptance:
    @pytest.mark.parametrize("n", range(1, 15), ids=lambda n: f"criterion_{n}")
    def test_criterion(self, n, tmp_path):
        ok, line = _run(n, tmp_path)
        assert ok, line


if __name__ == "__main__":
    import tempfile

    sys.path.insert(0, str(Path(__file__).parent))
    with tempfile.TemporaryDirectory() as d:
        results = [_run(n, Path(d))[0] for n in range(1, 15)]
    sys.exit(0 if all(results) else 1)
