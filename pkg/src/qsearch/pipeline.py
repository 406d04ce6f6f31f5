"""Offline index construction and online querying.

Offline: sample a subset, project its dissimilarities, train the embedding on
the projected targets, embed the full dataset and build a q-pruning VP-tree
over the embedded rows.  Online: embed the query and search the tree
(one-stage), optionally reranking ``K`` candidates by the original
dissimilarity (two-stage).
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from . import formats
from .embedding import MlpParams, TrainConfig, embed_all, forward, train
from .formats import FormatError, Reader, pack_q, pack_u32
from .projection import ProjectionConfig, ProjectionMode, project
from .qcore import DissimilarityKind, QExponent, as_kind, as_q, as_sparse_set, distance_matrix, pairwise
from .vptree import EuclideanDistance, VpTree

INDEX_VERSION = 1
_DENSE, _SPARSE = 1, 2

Dataset = Union[np.ndarray, List[np.ndarray]]


@dataclass
class IndexConfig:
    kind: DissimilarityKind = DissimilarityKind.EUCLIDEAN
    q: QExponent = field(default_factory=lambda: QExponent(2.0))
    projection: Optional[ProjectionConfig] = None
    training: Optional[TrainConfig] = None
    subset_size: int = 1000
    embedding_dim: Optional[int] = None
    seed: int = 0
    # pruning exponent for the tree; None uses q
    prune_q: Optional[QExponent] = None
    vantage_candidates: int = 8

    def __post_init__(self):
        self.kind = as_kind(self.kind)
        self.q = as_q(self.q)
        if self.prune_q is not None:
            self.prune_q = as_q(self.prune_q)
        if self.projection is None:
            self.projection = ProjectionConfig(q=self.q)
        if self.training is None:
            self.training = TrainConfig(q=self.q, output_dim=self.embedding_dim, seed=self.seed)
        if self.projection.q != self.q or self.training.q != self.q:
            raise ValueError("projection and training exponents must match the index q")
        if self.embedding_dim is not None and self.embedding_dim < 1:
            raise ValueError("embedding_dim must be at least 1")
        if self.embedding_dim is not None and self.training.output_dim is None:
            self.training = dataclasses.replace(self.training, output_dim=self.embedding_dim)
        if self.subset_size < 2:
            raise ValueError("projection subset needs at least two points")

    @property
    def search_q(self) -> QExponent:
        return self.q if self.prune_q is None else self.prune_q

    def to_dict(self) -> dict:
        proj = self.projection
        tr = dataclasses.asdict(self.training)
        tr["q"] = str(self.training.q)
        tr["hidden"] = list(self.training.hidden)
        return {
            "kind": self.kind.value,
            "q": str(self.q),
            "projection": {
                "mode": proj.mode.value,
                "knn_k": proj.knn_k,
                "iterations_l": proj.iterations_l,
                "scale": proj.scale,
            },
            "training": tr,
            "subset_size": self.subset_size,
            "embedding_dim": self.embedding_dim,
            "seed": self.seed,
            "prune_q": None if self.prune_q is None else str(self.prune_q),
            "vantage_candidates": self.vantage_candidates,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IndexConfig":
        q = as_q(d["q"])
        p = d["projection"]
        tr = dict(d["training"])
        tr["q"] = as_q(tr["q"])
        tr["hidden"] = tuple(tr["hidden"])
        return cls(
            kind=d["kind"],
            q=q,
            projection=ProjectionConfig(q, ProjectionMode(p["mode"]), p["knn_k"], p["iterations_l"], p["scale"]),
            training=TrainConfig(**tr),
            subset_size=d["subset_size"],
            embedding_dim=d["embedding_dim"],
            seed=d["seed"],
            prune_q=d["prune_q"],
            vantage_candidates=d["vantage_candidates"],
        )


def _is_sparse(dataset) -> bool:
    return not isinstance(dataset, np.ndarray)


def featurize(points, kind: DissimilarityKind, n_features: int) -> np.ndarray:
    """Model inputs: dense rows as float64, sparse sets as multi-hot rows.

    Set ids at or beyond ``n_features`` have no input unit and are dropped.
    """
    if not kind.sparse:
        return np.atleast_2d(np.asarray(points, dtype=np.float64))
    X = np.zeros((len(points), n_features))
    for r, s in enumerate(points):
        ids = as_sparse_set(s)
        X[r, ids[ids < n_features]] = 1.0
    return X


@dataclass
class Index:
    params: MlpParams
    embedded: np.ndarray
    tree: VpTree
    q: QExponent
    config: IndexConfig
    dataset: Dataset
    n_features: int = 0
    subset: Optional[np.ndarray] = None

    @property
    def point_count(self) -> int:
        return self.embedded.shape[0]


@dataclass
class QueryResult:
    ids: np.ndarray
    distances: np.ndarray
    comparisons: int
    preprocess_seconds: float = 0.0
    search_seconds: float = 0.0
    both_count: int = 0
    truncated: bool = False


def _check_dataset(dataset, kind: DissimilarityKind) -> Dataset:
    if kind.sparse:
        if isinstance(dataset, np.ndarray) and dataset.ndim == 2:
            raise ValueError("jaccard indexes need sparse id sets, got a dense matrix")
        rows = [as_sparse_set(s) for s in dataset]
        if not rows:
            raise ValueError("dataset is empty")
        return rows
    X = np.asarray(dataset, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"dense dataset must be a nonempty 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("dataset has non-finite coordinates")
    return X


def build_index(dataset, config: IndexConfig) -> Index:
    kind = config.kind
    data = _check_dataset(dataset, kind)
    n = len(data)
    m = min(config.subset_size, n)
    if m < 2:
        raise ValueError("projection subset needs at least two points")
    rng = np.random.default_rng(config.seed)
    subset = np.sort(rng.choice(n, size=m, replace=False))
    if kind.sparse:
        n_features = 1 + max([int(s[-1]) for s in data if s.size] or [0])
        sub_points = [data[i] for i in subset]
    else:
        n_features = data.shape[1]
        sub_points = data[subset]
    D = distance_matrix(sub_points, kind)
    targets = project(D, config.projection)
    X = featurize(data, kind, n_features)
    params, _ = train(X[subset], targets, config.training)
    params.q = config.q
    E = embed_all(params, X)
    tree = VpTree.build(
        np.arange(n), EuclideanDistance(E), q=config.search_q, seed=config.seed, candidates=config.vantage_candidates
    )
    return Index(params, E, tree, config.q, config, data, n_features, subset)


def _embed_query(index: Index, x) -> np.ndarray:
    kind = index.config.kind
    if kind.sparse:
        return forward(index.params, featurize([x], kind, index.n_features)[0])
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (index.params.input_dim,):
        raise ValueError(f"query has shape {v.shape}, index expects ({index.params.input_dim},)")
    return forward(index.params, v)


def query(index: Index, x, k: int) -> QueryResult:
    if k < 1:
        raise ValueError("k must be at least 1")
    t0 = time.perf_counter()
    z = _embed_query(index, x)
    t1 = time.perf_counter()
    E = index.embedded

    def dist(i: int) -> float:
        diff = E[i] - z
        return math.sqrt(float(diff @ diff))

    res = index.tree.search_knn(dist, k)
    t2 = time.perf_counter()
    return QueryResult(res.ids, res.distances, res.comparisons, t1 - t0, t2 - t1, res.both_count, res.truncated)


def two_stage_query(index: Index, x, k: int, K: int) -> QueryResult:
    """Broad search for ``K`` candidates, then rerank them by the original dissimilarity."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if K < k:
        raise ValueError(f"K={K} must be at least k={k}")
    broad = query(index, x, K)
    t0 = time.perf_counter()
    cand = broad.ids
    if index.config.kind.sparse:
        d = pairwise([x], [index.dataset[i] for i in cand], index.config.kind)[0]
    else:
        d = pairwise(np.asarray(x, dtype=np.float64)[None, :], index.dataset[cand], index.config.kind)[0]
    order = np.lexsort((cand, d))[:k]
    t1 = time.perf_counter()
    return QueryResult(
        cand[order],
        d[order],
        broad.comparisons + len(cand),
        broad.preprocess_seconds,
        broad.search_seconds + (t1 - t0),
        broad.both_count,
        broad.truncated,
    )


# QIDX


def dumps_index(index: Index) -> bytes:
    cfg = json.dumps(index.config.to_dict(), sort_keys=True).encode("utf-8")
    model = formats.dumps_qmlp(index.params)
    E = index.embedded
    parts = [b"QIDX", pack_u32(INDEX_VERSION), pack_u32(len(cfg)), cfg, pack_u32(len(model)), model]
    parts += [pack_u32(E.shape[0]), pack_u32(E.shape[1]), np.ascontiguousarray(E, dtype="<f8").tobytes()]
    records = list(index.tree.preorder())
    parts += [pack_q(index.tree.q), struct.pack("<d", index.tree.scale), pack_u32(len(records))]
    parts += [struct.pack("<IdB", v, mu, int(hl) | (int(hr) << 1)) for v, mu, hl, hr in records]
    if _is_sparse(index.dataset):
        parts += [bytes([_SPARSE]), pack_u32(index.n_features), formats.dumps_qset(index.dataset)]
    else:
        X = index.dataset
        parts += [bytes([_DENSE]), pack_u32(X.shape[0]), pack_u32(X.shape[1]), np.ascontiguousarray(X, dtype="<f8").tobytes()]
    return b"".join(parts)


def loads_index(data: bytes) -> Index:
    r = Reader(data, "QIDX")
    r.magic(b"QIDX")
    version = r.u32()
    if version != INDEX_VERSION:
        raise FormatError(f"QIDX: unsupported version {version}")
    try:
        config = IndexConfig.from_dict(json.loads(r.take(r.u32()).decode("utf-8")))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"QIDX: bad config record: {exc}") from None
    params = formats.loads_qmlp(r.take(r.u32()))
    rows, cols = r.u32(), r.u32()
    E = r.array("<f8", rows * cols).reshape(rows, cols).astype(np.float64)
    tq = r.q()
    scale = r.f64()
    records = []
    for _ in range(r.u32()):
        v, mu, flags = struct.unpack("<IdB", r.take(13))
        if flags > 3:
            raise FormatError(f"QIDX: bad node flags {flags}")
        records.append((v, mu, bool(flags & 1), bool(flags & 2)))
    tag = r.u8()
    if tag == _SPARSE:
        n_features = r.u32()
        dataset = formats.loads_qset(r.take(len(r.data) - r.pos))
    elif tag == _DENSE:
        n_features = 0
        n, d = r.u32(), r.u32()
        dataset = r.array("<f8", n * d).reshape(n, d).astype(np.float64)
        n_features = d
    else:
        raise FormatError(f"QIDX: unknown dataset tag {tag}")
    r.finish()
    if len(records) != rows or len(dataset) != rows:
        raise FormatError("QIDX: tree, embedding and dataset sizes disagree")
    try:
        tree = VpTree.from_preorder(records, tq, scale, EuclideanDistance(E))
    except ValueError as exc:
        raise FormatError(f"QIDX: {exc}") from None
    if sorted(tree.vantages()) != list(range(rows)):
        raise FormatError("QIDX: tree does not index every embedded row exactly once")
    return Index(params, E, tree, config.q, config, dataset, n_features)


def save_index(index: Index, path):
    formats.write_bytes(path, dumps_index(index))


def load_index(path) -> Index:
    return loads_index(formats.read_bytes(path))
