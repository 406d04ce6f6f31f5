"""Dissimilarity kernels and q-exponent arithmetic.

Multi-hop arithmetic for a finite exponent is done on *powered* values
``(d / scale) ** q``; paths combine by addition.  For ``q = inf`` values stay
unpowered and combine by ``max``.  Roots are only taken at API boundaries.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist


class DissimilarityError(ValueError):
    """Base class for invalid inputs to a dissimilarity kernel."""


class DimensionMismatch(DissimilarityError):
    pass


class ZeroNormInput(DissimilarityError):
    pass


class ConstantVectorInput(DissimilarityError):
    pass


class WrongRepresentation(DissimilarityError):
    pass


@dataclass(frozen=True, order=True)
class QExponent:
    """Order of a q-metric: a finite real >= 1 or infinity."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if math.isnan(v) or v < 1:
            raise ValueError(f"q must be >= 1 or infinity, got {self.value!r}")
        object.__setattr__(self, "value", v)

    @property
    def is_inf(self) -> bool:
        return math.isinf(self.value)

    @classmethod
    def parse(cls, text: str) -> "QExponent":
        t = text.strip().lower()
        if t in ("inf", "infinity", "+inf", "∞"):
            return cls(math.inf)
        return cls(float(t))

    def __str__(self):
        return "inf" if self.is_inf else f"{self.value:g}"


INF = QExponent(math.inf)

QLike = Union[QExponent, float, int, str]


def as_q(q: QLike) -> QExponent:
    if isinstance(q, QExponent):
        return q
    if isinstance(q, str):
        return QExponent.parse(q)
    return QExponent(q)


class DissimilarityKind(enum.Enum):
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"
    COSINE = "cosine"
    CORRELATION = "correlation"
    JACCARD = "jaccard"

    @property
    def sparse(self) -> bool:
        return self is DissimilarityKind.JACCARD

    @classmethod
    def parse(cls, text: str) -> "DissimilarityKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown dissimilarity {text!r}") from None


def as_kind(kind) -> DissimilarityKind:
    if isinstance(kind, DissimilarityKind):
        return kind
    return DissimilarityKind.parse(kind)


def as_sparse_set(ids) -> np.ndarray:
    """Validate and return a sorted, duplicate-free id array."""
    if isinstance(ids, (set, frozenset)):
        ids = sorted(ids)
    arr = np.asarray(ids)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    if arr.ndim != 1 or arr.dtype.kind not in "ui":
        raise WrongRepresentation("sparse set must be a one-dimensional sequence of integer ids")
    arr = arr.astype(np.int64)
    if arr[0] < 0 or np.any(np.diff(arr) <= 0):
        raise WrongRepresentation("sparse set ids must be nonnegative and strictly increasing")
    return arr


def _jaccard_sets(a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0 and b.size == 0:
        return 0.0
    inter = np.intersect1d(a, b, assume_unique=True).size
    union = a.size + b.size - inter
    return 1.0 - inter / union


def dissimilarity(a, b, kind) -> float:
    """Dissimilarity between two points.

    Dense kinds take real vectors; ``jaccard`` takes sparse id sets
    (python sets or sorted integer sequences).
    """
    kind = as_kind(kind)
    if kind.sparse:
        return _jaccard_sets(as_sparse_set(a), as_sparse_set(b))

    if isinstance(a, (set, frozenset)) or isinstance(b, (set, frozenset)):
        raise WrongRepresentation(f"{kind.value} requires dense vectors")
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionMismatch(f"shapes {x.shape} and {y.shape} differ")
    if kind is DissimilarityKind.EUCLIDEAN:
        return float(math.sqrt(np.sum((x - y) ** 2)))
    if kind is DissimilarityKind.MANHATTAN:
        return float(np.sum(np.abs(x - y)))
    if kind is DissimilarityKind.CORRELATION:
        x = x - x.mean()
        y = y - y.mean()
        if not np.any(x) or not np.any(y):
            raise ConstantVectorInput("correlation is undefined for a constant vector")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ZeroNormInput(f"{kind.value} is undefined for a zero vector")
    # clip keeps d(a, a) >= 0 under rounding
    return float(max(0.0, 1.0 - np.dot(x, y) / (nx * ny)))


def _check_dense_rows(X: np.ndarray, kind: DissimilarityKind):
    if kind is DissimilarityKind.CORRELATION:
        c = X - X.mean(axis=1, keepdims=True)
        if np.any(~np.any(c != 0, axis=1)):
            raise ConstantVectorInput("correlation is undefined for a constant vector")
    elif kind is DissimilarityKind.COSINE:
        if np.any(~np.any(X != 0, axis=1)):
            raise ZeroNormInput("cosine is undefined for a zero vector")


_CDIST_NAME = {
    DissimilarityKind.EUCLIDEAN: "euclidean",
    DissimilarityKind.MANHATTAN: "cityblock",
    DissimilarityKind.COSINE: "cosine",
    DissimilarityKind.CORRELATION: "correlation",
}


def sets_to_csr(sets: Sequence[np.ndarray], n_features: int | None = None):
    from scipy.sparse import csr_matrix

    lengths = np.array([len(s) for s in sets], dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(lengths)])
    indices = np.concatenate([np.asarray(s, dtype=np.int64) for s in sets]) if len(sets) else np.zeros(0, np.int64)
    if n_features is None:
        n_features = int(indices.max()) + 1 if indices.size else 1
    data = np.ones(indices.size, dtype=np.float64)
    return csr_matrix((data, indices, indptr), shape=(len(sets), n_features))


def pairwise(A, B, kind) -> np.ndarray:
    """Matrix of dissimilarities between the rows of ``A`` and ``B``."""
    kind = as_kind(kind)
    if kind.sparse:
        if isinstance(A, np.ndarray) and A.ndim == 2 or isinstance(B, np.ndarray) and B.ndim == 2:
            raise WrongRepresentation("jaccard requires sparse id sets, got a dense matrix")
        A = [as_sparse_set(s) for s in A]
        B = [as_sparse_set(s) for s in B]
        width = 1 + max([int(s[-1]) for s in A + B if s.size] or [0])
        SA, SB = sets_to_csr(A, width), sets_to_csr(B, width)
        inter = (SA @ SB.T).toarray()
        la = np.array([s.size for s in A], dtype=np.float64)
        lb = np.array([s.size for s in B], dtype=np.float64)
        union = la[:, None] + lb[None, :] - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            out = 1.0 - inter / union
        out[union == 0] = 0.0
        return out

    if isinstance(A, list) and A and not np.isscalar(A[0]) and isinstance(A[0], (set, frozenset)):
        raise WrongRepresentation(f"{kind.value} requires dense vectors")
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"dimensions {A.shape[1]} and {B.shape[1]} differ")
    _check_dense_rows(A, kind)
    _check_dense_rows(B, kind)
    out = cdist(A, B, _CDIST_NAME[kind])
    np.maximum(out, 0.0, out=out)
    return out


def distance_matrix(X, kind) -> np.ndarray:
    """Symmetric pairwise matrix with an exact zero diagonal."""
    D = pairwise(X, X, kind)
    D = np.minimum(D, D.T)
    np.fill_diagonal(D, 0.0)
    return D


def validate_distance_matrix(D, *, atol: float = 0.0) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise ValueError("distance matrix has non-finite entries")
    if np.any(D < 0):
        raise ValueError("distance matrix has negative entries")
    if np.any(np.abs(D - D.T) > atol):
        raise ValueError("distance matrix is not symmetric")
    if np.any(np.diag(D) != 0):
        raise ValueError("distance matrix has a nonzero diagonal")
    return D


def q_path_length(edges: Sequence[float], q: QLike) -> float:
    """q-norm of the edge dissimilarities along a path (max for q = inf)."""
    q = as_q(q)
    e = np.asarray(edges, dtype=np.float64)
    if e.size == 0:
        raise ValueError("path has no edges")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("edge dissimilarities must be finite and nonnegative")
    top = float(e.max())
    if q.is_inf or e.size == 1 or top == 0:
        return top
    return top * float(np.sum((e / top) ** q.value) ** (1.0 / q.value))


def q_combine(a, b, q: QLike):
    """Join two powered path lengths: ``a + b`` for finite q, ``max`` at infinity."""
    q = as_q(q)
    if q.is_inf:
        return np.maximum(a, b)
    return a + b


def to_powered(values, q: QLike, scale: float = 1.0):
    """``(values / scale) ** q``; identity at infinity, where max/min need no guard."""
    q = as_q(q)
    v = np.asarray(values, dtype=np.float64)
    if q.is_inf:
        return v.copy()
    return (v / scale) ** q.value


def from_powered(values, q: QLike, scale: float = 1.0):
    q = as_q(q)
    v = np.asarray(values, dtype=np.float64)
    if q.is_inf:
        return v.copy()
    return v ** (1.0 / q.value) * scale


def q_triangle_violation(dxy, dxz, dyz, q: QLike):
    """Amount by which ``d(x,y)`` exceeds the q-triangle bound through ``z``."""
    q = as_q(q)
    if q.is_inf:
        return np.maximum(0.0, dxy - np.maximum(dxz, dyz))
    p = q.value
    return np.maximum(0.0, np.power(dxy, p) - np.power(dxz, p) - np.power(dyz, p))
