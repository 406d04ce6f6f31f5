"""Little-endian binary file formats.

QVEC  dense float32 vectors      QSET  sparse id sets
QMAT  float64 distance matrix    QMLP  embedding model

Every reader checks the magic, the declared sizes, and rejects trailing bytes.
The index format (QIDX) is assembled in :mod:`qsearch.pipeline` from the
same primitives.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from .embedding import MlpParams
from .projection import ProjectedMatrix
from .qcore import QExponent, as_q, as_sparse_set

PathLike = Union[str, Path]

MLP_VERSION = 1
_Q_INF = 0xFF
_Q_FINITE = 0x01


class FormatError(ValueError):
    """A file does not match the format it claims to be."""


class Reader:
    """Cursor over a byte string that raises :class:`FormatError` on truncation."""

    def __init__(self, data: bytes, what: str = "stream"):
        self.data = memoryview(data)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"{self.what}: truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos : self.pos + n].tobytes()
        self.pos += n
        return out

    def magic(self, expected: bytes):
        got = self.take(len(expected))
        if got != expected:
            raise FormatError(f"{self.what}: bad magic {got!r}, expected {expected!r}")

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def q(self) -> QExponent:
        tag = self.u8()
        value = self.f64()
        if tag == _Q_INF:
            return QExponent(math.inf)
        if tag != _Q_FINITE:
            raise FormatError(f"{self.what}: unknown q tag {tag:#x}")
        try:
            return QExponent(value)
        except ValueError as exc:
            raise FormatError(f"{self.what}: {exc}") from None

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")


def pack_u32(v: int) -> bytes:
    if not 0 <= v < 2**32:
        raise FormatError(f"value {v} does not fit in u32")
    return struct.pack("<I", v)


def pack_q(q) -> bytes:
    q = as_q(q)
    if q.is_inf:
        return struct.pack("<Bd", _Q_INF, math.inf)
    return struct.pack("<Bd", _Q_FINITE, q.value)


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


# QVEC


def dumps_qvec(X) -> bytes:
    X = np.asarray(X)
    if X.ndim != 2:
        raise FormatError("QVEC holds a 2-D array")
    body = np.ascontiguousarray(X, dtype="<f4")
    return b"QVEC" + pack_u32(X.shape[0]) + pack_u32(X.shape[1]) + body.tobytes()


def loads_qvec(data: bytes) -> np.ndarray:
    r = Reader(data, "QVEC")
    r.magic(b"QVEC")
    n, d = r.u32(), r.u32()
    X = r.array("<f4", n * d).reshape(n, d)
    r.finish()
    return X.astype(np.float32)


# QSET


def dumps_qset(sets: Sequence) -> bytes:
    parts = [b"QSET", pack_u32(len(sets))]
    for s in sets:
        ids = as_sparse_set(s)
        if ids.size and ids[-1] >= 2**32:
            raise FormatError("set id does not fit in u32")
        parts += [pack_u32(ids.size), ids.astype("<u4").tobytes()]
    return b"".join(parts)


def loads_qset(data: bytes) -> List[np.ndarray]:
    r = Reader(data, "QSET")
    r.magic(b"QSET")
    rows = []
    for _ in range(r.u32()):
        ids = r.array("<u4", r.u32()).astype(np.int64)
        if ids.size and np.any(np.diff(ids) <= 0):
            raise FormatError("QSET: ids must be strictly increasing")
        rows.append(ids)
    r.finish()
    return rows


# QMAT


def dumps_qmat(M, q=None) -> bytes:
    """Square float64 matrix; a ``ProjectedMatrix`` carries its own q tag."""
    if isinstance(M, ProjectedMatrix):
        q = M.q if q is None else q
        M = M.values
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise FormatError("QMAT holds a square matrix")
    return b"QMAT" + pack_u32(M.shape[0]) + pack_q(1 if q is None else q) + _f64(M)


def loads_qmat(data: bytes):
    """Returns ``(matrix, q)``."""
    r = Reader(data, "QMAT")
    r.magic(b"QMAT")
    n = r.u32()
    q = r.q()
    M = r.array("<f8", n * n).reshape(n, n).astype(np.float64)
    r.finish()
    return M, q


# QMLP


def dumps_qmlp(params: MlpParams) -> bytes:
    dims = params.dims
    parts = [b"QMLP", pack_u32(MLP_VERSION), pack_u32(len(dims) - 1)]
    parts += [pack_u32(d) for d in dims]
    parts += [struct.pack("<d", params.dropout_rate), pack_q(params.q), struct.pack("<d", params.scale)]
    for W, b in zip(params.weights, params.biases):
        parts += [_f64(W), _f64(b)]
    return b"".join(parts)


def read_qmlp(r: Reader) -> MlpParams:
    r.magic(b"QMLP")
    version = r.u32()
    if version != MLP_VERSION:
        raise FormatError(f"QMLP: unsupported version {version}")
    n_layers = r.u32()
    if n_layers == 0:
        raise FormatError("QMLP: model has no layers")
    dims = [r.u32() for _ in range(n_layers + 1)]
    dropout = r.f64()
    q = r.q()
    scale = r.f64()
    Ws, bs = [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        Ws.append(r.array("<f8", n_in * n_out).reshape(n_out, n_in).astype(np.float64))
        bs.append(r.array("<f8", n_out).astype(np.float64))
    try:
        return MlpParams(Ws, bs, dropout, scale, q)
    except ValueError as exc:
        raise FormatError(f"QMLP: {exc}") from None


def loads_qmlp(data: bytes) -> MlpParams:
    r = Reader(data, "QMLP")
    params = read_qmlp(r)
    r.finish()
    return params


# path helpers


def write_bytes(path: PathLike, data: bytes):
    Path(path).write_bytes(data)


def read_bytes(path: PathLike) -> bytes:
    return Path(path).read_bytes()


def read_points(path: PathLike):
    """Load a QVEC (dense) or QSET (sparse) file by its magic."""
    data = read_bytes(path)
    if data[:4] == b"QVEC":
        return loads_qvec(data)
    if data[:4] == b"QSET":
        return loads_qset(data)
    raise FormatError(f"{path}: expected a QVEC or QSET file, found magic {data[:4]!r}")
