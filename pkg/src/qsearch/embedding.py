"""Learned map whose Euclidean distances approximate projected q-distances.

A plain numpy MLP (GELU hidden activations, inverted dropout) trained with
AdamW and cosine annealing with warm restarts on a weighted sum of

* stress: ``(target - |f(x) - f(y)|)**2`` over point pairs, and
* q-triangle violation: ``[e_xy**q - e_xz**q - e_yz**q]_+`` over triples,

where ``e`` is the embedded Euclidean distance.  Gradients are analytic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from .qcore import QExponent, QLike, as_q

log = logging.getLogger(__name__)

WIDE_HIDDEN = (1048, 512, 1012)
DESK_HIDDEN = (128, 128)

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NonFiniteLoss(FloatingPointError):
    pass


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


@dataclass
class MlpParams:
    """Layer weights ``(out, in)`` and biases; outputs are multiplied by ``scale``."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    dropout_rate: float = 0.0
    scale: float = 1.0
    q: QExponent = field(default_factory=lambda: QExponent(2.0))

    def __post_init__(self):
        self.q = as_q(self.q)
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {W.shape[1]} does not chain from {self.weights[i - 1].shape[0]}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def dims(self) -> List[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpParams":
        return replace(self, weights=[W.copy() for W in self.weights], biases=[b.copy() for b in self.biases])

    def arrays(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(dims: Sequence[int], seed: int = 0, dropout_rate: float = 0.0, q: QLike = 2) -> MlpParams:
    """Uniform ``+-1/sqrt(fan_in)`` initialisation for layer sizes ``dims``."""
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(n_in)
        Ws.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        bs.append(rng.uniform(-bound, bound, size=n_out))
    return MlpParams(Ws, bs, dropout_rate, 1.0, as_q(q))


def identity_params(dim: int) -> MlpParams:
    return MlpParams([np.eye(dim)], [np.zeros(dim)])


def _forward(params: MlpParams, X: np.ndarray, rng: Optional[np.random.Generator]):
    """Net output (before ``scale``) plus the cache needed for backprop."""
    cache = []
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W.T + b
        if i == last:
            cache.append((h, None, None))
            h = z
            break
        a = gelu(z)
        mask = None
        if rng is not None and params.dropout_rate > 0:
            keep = 1.0 - params.dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        cache.append((h, z, mask))
        h = a
    return h, cache


def _backward(params: MlpParams, cache, grad_out: np.ndarray) -> List[np.ndarray]:
    """Gradients ``[dW0, db0, dW1, db1, ...]`` of a scalar given d/d(net output)."""
    grads: List[np.ndarray] = [None] * (2 * len(params.weights))
    g = grad_out
    for i in range(len(params.weights) - 1, -1, -1):
        h_in, z, mask = cache[i]
        if z is not None:
            if mask is not None:
                g = g * mask
            g = g * gelu_grad(z)
        grads[2 * i] = g.T @ h_in
        grads[2 * i + 1] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i]
    return grads


def forward(params: MlpParams, x, mode: str = "infer", rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Embed one vector (or a matrix of row vectors).

    ``mode="train"`` applies dropout masks drawn from ``rng``; ``"infer"`` is
    deterministic and never drops units.
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.shape[1] != params.input_dim:
        raise ValueError(f"input has dimension {X2.shape[1]}, model expects {params.input_dim}")
    if not params.is_finite():
        raise ValueError("model parameters are not finite")
    if mode == "train":
        if rng is None:
            raise ValueError("train mode needs a seeded generator")
        out, _ = _forward(params, X2, rng)
    elif mode == "infer":
        out, _ = _forward(params, X2, None)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = out * params.scale
    return out[0] if single else out


def embed_all(params: MlpParams, dataset, batch: int = 4096) -> np.ndarray:
    X = np.asarray(dataset, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(f"dataset shape {X.shape} does not match model input {params.input_dim}")
    parts = [forward(params, X[s : s + batch]) for s in range(0, X.shape[0], batch)]
    return np.vstack(parts) if parts else np.zeros((0, params.output_dim))


def _edist(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def stress_loss(params: MlpParams, x, y, target: float) -> float:
    e = _edist(forward(params, x), forward(params, y))
    return (target - e) ** 2


def triangle_violation(exy, exz, eyz, q: QLike):
    """Hinge on the embedded q-triangle inequality; max form at infinity."""
    q = as_q(q)
    if q.is_inf:
        return np.maximum(0.0, exy - np.maximum(exz, eyz))
    p = q.value
    return np.maximum(0.0, exy**p - exz**p - eyz**p)


def triangle_loss(params: MlpParams, x, y, z, q: QLike) -> float:
    fx, fy, fz = forward(params, x), forward(params, y), forward(params, z)
    return float(triangle_violation(_edist(fx, fy), _edist(fx, fz), _edist(fy, fz), q))


@dataclass
class Batch:
    """Pair rows with target distances and triple rows, as input vectors."""

    pair_a: np.ndarray
    pair_b: np.ndarray
    targets: np.ndarray
    trip_x: np.ndarray
    trip_y: np.ndarray
    trip_z: np.ndarray

    @classmethod
    def from_indices(cls, X: np.ndarray, T: np.ndarray, pairs: np.ndarray, triples: np.ndarray) -> "Batch":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return cls(
            X[pairs[:, 0]],
            X[pairs[:, 1]],
            T[pairs[:, 0], pairs[:, 1]],
            X[triples[:, 0]],
            X[triples[:, 1]],
            X[triples[:, 2]],
        )

    @property
    def n_pairs(self) -> int:
        return len(self.targets)

    @property
    def n_triples(self) -> int:
        return len(self.trip_x)


def _dist_rows(A, B):
    diff = A - B
    e = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return diff, e


def objective_and_grad(
    params: MlpParams,
    batch: Batch,
    alpha_D: float,
    alpha_T: float,
    q: QLike,
    rng: Optional[np.random.Generator] = None,
    with_grad: bool = True,
):
    """Weighted mean stress plus weighted mean triangle loss, and its gradient.

    Returns ``(total, mean_stress, mean_triangle, grads)``.  ``rng`` enables
    dropout; pass a freshly seeded generator to reuse identical masks.
    """
    q = as_q(q)
    use_pairs = alpha_D > 0 and batch.n_pairs > 0
    use_trips = alpha_T > 0 and batch.n_triples > 0
    if alpha_D > 0 and batch.n_pairs == 0:
        raise ValueError("stress weight is positive but the pair batch is empty")
    if alpha_T > 0 and batch.n_triples == 0:
        raise ValueError("triangle weight is positive but the triple batch is empty")
    P, Tn = batch.n_pairs, batch.n_triples
    blocks = [batch.pair_a, batch.pair_b, batch.trip_x, batch.trip_y, batch.trip_z]
    X = np.vstack(blocks)
    out, cache = _forward(params, X, rng)
    out = out * params.scale
    fa, fb = out[:P], out[P : 2 * P]
    fx, fy, fz = out[2 * P : 2 * P + Tn], out[2 * P + Tn : 2 * P + 2 * Tn], out[2 * P + 2 * Tn :]
    g = np.zeros_like(out)

    stress = 0.0
    if P:
        dab, e = _dist_rows(fa, fb)
        r = batch.targets - e
        stress = float(np.mean(r * r))
        if use_pairs:
            # d/de of the weighted mean; zero-length pairs take the zero subgradient
            coef = np.where(e > 0, -2.0 * alpha_D * r / (P * np.where(e > 0, e, 1.0)), 0.0)
            gab = coef[:, None] * dab
            g[:P] += gab
            g[P : 2 * P] -= gab

    tri = 0.0
    if Tn:
        dxy, exy = _dist_rows(fx, fy)
        dxz, exz = _dist_rows(fx, fz)
        dyz, eyz = _dist_rows(fy, fz)
        v = triangle_violation(exy, exz, eyz, q)
        tri = float(np.mean(v))
        if use_trips:
            active = v > 0
            w = alpha_T / Tn
            if q.is_inf:
                cxy = np.where(active, w, 0.0)
                first = exz >= eyz
                cxz = np.where(active & first, -w, 0.0)
                cyz = np.where(active & ~first, -w, 0.0)
            else:
                p = q.value
                cxy = np.where(active, w * p * exy ** (p - 1), 0.0)
                cxz = np.where(active, -w * p * exz ** (p - 1), 0.0)
                cyz = np.where(active, -w * p * eyz ** (p - 1), 0.0)

            def unit(d, e):
                return d / np.where(e > 0, e, 1.0)[:, None]

            gxy = cxy[:, None] * unit(dxy, exy)
            gxz = cxz[:, None] * unit(dxz, exz)
            gyz = cyz[:, None] * unit(dyz, eyz)
            sx = slice(2 * P, 2 * P + Tn)
            sy = slice(2 * P + Tn, 2 * P + 2 * Tn)
            sz = slice(2 * P + 2 * Tn, None)
            g[sx] += gxy + gxz
            g[sy] += -gxy + gyz
            g[sz] += -gxz - gyz

    total = alpha_D * stress + alpha_T * tri
    grads = _backward(params, cache, g * params.scale) if with_grad else None
    return total, stress, tri, grads


def total_objective(params: MlpParams, batch: Batch, alpha_D: float, alpha_T: float, q: QLike) -> float:
    return objective_and_grad(params, batch, alpha_D, alpha_T, q, with_grad=False)[0]


def kink_filter(params: MlpParams, batch: Batch, q: QLike, margin: float = 1e-6) -> Batch:
    """Drop triples within ``margin`` of the hinge and pairs at zero embedded distance."""
    q = as_q(q)
    fa, fb = forward(params, batch.pair_a), forward(params, batch.pair_b)
    keep_p = np.linalg.norm(fa - fb, axis=1) > margin
    fx, fy, fz = (forward(params, batch.trip_x), forward(params, batch.trip_y), forward(params, batch.trip_z))
    exy, exz, eyz = (np.linalg.norm(a - b, axis=1) for a, b in ((fx, fy), (fx, fz), (fy, fz)))
    if q.is_inf:
        raw = exy - np.maximum(exz, eyz)
        keep_t = (np.abs(raw) > margin) & (np.abs(exz - eyz) > margin)
    else:
        raw = exy**q.value - exz**q.value - eyz**q.value
        keep_t = np.abs(raw) > margin
    keep_t &= (exy > margin) & (exz > margin) & (eyz > margin)
    return Batch(
        batch.pair_a[keep_p], batch.pair_b[keep_p], batch.targets[keep_p],
        batch.trip_x[keep_t], batch.trip_y[keep_t], batch.trip_z[keep_t],
    )


def gradient_check(
    params: MlpParams,
    batch: Batch,
    step: float = 1e-5,
    alpha_D: float = 1.0,
    alpha_T: float = 0.3,
    q: QLike = 2,
    n_coords: int = 200,
    seed: int = 0,
    corrupt: Optional[Callable[[List[np.ndarray]], List[np.ndarray]]] = None,
    floor: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks ``n_coords`` randomly sampled parameter coordinates.  ``corrupt``
    may rewrite the analytic gradients (negative controls).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    p = params.copy()
    _, _, _, grads = objective_and_grad(p, batch, alpha_D, alpha_T, q)
    if corrupt is not None:
        grads = corrupt([g.copy() for g in grads])
    arrays = p.arrays()
    sizes = [a.size for a in arrays]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        local = np.unravel_index(flat - offsets[k], arrays[k].shape)
        old = arrays[k][local]
        arrays[k][local] = old + step
        up = total_objective(p, batch, alpha_D, alpha_T, q)
        arrays[k][local] = old - step
        down = total_objective(p, batch, alpha_D, alpha_T, q)
        arrays[k][local] = old
        numeric = (up - down) / (2 * step)
        analytic = float(grads[k][local])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst


@dataclass
class TrainConfig:
    q: QExponent = field(default_factory=lambda: QExponent(2.0))
    alpha_D: float = 1.0
    alpha_T: float = 0.3
    epochs: int = 100
    batch_pairs: int = 256
    batch_triples: int = 256
    steps_per_epoch: Optional[int] = None
    lr: float = 1e-3
    restart_period: int = 50
    period_mult: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    hidden: Tuple[int, ...] = DESK_HIDDEN
    output_dim: Optional[int] = None
    dropout_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.q = as_q(self.q)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.alpha_D < 0 or self.alpha_T < 0 or self.alpha_D + self.alpha_T <= 0:
            raise ValueError("loss weights must be nonnegative with a positive sum")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass
class TrainReport:
    stress: List[float] = field(default_factory=list)
    triangle: List[float] = field(default_factory=list)
    target_scale: float = 1.0
    normalized_stress: Optional[float] = None
    gradient_error: Optional[float] = None


def cosine_warm_restart_lr(base: float, epoch_float: float, period: int, mult: int, floor: float = 0.0) -> float:
    """Learning rate at a fractional epoch under cosine annealing with warm restarts."""
    t, T = epoch_float, float(period)
    if mult == 1:
        t = t % T
    else:
        while t >= T:
            t -= T
            T *= mult
    return floor + (base - floor) * 0.5 * (1.0 + math.cos(math.pi * t / T))


def _sample_pairs(rng: np.random.Generator, m: int, size: int) -> np.ndarray:
    """Distinct unordered pairs ``i < j``, uniform without replacement."""
    total = m * (m - 1) // 2
    flat = rng.choice(total, size=min(size, total), replace=False)
    # invert the row-major upper-triangle enumeration
    i = (m - 2 - np.floor(np.sqrt(-8.0 * flat + 4.0 * m * (m - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    j = flat + i + 1 - m * (m - 1) // 2 + (m - i) * ((m - i) - 1) // 2
    return np.stack([i, j], axis=1)


def _sample_triples(rng: np.random.Generator, m: int, size: int) -> np.ndarray:
    t = rng.integers(m, size=(size, 3))
    bad = (t[:, 0] == t[:, 1]) | (t[:, 0] == t[:, 2]) | (t[:, 1] == t[:, 2])
    while bad.any():
        t[bad] = rng.integers(m, size=(int(bad.sum()), 3))
        bad = (t[:, 0] == t[:, 1]) | (t[:, 0] == t[:, 2]) | (t[:, 1] == t[:, 2])
    return t


def train(points, targets, config: TrainConfig, init: Optional[MlpParams] = None):
    """Fit an embedding to a matrix of target distances over ``points``.

    Targets are divided by their max before fitting and the returned model
    carries that factor as ``scale``.  Returns ``(params, report)``.
    """
    X = np.asarray(points, dtype=np.float64)
    T = np.asarray(getattr(targets, "values", targets), dtype=np.float64)
    m = X.shape[0]
    if m < 2:
        raise ValueError("training needs at least two points")
    if T.shape != (m, m):
        raise ValueError(f"targets shape {T.shape} does not match {m} points")
    if not np.all(np.isfinite(T)) or np.any(T < 0):
        raise ValueError("targets must be finite and nonnegative")
    q = config.q
    s_out = config.output_dim or min(X.shape[1], 64)
    top = float(T.max())
    tscale = top if top > 0 else 1.0
    Tn = T / tscale
    rng = np.random.default_rng(config.seed)
    if init is None:
        params = init_params((X.shape[1], *config.hidden, s_out), seed=config.seed, dropout_rate=config.dropout_rate, q=q)
    else:
        params = init.copy()
        params.scale = 1.0
    report = TrainReport(target_scale=tscale)
    if config.epochs == 0:
        params.scale = tscale if init is None else init.scale
        return params, report

    # by default an epoch draws about m pairs, so each point is touched about twice
    steps = config.steps_per_epoch or max(1, math.ceil(m / config.batch_pairs))
    arrays = params.arrays()
    m1 = [np.zeros_like(a) for a in arrays]
    m2 = [np.zeros_like(a) for a in arrays]
    t = 0
    for epoch in range(config.epochs):
        s_sum = t_sum = 0.0
        for b in range(steps):
            lr = cosine_warm_restart_lr(config.lr, epoch + b / steps, config.restart_period, config.period_mult)
            pairs = _sample_pairs(rng, m, config.batch_pairs) if config.alpha_D > 0 else np.zeros((0, 2), np.int64)
            trips = _sample_triples(rng, m, config.batch_triples) if (config.alpha_T > 0 and m >= 3) else np.zeros((0, 3), np.int64)
            batch = Batch.from_indices(X, Tn, pairs, trips)
            alpha_T = config.alpha_T if batch.n_triples else 0.0
            total, st, tr, grads = objective_and_grad(params, batch, config.alpha_D, alpha_T, q, rng)
            if not math.isfinite(total):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, step {b}: stress={st} triangle={tr}")
            t += 1
            c1 = 1.0 - config.beta1**t
            c2 = 1.0 - config.beta2**t
            for a, g, v1, v2 in zip(arrays, grads, m1, m2):
                v1 *= config.beta1
                v1 += (1.0 - config.beta1) * g
                v2 *= config.beta2
                v2 += (1.0 - config.beta2) * g * g
                a *= 1.0 - lr * config.weight_decay
                a -= lr * (v1 / c1) / (np.sqrt(v2 / c2) + config.eps)
            s_sum += st
            t_sum += tr
        with np.errstate(over="ignore"):
            report.stress.append(float(np.float64(s_sum / steps) * np.float64(tscale) ** 2))
        report.triangle.append(t_sum / steps)
        if epoch % 50 == 0:
            log.debug("epoch %d stress %.5g triangle %.5g", epoch, report.stress[-1], report.triangle[-1])
    if not params.is_finite():
        raise NonFiniteLoss("training produced non-finite parameters")
    params.scale = tscale
    return params, report
