"""Tiny softmax-regression client model, local SGD, update compression, evaluation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMES = ("dense_fp32", "quantize_q", "top_k", "sign")
QUANT_BITS = (4, 8, 16, 32)
SCALE_BITS = 32


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class ModelParams:
    """Multinomial logistic regression; ``w`` is a (C, d_x + 1) matrix, row-major, bias last."""

    w: np.ndarray
    num_features: int
    num_classes: int

    @classmethod
    def zeros(cls, num_features: int, num_classes: int) -> "ModelParams":
        return cls(np.zeros((num_features + 1) * num_classes), num_features, num_classes)

    @property
    def d(self) -> int:
        return self.w.size

    @property
    def layout(self) -> str:
        return f"softmax_regression;classes={self.num_classes};features={self.num_features};bias_last;row_major"

    def matrix(self, w: np.ndarray | None = None) -> np.ndarray:
        return (self.w if w is None else w).reshape(self.num_classes, self.num_features + 1)

    def with_weights(self, w: np.ndarray) -> "ModelParams":
        return ModelParams(np.asarray(w, dtype=float), self.num_features, self.num_classes)


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((len(X), 1))])


def logits(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return _augment(X) @ params.matrix().T


def cross_entropy(params: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    z = logits(params, X)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())


def gradient(params: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the flat weights."""
    Xa = _augment(X)
    z = Xa @ params.matrix().T
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(y)), y] -= 1.0
    return (p.T @ Xa / len(y)).reshape(-1)


@dataclass
class TrainReport:
    local_loss_before: float
    local_loss_after: float
    epochs: int
    samples_used: int
    train_energy_j: float


def train_energy(kappa_train: float, samples: int, epochs: int, d: int) -> float:
    return kappa_train * samples * epochs * d


def local_train(params: ModelParams, X: np.ndarray, y: np.ndarray, epochs: int,
                learning_rate: float, batch_size: int, kappa_train: float,
                rng: np.random.Generator, client_id=None, round_idx=None):
    """Mini-batch SGD from ``params``; returns the raw dense update and a report."""
    if len(y) == 0:
        raise ValueError(f"client {client_id}: no training data")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    w0 = params.w.copy()
    local = params.with_weights(w0.copy())
    before = cross_entropy(local, X, y)
    n = len(y)
    # divergence is detected below, so silence numpy's overflow chatter
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            order = rng.permutation(n)
            for a in range(0, n, batch_size):
                b = order[a:a + batch_size]
                local.w -= learning_rate * gradient(local, X[b], y[b])
        after = cross_entropy(local, X, y) if epochs else before
    if not (math.isfinite(after) and np.all(np.isfinite(local.w))):
        raise TrainingDivergedError(
            f"non-finite local loss for client {client_id} at round {round_idx}")
    delta = local.w - w0
    report = TrainReport(before, after, epochs, n, train_energy(kappa_train, n, epochs, params.d))
    return dense_update(delta, client_id), report


@dataclass
class UpdateDelta:
    """An encoded update. ``values`` holds what goes on the wire for ``scheme``:
    floats (dense/top_k), integer codes (quantize_q) or {0,1} bits (sign)."""

    scheme: str
    dim: int
    values: np.ndarray
    s: int
    q: int
    payload_bits: int
    indices: np.ndarray | None = None
    scale: float = 0.0
    source_client: int | None = None
    delivered: bool | None = None
    reliability: float | None = None


def dense_update(delta: np.ndarray, source_client=None) -> UpdateDelta:
    delta = np.asarray(delta, dtype=float)
    return UpdateDelta("dense_fp32", delta.size, delta.copy(), delta.size, 32, 32 * delta.size,
                       source_client=source_client)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def index_bits(dim: int) -> int:
    return math.ceil(math.log2(dim)) if dim > 1 else 0


def payload_bits_for(scheme: str, dim: int, q: int | None = None, k: int | None = None) -> int:
    if scheme == "dense_fp32":
        return 32 * dim
    if scheme == "quantize_q":
        return q * dim + SCALE_BITS
    if scheme == "top_k":
        return k * (32 + index_bits(dim))
    if scheme == "sign":
        return dim + SCALE_BITS
    raise ValueError(f"unknown compression scheme {scheme!r}")


def compress(raw: UpdateDelta, scheme: str, q: int | None = None, k: int | None = None) -> UpdateDelta:
    """Encode a dense update.

    quantize_q: symmetric uniform codes in [-L, L], L = 2^(q-1) - 1, scale =
    max|delta| sent as one 32-bit value, half-away-from-zero rounding.
    top_k: k largest magnitudes, ties to the lowest index, 32-bit value plus
    ceil(log2 d)-bit index each. sign: one bit per entry (x >= 0 -> 1) and
    one 32-bit magnitude mean|delta|.
    """
    x = decompress(raw)
    d = x.size
    src = raw.source_client
    if scheme == "dense_fp32":
        return dense_update(x, src)
    if scheme == "quantize_q":
        if q not in QUANT_BITS:
            raise ValueError(f"quantization bits must be one of {QUANT_BITS}, got {q!r}")
        levels = 2 ** (q - 1) - 1
        scale = float(np.max(np.abs(x))) if d else 0.0
        codes = np.zeros(d, dtype=np.int64) if scale == 0.0 else \
            _round_half_away(x / scale * levels).astype(np.int64)
        return UpdateDelta(scheme, d, codes, d, q, payload_bits_for(scheme, d, q=q),
                           scale=scale, source_client=src)
    if scheme == "top_k":
        if k is None or not 1 <= k <= d:
            raise ValueError(f"top_k needs 1 <= k <= {d}, got {k!r}")
        idx = np.sort(np.argsort(-np.abs(x), kind="stable")[:k])
        return UpdateDelta(scheme, d, x[idx].copy(), k, 32, payload_bits_for(scheme, d, k=k),
                           indices=idx, source_client=src)
    if scheme == "sign":
        bits = (x >= 0).astype(np.int8)
        mag = float(np.mean(np.abs(x))) if d else 0.0
        return UpdateDelta(scheme, d, bits, d, 1, payload_bits_for(scheme, d),
                           scale=mag, source_client=src)
    raise ValueError(f"unknown compression scheme {scheme!r}")


def decompress(update: UpdateDelta) -> np.ndarray:
    if update.scheme == "dense_fp32":
        return np.asarray(update.values, dtype=float).copy()
    if update.scheme == "quantize_q":
        levels = 2 ** (update.q - 1) - 1
        return update.values.astype(float) * (update.scale / levels)
    if update.scheme == "top_k":
        out = np.zeros(update.dim)
        out[update.indices] = update.values
        return out
    if update.scheme == "sign":
        return np.where(update.values == 1, 1.0, -1.0) * update.scale
    raise ValueError(f"unknown compression scheme {update.scheme!r}")


def planned_payload_bits(scheme: str, dim: int, q: int = 8, k_fraction: float = 0.1) -> int:
    """Payload size known before training, used for feasibility and costs."""
    if scheme == "top_k":
        return payload_bits_for(scheme, dim, k=top_k_count(dim, k_fraction))
    return payload_bits_for(scheme, dim, q=q)


def top_k_count(dim: int, k_fraction: float) -> int:
    return min(dim, max(1, int(math.ceil(k_fraction * dim))))


@dataclass
class EvalResult:
    macro_f1: float
    per_class_f1: np.ndarray
    accuracy: float


def f1_scores(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-class F1; a class absent from both labels and predictions scores 0."""
    f1 = np.zeros(num_classes)
    for c in range(num_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        f1[c] = 2 * tp / denom if denom else 0.0
    return f1


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return np.argmax(logits(params, X), axis=1)


def evaluate(params: ModelParams, X: np.ndarray, y: np.ndarray) -> EvalResult:
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty window set")
    pred = predict(params, X)
    per_class = f1_scores(y, pred, params.num_classes)
    return EvalResult(float(per_class.mean()), per_class, float(np.mean(pred == y)))


def save_checkpoint(params: ModelParams, path) -> None:
    doc = {"dimension": params.d, "layout": params.layout,
           "num_features": params.num_features, "num_classes": params.num_classes,
           "weights": [float(v) for v in params.w]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> ModelParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    w = np.asarray(doc["weights"], dtype=float)
    if w.size != doc["dimension"]:
        raise ValueError("checkpoint dimension does not match weight count")
    return ModelParams(w, int(doc["num_features"]), int(doc["num_classes"]))
