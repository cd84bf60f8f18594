"""FedAvg and inverse-propensity, reliability-aware aggregation weights."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class NoUpdatesError(ValueError):
    """No update was delivered this round; the model stays unchanged."""


@dataclass
class PropensityTracker:
    pi: np.ndarray
    beta: float = 0.1
    floor: float = 0.01

    @classmethod
    def initial(cls, n_clients: int, k: int, beta: float = 0.1, floor: float = 0.01) -> "PropensityTracker":
        start = min(1.0, max(floor, k / n_clients))
        return cls(np.full(n_clients, start), beta, floor)


def _exact(values) -> list[Fraction]:
    return [Fraction(v) for v in np.asarray(values, dtype=object).ravel()]


def _normalize_exact(raw) -> np.ndarray:
    # exact rational arithmetic on the inputs (floats or Fractions), rounded once
    # at the end, so uniform pi and r cancel to the FedAvg weights bit for bit
    total = sum(raw)
    return np.array([float(x / total) for x in raw])


def fedavg_weights(n_samples) -> np.ndarray:
    n = _exact(n_samples)
    if not n:
        raise NoUpdatesError("no updates to aggregate")
    if any(x <= 0 for x in n):
        raise ValueError("sample counts must be positive")
    return _normalize_exact(n)


def bias_corrected_weights(n_samples, reliability, propensity, floor) -> np.ndarray:
    """a_i proportional to n_i r_i / max(pi_i, floor) over the delivered clients."""
    n, r, pi = _exact(n_samples), _exact(reliability), _exact(propensity)
    if not n:
        raise NoUpdatesError("no updates to aggregate")
    if any(x <= 0 for x in n):
        raise ValueError("sample counts must be positive")
    if any(x <= 0 or x > 1 for x in r):
        raise ValueError("reliability scores must lie in (0, 1]")
    floor = Fraction(floor)
    return _normalize_exact([a * b / max(c, floor) for a, b, c in zip(n, r, pi)])


def apply_aggregate(w: np.ndarray, deltas, weights) -> np.ndarray:
    """w + sum_i a_i delta_i."""
    weights = np.asarray(weights, dtype=float)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"aggregation weights sum to {weights.sum()!r}, not 1")
    out = np.asarray(w, dtype=float).copy()
    for a, delta in zip(weights, deltas):
        delta = np.asarray(delta, dtype=float)
        if delta.shape != out.shape:
            raise ValueError(f"update dimension {delta.shape} != model dimension {out.shape}")
        out += a * delta
    return out


def update_propensity(tracker: PropensityTracker, selected) -> PropensityTracker:
    ind = np.zeros_like(tracker.pi)
    ind[list(selected)] = 1.0
    pi = np.maximum(tracker.floor, (1.0 - tracker.beta) * tracker.pi + tracker.beta * ind)
    return PropensityTracker(pi, tracker.beta, tracker.floor)
