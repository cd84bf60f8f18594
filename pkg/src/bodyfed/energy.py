"""Round energy, feasibility caps, the per-client ledger and the streaming break-even."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSnapshot, LinkBudget, worst_case_packets

MODEL_BITS_PER_PARAM = 32


def round_energy(e_train, e_tx, e_rx):
    if e_train < 0 or e_tx < 0 or e_rx < 0:
        raise ValueError("energy terms must be nonnegative")
    return e_train + e_tx + e_rx


def tx_energy(eta_bit, s, q, rho):
    """Expected uplink energy for s values at q bits each."""
    return eta_bit * s * q * rho


@dataclass
class FeasibilityCaps:
    eps_max: float = 0.9
    t_max_s: float = 1.0
    t_train_fixed_s: float = 0.05


@dataclass
class CostEstimate:
    e_train: float
    e_tx_expected: float
    e_tx_worst: float
    e_rx: float
    latency_s: float
    memory_bits: float

    @property
    def expected(self) -> float:
        return round_energy(self.e_train, self.e_tx_expected, self.e_rx)

    @property
    def worst(self) -> float:
        return round_energy(self.e_train, self.e_tx_worst, self.e_rx)


def estimate_cost(snapshot: ChannelSnapshot, payload_bits: int, model_dim: int, e_train: float,
                  budget: LinkBudget, caps: FeasibilityCaps) -> CostEstimate:
    """Expected and worst-case (retry_cap on every packet) round cost.

    Latency is expected airtime plus a fixed training time; memory is the
    fp32 model plus the encoded update buffer.
    """
    model_bits = model_dim * MODEL_BITS_PER_PARAM
    worst_bits = worst_case_packets(payload_bits, budget) * budget.packet_payload_bits
    return CostEstimate(
        e_train=e_train,
        e_tx_expected=snapshot.eta_bit_j * payload_bits * snapshot.rho,
        e_tx_worst=snapshot.eta_bit_j * worst_bits,
        e_rx=budget.eta_bit_rx_j * model_bits,
        latency_s=payload_bits * snapshot.rho / snapshot.rate_bits_per_s + caps.t_train_fixed_s,
        memory_bits=model_bits + payload_bits,
    )


def check_feasibility(snapshot: ChannelSnapshot, cost: CostEstimate, budget_j: float,
                      memory_cap_bits: float, caps: FeasibilityCaps) -> tuple[bool, str]:
    """First violated constraint in the order per, energy, latency, memory."""
    if snapshot.per > caps.eps_max:
        return False, "per"
    if cost.worst > budget_j:
        return False, "energy"
    if cost.latency_s > caps.t_max_s:
        return False, "latency"
    if cost.memory_bits > memory_cap_bits:
        return False, "memory"
    return True, "ok"


@dataclass
class EnergyLedger:
    budget_j: np.ndarray
    memory_cap_bits: np.ndarray
    cum_train: np.ndarray = None
    cum_tx: np.ndarray = None
    cum_rx: np.ndarray = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.budget_j = np.asarray(self.budget_j, dtype=float).copy()
        self.memory_cap_bits = np.asarray(self.memory_cap_bits, dtype=float)
        n = self.budget_j.size
        for name in ("cum_train", "cum_tx", "cum_rx"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n))
        if np.any(self.budget_j < 0):
            raise ValueError("initial budgets must be nonnegative")

    @property
    def n_clients(self) -> int:
        return self.budget_j.size

    def record_round(self, spends: dict[int, tuple[float, float, float]]) -> np.ndarray:
        """Charge (train, tx, rx) per client for one round; returns per-client totals."""
        row = np.zeros(self.n_clients)
        for i, (e_train, e_tx, e_rx) in spends.items():
            e = round_energy(e_train, e_tx, e_rx)
            if e > self.budget_j[i] * (1 + 1e-12):
                raise RuntimeError(f"client {i} would overdraw its budget ({e} > {self.budget_j[i]})")
            self.budget_j[i] = max(0.0, self.budget_j[i] - e)
            self.cum_train[i] += e_train
            self.cum_tx[i] += e_tx
            self.cum_rx[i] += e_rx
            row[i] = e
        self.history.append(row)
        return row

    @property
    def cumulative(self) -> np.ndarray:
        return self.cum_train + self.cum_tx + self.cum_rx


@dataclass
class BreakEvenSpec:
    horizon_s: float
    sampling_rate_hz: float
    d_x: int
    bits_per_sample: int
    eta_bit_j: float
    rounds: int
    s: int
    q: int
    rho: float
    e_train_per_round_j: float

    def __post_init__(self):
        for name in ("horizon_s", "sampling_rate_hz", "d_x", "bits_per_sample", "eta_bit_j",
                     "rounds", "s", "q", "e_train_per_round_j"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")


def stream_energy(spec: BreakEvenSpec, horizon_s=None):
    """T * f_s * d_x * b_x * eta_bit."""
    t = spec.horizon_s if horizon_s is None else horizon_s
    return t * spec.sampling_rate_hz * spec.d_x * spec.bits_per_sample * spec.eta_bit_j


def fl_energy(spec: BreakEvenSpec):
    """R * s * q * eta_bit * rho plus R rounds of training energy."""
    return spec.rounds * spec.s * spec.q * spec.eta_bit_j * spec.rho \
        + spec.rounds * spec.e_train_per_round_j


def crossing_horizon(spec: BreakEvenSpec):
    """Horizon at which streaming costs as much as FL (inf if streaming is free)."""
    per_second = spec.sampling_rate_hz * spec.d_x * spec.bits_per_sample * spec.eta_bit_j
    if per_second == 0:
        return math.inf
    return fl_energy(spec) / per_second


def breakeven_rows(spec: BreakEvenSpec, horizons) -> list[dict]:
    e_fl = fl_energy(spec)
    rows = []
    for t in horizons:
        e_stream = stream_energy(spec, t)
        rows.append({"horizon_s": t, "e_stream_j": e_stream, "e_fl_j": e_fl,
                     "ratio": e_fl / e_stream if e_stream else math.inf})
    return rows


def crossing_summary(spec: BreakEvenSpec) -> str:
    t_star = crossing_horizon(spec)
    return (f"crossing horizon T* = {t_star!r} s: FL uses less energy than raw streaming "
            f"for horizons longer than T* (E_FL = {fl_energy(spec)!r} J)")


def write_breakeven_csv(path, spec: BreakEvenSpec, horizons) -> list[dict]:
    rows = breakeven_rows(spec, horizons)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["horizon_s", "e_stream_j", "e_fl_j", "ratio"],
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) for k, v in r.items()})
    return rows
