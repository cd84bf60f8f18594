"""Posture-dependent HBC link emulation.

Loss (dB) is drawn per (body location, posture) group, mapped to a packet
error rate through a clamped logistic link budget, and then to rate,
retransmission factor and energy per bit.
"""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_POSTURE = "default"
MIN_FIT_SAMPLES = 8


class ChannelConfigError(ValueError):
    """Channel model is inconsistent or misses a required entry."""


class InsufficientSamplesError(ChannelConfigError):
    pass


@dataclass(frozen=True)
class PostureState:
    id: int
    label: str
    transition_row: tuple[float, ...]

    def __post_init__(self):
        row = np.asarray(self.transition_row, dtype=float)
        if row.ndim != 1 or row.size == 0:
            raise ChannelConfigError(f"posture {self.label!r}: empty transition row")
        if np.any(row < 0) or np.any(row > 1):
            raise ChannelConfigError(f"posture {self.label!r}: entries must lie in [0, 1]")
        if abs(row.sum() - 1.0) > 1e-9:
            raise ChannelConfigError(
                f"posture {self.label!r}: transition row sums to {row.sum()!r}, not 1"
            )
        if not 0 <= self.id < row.size:
            raise ChannelConfigError(f"posture id {self.id} outside row of length {row.size}")


@dataclass(frozen=True)
class PostureChain:
    """First-order Markov chain over posture states shared by all clients."""

    states: tuple[PostureState, ...]

    def __post_init__(self):
        if not self.states:
            raise ChannelConfigError("at least one posture state is required")
        n = len(self.states)
        for k, s in enumerate(self.states):
            if s.id != k:
                raise ChannelConfigError("posture ids must be 0..n-1 in order")
            if len(s.transition_row) != n:
                raise ChannelConfigError(
                    f"posture {s.label!r}: row length {len(s.transition_row)} != {n} states"
                )

    @classmethod
    def from_matrix(cls, labels: Sequence[str], matrix) -> "PostureChain":
        matrix = np.asarray(matrix, dtype=float)
        return cls(tuple(
            PostureState(k, str(lab), tuple(float(x) for x in matrix[k]))
            for k, lab in enumerate(labels)
        ))

    @classmethod
    def sticky(cls, labels: Sequence[str], stay: float = 0.9) -> "PostureChain":
        """Chain that stays put with probability ``stay``, else moves uniformly."""
        n = len(labels)
        if n == 1:
            return cls.from_matrix(labels, [[1.0]])
        off = (1.0 - stay) / (n - 1)
        m = np.full((n, n), off)
        np.fill_diagonal(m, stay)
        return cls.from_matrix(labels, m)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.states]

    def by_label(self, label: str) -> PostureState:
        for s in self.states:
            if s.label == label:
                return s
        raise ChannelConfigError(f"unknown posture {label!r}")


def step_posture(current: PostureState, chain: PostureChain,
                 rng: np.random.Generator | None = None, u: float | None = None) -> PostureState:
    """Draw the next posture by inverse CDF on one uniform draw.

    ``u`` may be passed directly (then ``rng`` is unused).
    """
    if u is None:
        u = float(rng.random())
    cdf = np.cumsum(current.transition_row)
    k = int(np.searchsorted(cdf, u, side="right"))
    # float round-off can leave cdf[-1] a hair below 1
    k = min(k, len(cdf) - 1)
    while current.transition_row[k] == 0.0 and k > 0:
        k -= 1
    return chain.states[k]


@dataclass(frozen=True)
class LossDistribution:
    family: str  # "lognormal" (normal in dB) or "empirical"
    mu_db: float
    sigma_db: float
    table: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in ("lognormal", "empirical"):
            raise ChannelConfigError(f"unknown loss family {self.family!r}")
        if not self.sigma_db >= 0:
            raise ChannelConfigError("sigma_db must be >= 0")
        if self.family == "empirical":
            if not self.table:
                raise ChannelConfigError("empirical loss table is empty")
            if any(b < a for a, b in zip(self.table, self.table[1:])):
                raise ChannelConfigError("empirical loss table must be sorted ascending")

    def sample(self, rng: np.random.Generator) -> float:
        if self.family == "empirical":
            u = rng.random()
            return float(self.table[min(int(u * len(self.table)), len(self.table) - 1)])
        if self.sigma_db == 0.0:
            return float(self.mu_db)
        return float(self.mu_db + self.sigma_db * rng.standard_normal())


@dataclass(frozen=True)
class LossModel:
    groups: dict[tuple[str, str], LossDistribution]

    def get(self, location: str, posture: str) -> LossDistribution:
        try:
            return self.groups[(location, posture)]
        except KeyError:
            raise ChannelConfigError(
                f"loss model has no entry for location={location!r}, posture={posture!r}"
            ) from None

    @property
    def locations(self) -> list[str]:
        return sorted({loc for loc, _ in self.groups})

    @property
    def postures(self) -> list[str]:
        return sorted({p for _, p in self.groups})


def fit_loss_model(samples: Iterable[tuple[str, str | None, float]],
                   family: str = "lognormal") -> LossModel:
    """Fit one loss distribution per (location, posture) group.

    The lognormal family stores the sample mean and the sample (ddof=1)
    standard deviation of loss in dB; the empirical family also stores the
    sorted samples. A missing posture label maps to ``"default"``.
    """
    grouped: dict[tuple[str, str], list[float]] = defaultdict(list)
    for location, posture, loss_db in samples:
        grouped[(location, posture or DEFAULT_POSTURE)].append(float(loss_db))
    if not grouped:
        raise InsufficientSamplesError("no loss samples given")
    groups = {}
    for key in sorted(grouped):
        vals = np.asarray(grouped[key], dtype=float)
        if vals.size < MIN_FIT_SAMPLES:
            raise InsufficientSamplesError(
                f"insufficient samples for location={key[0]!r}, posture={key[1]!r}: "
                f"{vals.size} < {MIN_FIT_SAMPLES}"
            )
        mu = float(vals.mean())
        sigma = float(vals.std(ddof=1))
        table = tuple(float(x) for x in np.sort(vals)) if family == "empirical" else ()
        groups[key] = LossDistribution(family, mu, sigma, table)
    return LossModel(groups)


@dataclass(frozen=True)
class LinkBudget:
    loss_midpoint_db: float = 80.0
    loss_slope_db: float = 4.0
    eps_floor: float = 0.001
    eps_ceil: float = 0.95
    # (loss threshold dB, rate bit/s); a tier matches when loss_db <= threshold
    rate_tiers: tuple[tuple[float, float], ...] = ((65.0, 1.0e6), (80.0, 250.0e3), (1.0e9, 50.0e3))
    eta_bit_tx_j: float = 1.0e-9
    eta_bit_rx_j: float = 0.5e-9
    packet_payload_bits: int = 256
    retry_cap: int = 4

    def __post_init__(self):
        object.__setattr__(self, "rate_tiers",
                           tuple((float(t), float(r)) for t, r in self.rate_tiers))
        if not 0.0 <= self.eps_floor < self.eps_ceil < 1.0:
            raise ChannelConfigError("need 0 <= eps_floor < eps_ceil < 1")
        if self.loss_slope_db <= 0:
            raise ChannelConfigError("loss_slope_db must be positive")
        if not self.rate_tiers or any(r <= 0 for _, r in self.rate_tiers):
            raise ChannelConfigError("rate_tiers must be nonempty with positive rates")
        rates = [r for _, r in self.rate_tiers]
        if rates != sorted(rates, reverse=True):
            raise ChannelConfigError("rate_tiers must be ordered by descending rate")
        if self.retry_cap < 1:
            raise ChannelConfigError("retry_cap must be >= 1")
        if self.packet_payload_bits < 1:
            raise ChannelConfigError("packet_payload_bits must be >= 1")
        if self.eta_bit_tx_j <= 0 or self.eta_bit_rx_j < 0:
            raise ChannelConfigError("energy per bit must be positive")

    def packet_error_rate(self, loss_db: float) -> float:
        z = (loss_db - self.loss_midpoint_db) / self.loss_slope_db
        # stable logistic
        if z >= 0:
            p = 1.0 / (1.0 + math.exp(-z))
        else:
            ez = math.exp(z)
            p = ez / (1.0 + ez)
        return min(max(p, self.eps_floor), self.eps_ceil)

    def rate(self, loss_db: float) -> float:
        for threshold, r in self.rate_tiers:
            if loss_db <= threshold:
                return r
        return self.rate_tiers[-1][1]


def retransmission_factor(per):
    """Expected transmissions per delivered packet, 1 / (1 - per)."""
    if not per < 1:
        raise ValueError("retransmission factor needs per < 1")
    return 1 / (1 - per)


@dataclass(frozen=True)
class ChannelSnapshot:
    client_id: int
    loss_db: float
    per: float
    rate_bits_per_s: float
    eta_bit_j: float
    rho: float
    link_failed_flag: bool


def realize_link(client_id: int, location: str, loss_model: LossModel, posture: PostureState,
                 budget: LinkBudget, rng: np.random.Generator,
                 lossless: bool = False) -> ChannelSnapshot:
    """Draw one link realization for a client at the current posture.

    ``link_failed_flag`` is a pilot outcome: a single packet that would not
    get through within ``retry_cap`` attempts. ``lossless`` pins per to 0
    (ideal-link baselines) while still drawing loss for the rate tier.
    """
    dist = loss_model.get(location, posture.label)
    loss_db = dist.sample(rng)
    per = 0.0 if lossless else budget.packet_error_rate(loss_db)
    pilot_u = rng.random()
    failed = bool(pilot_u < per ** budget.retry_cap)
    return ChannelSnapshot(
        client_id=client_id,
        loss_db=loss_db,
        per=per,
        rate_bits_per_s=budget.rate(loss_db),
        eta_bit_j=budget.eta_bit_tx_j,
        rho=retransmission_factor(per),
        link_failed_flag=failed,
    )


@dataclass(frozen=True)
class DeliveryResult:
    delivered: bool
    packets_total: int
    packets_delivered: int
    packets_sent: int
    tx_energy_j: float
    tx_time_s: float
    reliability_r: float


def transmit_update(snapshot: ChannelSnapshot, payload_bits: int, budget: LinkBudget,
                    rng: np.random.Generator) -> DeliveryResult:
    """Send a payload packet by packet with per-packet retries.

    Packets are fixed size (the last one padded), so energy and airtime are
    charged per transmitted packet.
    """
    if payload_bits < 0:
        raise ValueError("payload_bits must be >= 0")
    n_packets = -(-int(payload_bits) // budget.packet_payload_bits)
    if n_packets == 0:
        return DeliveryResult(True, 0, 0, 0, 0.0, 0.0, 1.0)
    # attempts until first success; > retry_cap means the packet is lost
    attempts = rng.geometric(1.0 - snapshot.per, size=n_packets)
    ok = attempts <= budget.retry_cap
    sent = int(np.minimum(attempts, budget.retry_cap).sum())
    n_ok = int(ok.sum())
    bits = sent * budget.packet_payload_bits
    return DeliveryResult(
        delivered=n_ok == n_packets,
        packets_total=n_packets,
        packets_delivered=n_ok,
        packets_sent=sent,
        tx_energy_j=snapshot.eta_bit_j * bits,
        tx_time_s=bits / snapshot.rate_bits_per_s,
        reliability_r=n_ok / n_packets,
    )


def worst_case_packets(payload_bits: int, budget: LinkBudget) -> int:
    return -(-int(payload_bits) // budget.packet_payload_bits) * budget.retry_cap


@dataclass
class ChannelModel:
    """Everything needed to emulate links: posture chain, loss groups, budget."""

    postures: PostureChain
    loss_model: LossModel
    budget: LinkBudget = field(default_factory=LinkBudget)
    carrier_frequency_hz: float | None = None

    def __post_init__(self):
        for p in self.postures.labels:
            for loc in self.loss_model.locations:
                self.loss_model.get(loc, p)

    def to_dict(self) -> dict:
        return {
            "posture_chain": [
                {"id": s.id, "label": s.label, "transition_row": list(s.transition_row)}
                for s in self.postures.states
            ],
            "loss_model": [
                {"location": loc, "posture": pos, **asdict(d), "table": list(d.table)}
                for (loc, pos), d in sorted(self.loss_model.groups.items())
            ],
            "link_budget": {**asdict(self.budget),
                            "rate_tiers": [list(t) for t in self.budget.rate_tiers]},
            "carrier_frequency_hz": self.carrier_frequency_hz,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ChannelModel":
        try:
            chain = PostureChain(tuple(
                PostureState(int(s["id"]), str(s["label"]), tuple(s["transition_row"]))
                for s in doc["posture_chain"]
            ))
            groups = {
                (g["location"], g["posture"]): LossDistribution(
                    g["family"], float(g["mu_db"]), float(g["sigma_db"]), tuple(g.get("table", ())))
                for g in doc["loss_model"]
            }
            lb = dict(doc.get("link_budget", {}))
            if "rate_tiers" in lb:
                lb["rate_tiers"] = tuple(tuple(t) for t in lb["rate_tiers"])
            budget = LinkBudget(**lb)
        except (KeyError, TypeError) as exc:
            raise ChannelConfigError(f"malformed channel model document: {exc}") from exc
        return cls(chain, LossModel(groups), budget, doc.get("carrier_frequency_hz"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ChannelModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


LOSS_CSV_COLUMNS = ("location", "posture", "loss_db")


def read_loss_csv(path) -> list[tuple[str, str | None, float]]:
    """Read ``location,posture,loss_db`` rows; raises with a row number on bad data."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in LOSS_CSV_COLUMNS:
            if col not in header:
                raise ChannelConfigError(f"loss CSV missing column {col!r}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            loc = (rec["location"] or "").strip()
            if not loc:
                raise ChannelConfigError(f"row {lineno}: empty location")
            try:
                loss = float(rec["loss_db"])
            except (TypeError, ValueError):
                raise ChannelConfigError(
                    f"row {lineno}: loss_db {rec['loss_db']!r} is not a number") from None
            if not math.isfinite(loss):
                raise ChannelConfigError(f"row {lineno}: loss_db must be finite")
            rows.append((loc, (rec["posture"] or "").strip() or None, loss))
    return rows


# Synthetic defaults: distal sites see more loss, and walking hurts them most.
DEFAULT_LOCATION_LOSS_DB = {"chest": 58.0, "waist": 62.0, "wrist": 70.0, "ankle": 76.0}
DEFAULT_POSTURE_OFFSET_DB = {"sitting": 0.0, "standing": 1.0, "walking": 4.0}


def default_channel_model(locations: Sequence[str],
                          location_loss_db: dict[str, float] | None = None,
                          sigma_db: float = 3.0,
                          posture_offsets_db: dict[str, float] | None = None,
                          stay: float = 0.85,
                          budget: LinkBudget | None = None) -> ChannelModel:
    """Synthetic posture/loss model for self-contained runs.

    Posture offsets scale with how lossy a site is, so a posture change
    weakens distal links together.
    """
    losses = dict(DEFAULT_LOCATION_LOSS_DB)
    losses.update(location_loss_db or {})
    offsets = posture_offsets_db or DEFAULT_POSTURE_OFFSET_DB
    base = min(losses.get(loc, 65.0) for loc in locations)
    groups = {}
    for loc in locations:
        mu = losses.get(loc, 65.0)
        distal = 1.0 + (mu - base) / 10.0
        for pos, off in offsets.items():
            groups[(loc, pos)] = LossDistribution("lognormal", mu + off * distal, sigma_db)
    chain = PostureChain.sticky(list(offsets), stay)
    return ChannelModel(chain, LossModel(groups), budget or LinkBudget())
