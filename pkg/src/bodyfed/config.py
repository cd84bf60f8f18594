"""Scenario configuration: nested dataclasses <-> JSON, with dotted-path overrides."""
from __future__ import annotations

import copy
import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .channel import LinkBudget
from .datasets import SyntheticSpec
from .scheduler import SchedulerConfig

MODES = ("federated", "centralized", "local_only")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "synthetic"  # "synthetic" or "csv"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    csv_path: str | None = None
    window_s: float = 2.0
    overlap_fraction: float = 0.5
    sampling_rate_hz: float = 50.0
    test_subjects: list[str] = field(default_factory=list)
    num_classes: int | None = None


@dataclass
class ChannelConfig:
    model_path: str | None = None
    # synthetic model knobs, used when model_path is None
    location_loss_db: dict[str, float] = field(default_factory=dict)
    sigma_db: float = 3.0
    posture_stay: float = 0.85
    lossless: bool = False
    budget: LinkBudget = field(default_factory=LinkBudget)


@dataclass
class LearningConfig:
    epochs: int = 1
    learning_rate: float = 0.3
    batch_size: int = 16
    kappa_train_j: float = 2e-10
    scheme: str = "quantize_q"
    q: int = 8
    k_fraction: float = 0.1


@dataclass
class EnergyConfig:
    # scalar or one value per client
    budget_j: float | list[float] = 1e-3
    memory_cap_bits: float | list[float] = 1e6
    t_train_fixed_s: float = 0.05


@dataclass
class AggregationConfig:
    method: str = "auto"  # auto | fedavg | bias_corrected
    beta: float = 0.1
    floor: float = 0.01


@dataclass
class StreamingConfig:
    horizon_s: float = 600.0
    sampling_rate_hz: float = 50.0
    channels_per_location: int = 9
    bits_per_sample: int = 16
    horizons_s: list[float] = field(default_factory=lambda: [60.0, 300.0, 900.0, 3600.0])
    analytic_rho: float = 1.25


@dataclass
class ScenarioConfig:
    name: str = "default"
    mode: str = "federated"
    policy: str = "bodyfed"
    rounds: int = 40
    target_f1: float = 0.9
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    streaming: StreamingConfig = field(default_factory=StreamingConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        return _build(cls, doc, "")

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)


def _to_jsonable(x):
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    return x


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint) and isinstance(value, dict):
            kwargs[name] = _build(hint, value, f"{where}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def set_dotted(doc: dict, path: str, value) -> dict:
    """Copy of ``doc`` with ``path`` (e.g. ``scheduler.k``) replaced; the key must exist."""
    out = copy.deepcopy(doc)
    node = out
    parts = path.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"dotted path not found: {path}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"dotted path not found: {path}")
    node[parts[-1]] = value
    return out
