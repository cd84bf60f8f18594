"""Windowing, normalization, subject-disjoint splits and synthetic body-location data."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .rng import substream


class DatasetError(ValueError):
    pass


@dataclass
class SensorStream:
    """Time-ordered rows in the ``timestamp_s,subject,location,label,c1..cK`` schema."""

    timestamp_s: np.ndarray
    subject: np.ndarray
    location: np.ndarray
    label: np.ndarray
    channels: np.ndarray  # (n_rows, K)

    def __len__(self):
        return len(self.timestamp_s)


def read_stream_csv(path) -> SensorStream:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        fixed = ["timestamp_s", "subject", "location", "label"]
        if header[:4] != fixed or len(header) < 5:
            raise DatasetError(
                f"{path}: header must start with {','.join(fixed)} followed by channel columns")
        ts, subj, loc, lab, ch = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                ts.append(float(row[0]))
                lab.append(int(row[3]))
                ch.append([float(v) for v in row[4:]])
            except ValueError as exc:
                raise DatasetError(f"{path}: row {lineno}: {exc}") from None
            subj.append(row[1])
            loc.append(row[2])
    return SensorStream(np.asarray(ts), np.asarray(subj), np.asarray(loc),
                        np.asarray(lab, dtype=int), np.asarray(ch, dtype=float))


@dataclass
class WindowedDataset:
    X: np.ndarray  # (n_windows, d_x)
    y: np.ndarray
    subject: np.ndarray
    location: np.ndarray
    num_classes: int
    sampling_rate_hz: float

    def __post_init__(self):
        if len(self.X) == 0:
            raise DatasetError("windowed dataset is empty")
        if self.X.ndim != 2:
            raise DatasetError("feature matrix must be 2-D")
        if np.any(self.y < 0) or np.any(self.y >= self.num_classes):
            raise DatasetError("labels outside [0, num_classes)")

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return len(self.y)

    def subset(self, mask) -> "WindowedDataset":
        return replace(self, X=self.X[mask], y=self.y[mask],
                       subject=self.subject[mask], location=self.location[mask])


def window_features(block: np.ndarray) -> np.ndarray:
    """Per-channel (mean, std, min, max), channel-major."""
    feats = np.stack([block.mean(axis=0), block.std(axis=0), block.min(axis=0), block.max(axis=0)],
                     axis=1)
    return feats.reshape(-1)


def window_count(n_samples: int, window_len: int, stride: int) -> int:
    if n_samples < window_len:
        return 0
    return (n_samples - window_len) // stride + 1


def window_stream(stream: SensorStream, window_s: float, overlap_fraction: float,
                  sampling_rate_hz: float, num_classes: int | None = None) -> WindowedDataset:
    """Cut each (subject, location) segment into fixed-length windows.

    The window label is the majority label (ties to the lowest class index);
    trailing partial windows are dropped.
    """
    if len(stream) == 0:
        raise DatasetError("empty sensor stream")
    if not 1.0 <= window_s <= 5.0:
        raise DatasetError("window_s must lie in [1, 5] seconds")
    if not 0.0 <= overlap_fraction < 1.0:
        raise DatasetError("overlap_fraction must lie in [0, 1)")
    window_len = int(round(window_s * sampling_rate_hz))
    if window_len < 1:
        raise DatasetError("window shorter than one sample")
    stride = max(1, int(round(window_s * (1.0 - overlap_fraction) * sampling_rate_hz)))
    n_cls = int(num_classes if num_classes is not None else stream.label.max() + 1)

    X, y, subj, loc = [], [], [], []
    keys = list(dict.fromkeys(zip(stream.subject.tolist(), stream.location.tolist())))
    for s, l in keys:
        idx = np.flatnonzero((stream.subject == s) & (stream.location == l))
        t = stream.timestamp_s[idx]
        if np.any(np.diff(t) <= 0):
            raise DatasetError(f"non-monotone timestamps for subject={s!r}, location={l!r}")
        chans = stream.channels[idx]
        labels = stream.label[idx]
        for w in range(window_count(len(idx), window_len, stride)):
            a = w * stride
            X.append(window_features(chans[a:a + window_len]))
            y.append(int(np.argmax(np.bincount(labels[a:a + window_len], minlength=n_cls))))
            subj.append(s)
            loc.append(l)
    if not X:
        raise DatasetError("no complete window in the stream")
    return WindowedDataset(np.asarray(X), np.asarray(y, dtype=int), np.asarray(subj),
                           np.asarray(loc), n_cls, float(sampling_rate_hz))


def normalize_per_split(train: np.ndarray, heldout: np.ndarray | None = None):
    """Z-score with train statistics only; near-constant features are only centered."""
    train = np.asarray(train, dtype=float)
    if len(train) == 0:
        raise DatasetError("train split is empty")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    scale = np.where(std < 1e-12, 1.0, std)
    out_train = (train - mean) / scale
    if heldout is None:
        return out_train, None
    return out_train, (np.asarray(heldout, dtype=float) - mean) / scale


def split_subject_disjoint(ds: WindowedDataset, test_subjects) -> tuple[WindowedDataset, WindowedDataset]:
    test_subjects = set(test_subjects)
    present = set(ds.subject.tolist())
    unknown = test_subjects - present
    if unknown:
        raise DatasetError(f"test subjects not in dataset: {sorted(unknown)}")
    if not test_subjects:
        raise DatasetError("empty test subject set leaves no held-out windows")
    if test_subjects == present:
        raise DatasetError("all subjects held out leaves no training windows")
    mask = np.isin(ds.subject, list(test_subjects))
    return ds.subset(~mask), ds.subset(mask)


@dataclass
class ClientPartition:
    client_id: int
    location: str
    X_train: np.ndarray
    y_train: np.ndarray
    X_heldout: np.ndarray
    y_heldout: np.ndarray
    num_classes: int
    subject_disjoint: bool = True

    def __post_init__(self):
        if len(self.y_train) < 1:
            raise DatasetError(f"client {self.client_id} ({self.location}) has no training windows")

    @property
    def n(self) -> int:
        return len(self.y_train)

    @property
    def d_x(self) -> int:
        return self.X_train.shape[1]

    def label_histogram(self) -> np.ndarray:
        h = np.bincount(self.y_train, minlength=self.num_classes).astype(float)
        return h / h.sum()


def partition_by_location(train: WindowedDataset, heldout: WindowedDataset,
                          normalize: bool = True) -> list[ClientPartition]:
    """One client per body location; normalization uses each client's train split."""
    clients = []
    for cid, loc in enumerate(sorted(set(train.location.tolist()))):
        tr = train.location == loc
        ho = heldout.location == loc
        Xtr, Xho = train.X[tr], heldout.X[ho]
        if normalize:
            Xtr, Xho = normalize_per_split(Xtr, Xho)
        clients.append(ClientPartition(cid, loc, Xtr, train.y[tr], Xho, heldout.y[ho],
                                       train.num_classes))
    return clients


@dataclass
class SyntheticSpec:
    locations: list[str] = field(default_factory=lambda: ["chest", "waist", "wrist", "ankle"])
    num_classes: int = 4
    # one row per location; None means a built-in non-IID mix
    class_weights: list[list[float]] | None = None
    windows_per_client: int = 120
    heldout_per_client: int = 80
    d_x: int = 8
    class_mean_separation: float = 3.0
    noise_sigma: float = 1.0
    location_offset: float = 0.5


def default_class_weights(n_locations: int, num_classes: int) -> list[list[float]]:
    """Each location is dominated by one class and sees the others a little."""
    rows = []
    for i in range(n_locations):
        w = np.full(num_classes, 0.4 / max(num_classes - 1, 1))
        w[i % num_classes] = 0.6
        rows.append((w / w.sum()).tolist())
    return rows


def generate_synthetic(spec: SyntheticSpec, seed: int) -> list[ClientPartition]:
    """Gaussian class clusters with per-location offsets and label skew.

    Held-out windows are class-balanced so every location is scored on every
    activity; training windows follow the location's class weights.
    """
    if spec.num_classes < 2:
        raise DatasetError("num_classes must be >= 2")
    weights = spec.class_weights or default_class_weights(len(spec.locations), spec.num_classes)
    if len(weights) != len(spec.locations):
        raise DatasetError("class_weights needs one row per location")
    weights = np.asarray(weights, dtype=float)
    if weights.shape[1] != spec.num_classes or np.any(weights < 0) \
            or np.any(np.abs(weights.sum(axis=1) - 1.0) > 1e-9):
        raise DatasetError("each class_weights row must be a probability vector over classes")

    geo = substream(seed, "synthetic.geometry")
    dirs = geo.standard_normal((spec.num_classes, spec.d_x))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    class_means = spec.class_mean_separation * dirs
    offsets = spec.location_offset * geo.standard_normal((len(spec.locations), spec.d_x))

    clients = []
    for cid, loc in enumerate(spec.locations):
        rng = substream(seed, "synthetic.client", cid)
        y_tr = rng.choice(spec.num_classes, size=spec.windows_per_client, p=weights[cid])
        y_ho = np.arange(spec.heldout_per_client) % spec.num_classes
        def draw(labels):
            noise = spec.noise_sigma * rng.standard_normal((len(labels), spec.d_x))
            return class_means[labels] + offsets[cid] + noise
        X_tr = draw(y_tr)
        X_ho = draw(y_ho)
        clients.append(ClientPartition(cid, loc, X_tr, y_tr.astype(int), X_ho, y_ho.astype(int),
                                       spec.num_classes))
    return clients


def pooled(clients: Sequence[ClientPartition], split: str = "train") -> tuple[np.ndarray, np.ndarray]:
    if split == "train":
        return (np.concatenate([c.X_train for c in clients]),
                np.concatenate([c.y_train for c in clients]))
    return (np.concatenate([c.X_heldout for c in clients]),
            np.concatenate([c.y_heldout for c in clients]))


def expected_window_count(n_samples: int, window_s: float, overlap_fraction: float,
                          sampling_rate_hz: float) -> int:
    window_len = int(round(window_s * sampling_rate_hz))
    stride = max(1, int(round(window_s * (1.0 - overlap_fraction) * sampling_rate_hz)))
    return window_count(n_samples, window_len, stride)


def load_csv_clients(path, window_s: float, overlap_fraction: float, sampling_rate_hz: float,
                     test_subjects: Sequence[str], num_classes: int | None = None
                     ) -> list[ClientPartition]:
    """CSV stream -> windows -> subject-disjoint split -> one client per location."""
    ds = window_stream(read_stream_csv(path), window_s, overlap_fraction, sampling_rate_hz,
                       num_classes)
    train, held = split_subject_disjoint(ds, test_subjects)
    return partition_by_location(train, held)

