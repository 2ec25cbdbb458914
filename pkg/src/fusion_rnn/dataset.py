"""Two-stream labelled events: JSON-lines I/O, synthetic generator, k-fold splits."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import atomic_write_text

CLASS_NAMES = ("left_turn", "right_turn", "left_lane_change", "right_lane_change", "straight")
STRAIGHT = "straight"
SETTINGS = {
    "all": CLASS_NAMES,
    "lane": ("left_lane_change", "right_lane_change", STRAIGHT),
    "turn": ("left_turn", "right_turn", STRAIGHT),
}
DEFAULT_SECONDS_PER_STEP = 0.8


@dataclass
class Event:
    event_id: str
    label: str
    inside: np.ndarray  # (T, inside_dim)
    outside: np.ndarray  # (T, outside_dim)
    seconds_per_step: float = DEFAULT_SECONDS_PER_STEP
    # set on augmented sub-events: id of the original event and the 0-based
    # half-open slice [start, stop) it was cut from
    source_id: str | None = None
    span: tuple[int, int] | None = None

    def __post_init__(self):
        self.inside = np.asarray(self.inside, dtype=np.float64)
        self.outside = np.asarray(self.outside, dtype=np.float64)
        if self.inside.ndim != 2 or self.outside.ndim != 2:
            raise ValueError(f"event {self.event_id}: streams must be 2-D (T, dim)")
        if self.inside.shape[0] != self.outside.shape[0]:
            raise ValueError(
                f"event {self.event_id}: inside has {self.inside.shape[0]} steps, outside has {self.outside.shape[0]}"
            )
        if self.inside.shape[0] < 1:
            raise ValueError(f"event {self.event_id}: empty sequence")
        if not (np.all(np.isfinite(self.inside)) and np.all(np.isfinite(self.outside))):
            raise ValueError(f"event {self.event_id}: non-finite feature value")

    @property
    def T(self) -> int:
        return self.inside.shape[0]

    @property
    def origin(self) -> str:
        return self.source_id or self.event_id


@dataclass
class Dataset:
    events: list[Event]
    inside_dim: int
    outside_dim: int
    class_names: list[str] = field(default_factory=lambda: list(CLASS_NAMES))

    def __post_init__(self):
        unknown = set(self.class_names) - set(CLASS_NAMES)
        if unknown:
            raise ValueError(f"unknown class names {sorted(unknown)}")
        if STRAIGHT not in self.class_names:
            raise ValueError("class_names must include 'straight'")
        for e in self.events:
            if e.inside.shape[1] != self.inside_dim or e.outside.shape[1] != self.outside_dim:
                raise ValueError(
                    f"event {e.event_id}: dims ({e.inside.shape[1]}, {e.outside.shape[1]}) "
                    f"!= dataset dims ({self.inside_dim}, {self.outside_dim})"
                )
            if e.label not in self.class_names:
                raise ValueError(f"event {e.event_id}: label {e.label!r} not in {self.class_names}")

    def __len__(self):
        return len(self.events)

    def label_index(self, label: str) -> int:
        return self.class_names.index(label)

    def subset(self, events) -> "Dataset":
        return Dataset(list(events), self.inside_dim, self.outside_dim, list(self.class_names))


def restrict(d: Dataset, setting: str) -> Dataset:
    """Keep only the events of one prediction setting (all / lane / turn)."""
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {sorted(SETTINGS)}, got {setting!r}")
    names = [c for c in CLASS_NAMES if c in SETTINGS[setting]]
    return Dataset([e for e in d.events if e.label in names], d.inside_dim, d.outside_dim, names)


# ---------------------------------------------------------------- JSON lines

def event_to_json(e: Event) -> str:
    return json.dumps(
        {"event_id": e.event_id, "label": e.label, "inside": e.inside.tolist(), "outside": e.outside.tolist()}
    )


def save_events(d: Dataset, path) -> None:
    atomic_write_text(path, "".join(event_to_json(e) + "\n" for e in d.events))


def load_events(path, seconds_per_step: float = DEFAULT_SECONDS_PER_STEP, class_names=None) -> Dataset:
    """Read a JSON-lines event file.

    Dimensions are taken from the first event. Unless ``class_names`` is
    given, the class list is the canonical order restricted to the labels in
    the file, with ``straight`` always present.
    """
    events = []
    dims = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                eid, label = str(rec["event_id"]), rec["label"]
                if label not in CLASS_NAMES:
                    raise ValueError(f"unknown label {label!r}")
                inside = np.asarray(rec["inside"], dtype=np.float64)
                outside = np.asarray(rec["outside"], dtype=np.float64)
                if inside.ndim != 2 or outside.ndim != 2:
                    raise ValueError("inside/outside must be non-ragged lists of equal-length vectors")
                ev = Event(eid, label, inside, outside, seconds_per_step)
                if dims is None:
                    dims = (inside.shape[1], outside.shape[1])
                elif (inside.shape[1], outside.shape[1]) != dims:
                    raise ValueError(f"dims ({inside.shape[1]}, {outside.shape[1]}) differ from first event {dims}")
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            events.append(ev)
    if not events:
        raise ValueError(f"{path}: no events")
    ids = [e.event_id for e in events]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate event_id values")
    if class_names is None:
        present = {e.label for e in events} | {STRAIGHT}
        class_names = [c for c in CLASS_NAMES if c in present]
    return Dataset(events, dims[0], dims[1], list(class_names))


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SyntheticConfig:
    events_per_class: int = 200
    T_range: tuple[int, int] = (8, 14)
    onset_fraction_range: tuple[float, float] = (0.3, 0.6)
    signal_gain: float = 1.5
    noise_std: float = 0.5
    seed: int = 1
    setting: str = "all"
    inside_dim: int = 12
    outside_dim: int = 6
    outside_gain: float = 0.3  # turn-cue strength on the outside stream, relative to signal_gain
    seconds_per_step: float = DEFAULT_SECONDS_PER_STEP

    def validate(self, min_len: int = 5) -> None:
        if self.events_per_class < 1:
            raise ValueError("events_per_class must be >= 1")
        lo, hi = self.T_range
        if not min_len <= lo <= hi:
            raise ValueError(f"T_range {self.T_range} must satisfy {min_len} <= min <= max")
        a, b = self.onset_fraction_range
        if not 0.0 < a <= b < 1.0:
            raise ValueError(f"onset_fraction_range {self.onset_fraction_range} must satisfy 0 < min <= max < 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {sorted(SETTINGS)}")
        if self.inside_dim < 4 or self.outside_dim < 2:
            raise ValueError("generator needs inside_dim >= 4 and outside_dim >= 2")


def class_directions(inside_dim: int) -> dict[str, np.ndarray]:
    """Fixed orthonormal intent directions, one per maneuver, independent of the data seed."""
    q, _ = np.linalg.qr(np.random.default_rng(20_151_123).standard_normal((inside_dim, inside_dim)))
    return {name: q[:, k].copy() for k, name in enumerate(CLASS_NAMES[:4])}


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Noise before a random intent onset, then a cue that ramps toward the maneuver.

    After onset step ``t0`` the inside stream drifts along the class
    direction with magnitude ``signal_gain * (t - t0 + 1) / (T - t0 + 1)``;
    turns also shift the outside stream by a weaker constant offset.
    ``straight`` events are pure noise on both streams.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dirs = class_directions(cfg.inside_dim)
    out_dirs = {"left_turn": np.eye(cfg.outside_dim)[0], "right_turn": np.eye(cfg.outside_dim)[1]}
    names = [c for c in CLASS_NAMES if c in SETTINGS[cfg.setting]]
    events = []
    for label in names:
        for j in range(cfg.events_per_class):
            T = int(rng.integers(cfg.T_range[0], cfg.T_range[1] + 1))
            frac = rng.uniform(*cfg.onset_fraction_range)
            X = rng.normal(0.0, cfg.noise_std, size=(T, cfg.inside_dim)) if cfg.noise_std > 0 else np.zeros((T, cfg.inside_dim))
            Z = rng.normal(0.0, cfg.noise_std, size=(T, cfg.outside_dim)) if cfg.noise_std > 0 else np.zeros((T, cfg.outside_dim))
            if label != STRAIGHT:
                # 0-based onset index; onset step t0 = round(frac * T) in 1-based time
                t0 = min(max(int(round(frac * T)), 1), T) - 1
                ramp = np.arange(1, T - t0 + 1) / (T - t0)
                X[t0:] += cfg.signal_gain * ramp[:, None] * dirs[label][None, :]
                if label in out_dirs:
                    Z[t0:] += cfg.outside_gain * cfg.signal_gain * out_dirs[label][None, :]
            events.append(Event(f"{label}-{j:04d}", label, X, Z, cfg.seconds_per_step))
    return Dataset(events, cfg.inside_dim, cfg.outside_dim, names)


# ---------------------------------------------------------------- folds

@dataclass
class FoldSplit:
    k: int
    assignments: dict[str, int]

    def fold_ids(self, fold: int) -> set[str]:
        return {eid for eid, f in self.assignments.items() if f == fold}

    def split(self, d: Dataset, fold: int) -> tuple[Dataset, Dataset]:
        """``(train, test)`` with ``fold`` held out."""
        if not 0 <= fold < self.k:
            raise ValueError(f"fold {fold} outside [0, {self.k})")
        train = [e for e in d.events if self.assignments[e.origin] != fold]
        test = [e for e in d.events if self.assignments[e.origin] == fold]
        return d.subset(train), d.subset(test)


def kfold_split(d: Dataset, k: int, seed: int) -> FoldSplit:
    """Seeded uniform random partition into ``k`` folds whose sizes differ by at most one."""
    n = len(d.events)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"cannot split {n} events into {k} folds")
    ids = [e.event_id for e in d.events]
    if len(set(ids)) != n:
        raise ValueError("event ids must be unique to split")
    perm = np.random.default_rng(seed).permutation(n)
    return FoldSplit(k, {ids[j]: pos % k for pos, j in enumerate(perm)})


def dataset_fingerprint(d: Dataset) -> str:
    h = hashlib.sha256()
    for e in d.events:
        h.update(event_to_json(e).encode())
    return h.hexdigest()

