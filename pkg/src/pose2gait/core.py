"""Domain types and the line-delimited walk / feature file formats."""

from __future__ import annotations

import gzip
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

JOINTS_FULL: tuple[str, ...] = (
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hip", "right_hip",
    "left_knee", "right_knee",
    "left_ankle", "right_ankle",
)
JOINTS_LOWER: tuple[str, ...] = JOINTS_FULL[6:]

FEATURE_NAMES: tuple[str, ...] = ("step_time", "step_width", "step_length", "velocity")
# on-disk keys carry units
FEATURE_KEYS: dict[str, str] = {
    "step_time": "step_time_s",
    "step_width": "step_width_cm",
    "step_length": "step_length_cm",
    "velocity": "velocity_cm_s",
}
FEATURE_UNITS: dict[str, str] = {
    "step_time": "s", "step_width": "cm", "step_length": "cm", "velocity": "cm/s",
}

METADATA_SIZE = 5


class Cohort(str, Enum):
    DS1 = "DS1"
    DS2 = "DS2"


class Tracker(str, Enum):
    A = "TrackerA"
    B = "TrackerB"
    C = "TrackerC"


TRACKERS: tuple[Tracker, ...] = (Tracker.A, Tracker.B, Tracker.C)
COHORTS: tuple[Cohort, ...] = (Cohort.DS1, Cohort.DS2)


class SchemaError(ValueError):
    """A record violates the walk file schema."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """2D joint positions over time.

    ``frames`` has shape (T, J, 3) holding (x, y, conf) per joint. A conf of 0
    marks a missing detection; its coordinates are NaN.
    """

    frames: np.ndarray
    fps: float
    joint_names: tuple[str, ...] = JOINTS_FULL

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise SchemaError(f"frames must have shape (T, J, 3), got {frames.shape}", field="frames")
        if frames.shape[0] < 1:
            raise SchemaError("sequence has no frames", field="frames")
        if frames.shape[1] != len(self.joint_names):
            raise SchemaError(
                f"{frames.shape[1]} joints per frame but {len(self.joint_names)} joint names",
                field="frames",
            )
        if self.joint_names not in (JOINTS_FULL, JOINTS_LOWER):
            raise SchemaError(f"unsupported joint layout {list(self.joint_names)}", field="joint_names")
        conf = frames[:, :, 2]
        if not np.all((conf >= 0.0) & (conf <= 1.0)):
            raise SchemaError("conf outside [0, 1]", field="conf")
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise SchemaError(f"fps must be positive, got {self.fps}", field="fps")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1]

    @property
    def xy(self) -> np.ndarray:
        return self.frames[:, :, :2]

    @property
    def conf(self) -> np.ndarray:
        return self.frames[:, :, 2]

    def joint(self, name: str) -> np.ndarray:
        """(T, 3) slice for one joint."""
        return self.frames[:, self.joint_names.index(name)]

    def replace(self, frames: np.ndarray | None = None, joint_names: Sequence[str] | None = None) -> PoseSequence:
        return PoseSequence(
            frames=self.frames if frames is None else frames,
            fps=self.fps,
            joint_names=self.joint_names if joint_names is None else tuple(joint_names),
        )

    def __eq__(self, other):
        if not isinstance(other, PoseSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.joint_names == other.joint_names
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class GaitFeatures:
    """Walk-averaged gait features in s, cm, cm and cm/s."""

    step_time: float
    step_width: float
    step_length: float
    velocity: float

    def __post_init__(self):
        for name in FEATURE_NAMES:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise SchemaError(f"{name} must be finite and > 0, got {value}", field=FEATURE_KEYS[name])

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Iterable[float]) -> GaitFeatures:
        return cls(*(float(v) for v in values))

    def to_dict(self) -> dict[str, float]:
        return {FEATURE_KEYS[n]: float(getattr(self, n)) for n in FEATURE_NAMES}


@dataclass(frozen=True)
class WalkMetadata:
    walk_id: str
    subject_id: str
    cohort: Cohort
    tracker: Tracker

    def __post_init__(self):
        object.__setattr__(self, "cohort", Cohort(self.cohort))
        object.__setattr__(self, "tracker", Tracker(self.tracker))


@dataclass(frozen=True)
class WalkRecord:
    meta: WalkMetadata
    sequence: PoseSequence
    truth: GaitFeatures | None = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.meta.walk_id, self.meta.tracker.value)


@dataclass(frozen=True)
class LossWeights:
    step_time: float = 0.5
    step_width: float = 2.0
    step_length: float = 1.25
    velocity: float = 1.0

    def __post_init__(self):
        for name in FEATURE_NAMES:
            if not getattr(self, name) > 0:
                raise ValueError(f"loss weight for {name} must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=np.float64)


def encode_metadata(meta: WalkMetadata) -> np.ndarray:
    """One-hot tracker (A, B, C) followed by one-hot cohort (DS1, DS2)."""
    vec = np.zeros(METADATA_SIZE, dtype=np.float64)
    vec[TRACKERS.index(meta.tracker)] = 1.0
    vec[len(TRACKERS) + COHORTS.index(meta.cohort)] = 1.0
    return vec


# ---------------------------------------------------------------------------
# file formats

def _open_text(path: Path, mode: str):
    if path.suffix == ".gz":
        if "w" in mode:
            # mtime=0 keeps the gzip header byte-stable across runs
            raw = open(path, "wb")
            return io.TextIOWrapper(gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename=""), encoding="utf-8")
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def _num(value: float):
    # shortest round-trip repr; integral values written as ints to save space
    if value != value:
        return None
    if value == int(value) and abs(value) < 1e15:
        return int(value)
    return float(value)


def record_to_dict(record: WalkRecord) -> dict:
    seq = record.sequence
    frames = [[[_num(v) for v in joint] for joint in frame] for frame in seq.frames.tolist()]
    return {
        "walk_id": record.meta.walk_id,
        "subject_id": record.meta.subject_id,
        "cohort": record.meta.cohort.value,
        "tracker": record.meta.tracker.value,
        "fps": _num(seq.fps),
        "joint_names": list(seq.joint_names),
        "frames": frames,
        "truth": None if record.truth is None else record.truth.to_dict(),
    }


_REQUIRED = ("walk_id", "subject_id", "cohort", "tracker", "fps", "joint_names", "frames")


def record_from_dict(obj: Mapping, line: int | None = None) -> WalkRecord:
    if not isinstance(obj, Mapping):
        raise SchemaError("record is not an object", line=line)
    for key in _REQUIRED:
        if key not in obj:
            raise SchemaError("missing field", line=line, field=key)
    unknown = set(obj) - set(_REQUIRED) - {"truth"}
    if unknown:
        raise SchemaError(f"unknown fields {sorted(unknown)}", line=line)
    try:
        meta = WalkMetadata(str(obj["walk_id"]), str(obj["subject_id"]), obj["cohort"], obj["tracker"])
    except ValueError as exc:
        bad = "cohort" if obj["cohort"] not in [c.value for c in Cohort] else "tracker"
        raise SchemaError(str(exc), line=line, field=bad) from None
    try:
        frames = np.array(obj["frames"], dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError("frames is not a rectangular T x J x 3 numeric array", line=line, field="frames") from None
    try:
        seq = PoseSequence(frames, float(obj["fps"]), tuple(obj["joint_names"]))
    except SchemaError as exc:
        raise SchemaError(str(exc).split(": ", 1)[-1], line=line, field=exc.field) from None
    truth = None
    if obj.get("truth") is not None:
        t = obj["truth"]
        try:
            truth = GaitFeatures(*(float(t[FEATURE_KEYS[n]]) for n in FEATURE_NAMES))
        except KeyError as exc:
            raise SchemaError("missing field", line=line, field=f"truth.{exc.args[0]}") from None
        except SchemaError as exc:
            raise SchemaError(str(exc).split(": ", 1)[-1], line=line, field=f"truth.{exc.field}") from None
    return WalkRecord(meta, seq, truth)


def write_walks(records: Iterable[WalkRecord], path: str | Path) -> None:
    path = Path(path)
    with _open_text(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), separators=(",", ":"), allow_nan=False))
            fh.write("\n")


def read_walks(path: str | Path) -> list[WalkRecord]:
    """Read a walks file; raises SchemaError naming the line on bad input."""
    path = Path(path)
    records = []
    with _open_text(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", line=lineno) from None
            records.append(record_from_dict(obj, line=lineno))
    return records


def write_features(entries: Iterable[Mapping], path: str | Path) -> None:
    """Write prediction entries, one JSON object per line.

    Each entry has ``walk_id`` and ``tracker`` plus either the four feature
    keys (null where unavailable) or a ``skipped`` reason.
    """
    path = Path(path)
    with _open_text(path, "w") as fh:
        for entry in entries:
            fh.write(json.dumps(dict(entry), separators=(",", ":"), allow_nan=False))
            fh.write("\n")


def read_features(path: str | Path) -> list[dict]:
    path = Path(path)
    out = []
    with _open_text(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if "walk_id" not in obj:
                raise SchemaError("missing field", line=lineno, field="walk_id")
            out.append(obj)
    return out


def feature_entry(walk_id: str, tracker: str, features: Mapping[str, float | None]) -> dict:
    entry = {"walk_id": walk_id, "tracker": tracker}
    for name in FEATURE_NAMES:
        value = features.get(name)
        entry[FEATURE_KEYS[name]] = None if value is None else float(value)
    return entry
