"""Footfall detection from ankle trajectories and walk-averaged gait features.

A planted foot does not move, so stance is where the smoothed ankle speed
drops under an adaptive threshold. The first frame of a stance run is a heel
strike and the last one a toe off; spatial step features are read off the
ankle positions at heel strikes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import FEATURE_NAMES, GaitFeatures, PoseSequence
from .preprocess import moving_average

FEET = ("left", "right")


class NoStanceDetected(ValueError):
    pass


class EventError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionSettings:
    threshold_fraction: float = 0.15
    speed_percentile: float = 95.0
    smooth_window: int = 5
    min_stance_s: float = 0.1
    min_duration_s: float = 2.0


@dataclass(frozen=True, eq=False)
class FootfallEvents:
    """Stance intervals per foot as inclusive (first, last) frame pairs.

    A stance touching the first frame has no observed heel strike, and one
    touching the last frame no observed toe off; those events are left out
    of ``heel_strikes`` / ``toe_offs``.
    """

    stances: dict[str, list[tuple[int, int]]]
    n_frames: int
    positions: dict[str, np.ndarray] = field(default_factory=dict)

    def heel_strikes(self, foot: str) -> list[int]:
        return [a for a, _ in self.stances.get(foot, []) if a > 0]

    def toe_offs(self, foot: str) -> list[int]:
        return [b for _, b in self.stances.get(foot, []) if b < self.n_frames - 1]

    def merged_heel_strikes(self) -> list[tuple[int, str]]:
        return sorted((f, foot) for foot in self.stances for f in self.heel_strikes(foot))

    def heel_strike_positions(self, foot: str) -> np.ndarray:
        return self.positions[foot][self.heel_strikes(foot)]


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


def stance_intervals(traj: np.ndarray, fps: float, settings: DetectionSettings = DetectionSettings()) -> list[tuple[int, int]]:
    """Stance runs of a single ankle trajectory of shape (T, D)."""
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim == 1:
        traj = traj[:, None]
    if not np.isfinite(traj).all():
        raise ValueError("ankle trajectory has gaps; interpolate first")
    smoothed = moving_average(traj, settings.smooth_window)
    speed = np.linalg.norm(np.gradient(smoothed, axis=0), axis=1)
    threshold = settings.threshold_fraction * np.percentile(speed, settings.speed_percentile)
    min_len = max(1, int(math.ceil(settings.min_stance_s * fps - 1e-9)))
    runs = _runs(speed <= threshold)
    # close gaps shorter than a minimum stance (noise spikes inside a stance)
    merged: list[tuple[int, int]] = []
    for a, b in runs:
        if merged and a - merged[-1][1] - 1 < min_len:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return [(a, b) for a, b in merged if b - a + 1 >= min_len]


def detect_footfalls(
    ankles: Mapping[str, np.ndarray],
    fps: float,
    settings: DetectionSettings = DetectionSettings(),
) -> FootfallEvents:
    """Detect stances for each foot in ``ankles`` (keys 'left' / 'right')."""
    n_frames = {len(np.asarray(a)) for a in ankles.values()}
    if len(n_frames) != 1:
        raise ValueError("ankle trajectories differ in length")
    (n,) = n_frames
    if n < settings.min_duration_s * fps - 1e-9:
        raise ValueError(f"{n} frames is less than {settings.min_duration_s}s of data")
    stances = {foot: stance_intervals(traj, fps, settings) for foot, traj in ankles.items()}
    if not any(stances.values()):
        raise NoStanceDetected("no stance detected: ankle speed never stays under threshold long enough")
    if len(stances) == 2:
        stances = _enforce_alternation(stances)
    positions = {foot: np.asarray(traj, dtype=np.float64) for foot, traj in ankles.items()}
    return FootfallEvents(stances, n, positions)


def _enforce_alternation(stances: dict[str, list[tuple[int, int]]]) -> dict[str, list[tuple[int, int]]]:
    """Drop stances whose heel strike repeats the previous foot."""
    events = sorted((s[0], foot, s) for foot, runs in stances.items() for s in runs)
    kept: dict[str, list[tuple[int, int]]] = {foot: [] for foot in stances}
    last_foot = None
    for start, foot, stance in events:
        if start > 0 and foot == last_foot:
            continue
        kept[foot].append(stance)
        if start > 0:
            last_foot = foot
    return kept


def features_from_events(
    events: FootfallEvents,
    positions: Mapping[str, np.ndarray],
    fps: float,
    lateral_axis: int = 0,
    anterior_axis: int = 2,
) -> GaitFeatures:
    """Walk-averaged features from heel strikes.

    ``positions`` needs 'left' and 'right' ankle and 'pelvis' trajectories in
    cm. Step length / width are anterior / lateral distances between
    consecutive opposite-foot heel strikes; velocity is pelvis displacement
    between the first and last heel strike over the elapsed time.
    """
    hs = events.merged_heel_strikes()
    if len(hs) < 2:
        raise EventError(f"need at least 2 heel strikes, got {len(hs)}")
    for (_, f0), (_, f1) in zip(hs, hs[1:]):
        if f0 == f1:
            raise EventError("heel strikes do not alternate between feet")
    frames = np.array([f for f, _ in hs])
    pts = np.stack([np.asarray(positions[foot])[f] for f, foot in hs])
    d = np.abs(np.diff(pts, axis=0))
    pelvis = np.asarray(positions["pelvis"])
    elapsed = (frames[-1] - frames[0]) / fps
    if elapsed <= 0:
        raise EventError("heel strikes share a frame")
    return GaitFeatures(
        step_time=float(np.diff(frames).mean() / fps),
        step_width=float(d[:, lateral_axis].mean()),
        step_length=float(d[:, anterior_axis].mean()),
        velocity=float(abs(pelvis[frames[-1], anterior_axis] - pelvis[frames[0], anterior_axis]) / elapsed),
    )


def oracle_features(walk, window: tuple[int, int] | None = None,
                    settings: DetectionSettings = DetectionSettings()) -> GaitFeatures:
    """Detect events on a simulated 3D walk and compute its features."""
    start, stop = (0, walk.n_frames) if window is None else window
    positions = {
        "left": walk.joint("left_ankle")[start:stop],
        "right": walk.joint("right_ankle")[start:stop],
        "pelvis": walk.mid_hip[start:stop],
    }
    events = detect_footfalls({"left": positions["left"], "right": positions["right"]}, walk.fps, settings)
    return features_from_events(events, positions, walk.fps)


def baseline_features_2d(seq: PoseSequence, settings: DetectionSettings = DetectionSettings()) -> dict[str, float | None]:
    """Step time from image-plane ankle tracks; spatial features stay None.

    Without depth the spatial features cannot be recovered from a 2D
    frontal view, so only step time is reported.
    """
    ankles = {
        "left": seq.joint("left_ankle")[:, :2],
        "right": seq.joint("right_ankle")[:, :2],
    }
    if (seq.conf[:, [seq.joint_names.index("left_ankle"), seq.joint_names.index("right_ankle")]] <= 0).any():
        raise ValueError("sequence has missing ankle detections; interpolate first")
    events = detect_footfalls(ankles, seq.fps, settings)
    hs = events.merged_heel_strikes()
    if len(hs) < 2:
        raise NoStanceDetected(f"only {len(hs)} heel strike(s) detected")
    frames = np.array([f for f, _ in hs])
    out: dict[str, float | None] = dict.fromkeys(FEATURE_NAMES)
    out["step_time"] = float(np.diff(frames).mean() / seq.fps)
    return out
