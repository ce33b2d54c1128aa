"""Pose sequence cleanup and conversion to network input."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .core import JOINTS_FULL, JOINTS_LOWER, PoseSequence, WalkMetadata, encode_metadata


class Normalization(str, Enum):
    PER_VIDEO = "per_video"
    PER_FRAME = "per_frame"


class JointSet(str, Enum):
    FULL_12 = "full_12"
    LOWER_6 = "lower_6"


JOINT_SETS = {JointSet.FULL_12: JOINTS_FULL, JointSet.LOWER_6: JOINTS_LOWER}


class PreprocessError(ValueError):
    """A walk cannot be turned into model input."""


@dataclass(frozen=True)
class PreprocessConfig:
    window: int = 120
    normalization: Normalization = Normalization.PER_VIDEO
    joint_set: JointSet = JointSet.FULL_12
    mirror: bool = False
    smoothing: int = 5

    def __post_init__(self):
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        object.__setattr__(self, "joint_set", JointSet(self.joint_set))
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.smoothing < 1 or self.smoothing % 2 == 0:
            raise ValueError("smoothing window must be odd and >= 1")

    @property
    def n_joints(self) -> int:
        return len(JOINT_SETS[self.joint_set])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["normalization"] = self.normalization.value
        d["joint_set"] = self.joint_set.value
        return d


def moving_average(values: np.ndarray, window: int, axis: int = 0) -> np.ndarray:
    """Centered moving average; edge windows are truncated to the samples that exist."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    values = np.moveaxis(np.asarray(values, dtype=np.float64), axis, 0)
    n = values.shape[0]
    if window > n:
        raise ValueError(f"window {window} longer than sequence ({n})")
    if window == 1:
        return np.moveaxis(values.copy(), 0, axis)
    half = window // 2
    csum = np.concatenate([np.zeros((1,) + values.shape[1:]), np.cumsum(values, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, n)
    shape = (n,) + (1,) * (values.ndim - 1)
    out = (csum[hi] - csum[lo]) / (hi - lo).reshape(shape)
    return np.moveaxis(out, 0, axis)


def interpolate_missing(seq: PoseSequence) -> PoseSequence:
    """Fill conf=0 samples linearly per joint; edges take the nearest valid value."""
    frames = seq.frames.copy()
    t = np.arange(seq.n_frames)
    for j, name in enumerate(seq.joint_names):
        valid = frames[:, j, 2] > 0
        if valid.sum() < 2:
            raise PreprocessError(f"joint '{name}' detected in {int(valid.sum())} frame(s); need at least 2")
        if valid.all():
            continue
        for c in range(2):
            frames[~valid, j, c] = np.interp(t[~valid], t[valid], frames[valid, j, c])
    frames[:, :, 2] = 1.0
    return seq.replace(frames=frames)


def smooth(seq: PoseSequence, window: int) -> PoseSequence:
    if window > seq.n_frames:
        raise PreprocessError(f"smoothing window {window} longer than sequence ({seq.n_frames} frames)")
    if window < 1 or window % 2 == 0:
        raise PreprocessError(f"smoothing window must be odd and >= 1, got {window}")
    frames = seq.frames.copy()
    frames[:, :, :2] = moving_average(frames[:, :, :2], window)
    return seq.replace(frames=frames)


def crop_tail(seq: PoseSequence, length: int) -> PoseSequence:
    """Last ``length`` frames, where the walker is closest to the camera."""
    if seq.n_frames < length:
        raise PreprocessError(f"sequence has {seq.n_frames} frames; need at least {length}")
    return seq.replace(frames=seq.frames[seq.n_frames - length:].copy())


def _hips(xy: np.ndarray, joint_names) -> tuple[np.ndarray, np.ndarray]:
    names = list(joint_names)
    return xy[..., names.index("left_hip"), :], xy[..., names.index("right_hip"), :]


def normalize_per_video(seq: PoseSequence) -> PoseSequence:
    """Translate and scale every frame by the center frame's mid-hip and hip width."""
    c = seq.n_frames // 2
    lh, rh = _hips(seq.xy[c], seq.joint_names)
    width = float(np.linalg.norm(rh - lh))
    if not width > 1e-9 or not np.isfinite(width):
        raise PreprocessError(f"degenerate hip width {width} at center frame {c}")
    center = 0.5 * (lh + rh)
    frames = seq.frames.copy()
    frames[:, :, :2] = (frames[:, :, :2] - center) / width
    return seq.replace(frames=frames)


def normalize_per_frame(seq: PoseSequence) -> PoseSequence:
    lh, rh = _hips(seq.xy, seq.joint_names)
    width = np.linalg.norm(rh - lh, axis=-1)
    bad = np.flatnonzero(~(width > 1e-9))
    if len(bad):
        raise PreprocessError(f"degenerate hip width at frame {int(bad[0])}")
    center = 0.5 * (lh + rh)
    frames = seq.frames.copy()
    frames[:, :, :2] = (frames[:, :, :2] - center[:, None, :]) / width[:, None, None]
    return seq.replace(frames=frames)


def mirror(seq: PoseSequence) -> PoseSequence:
    """Reflect laterally (x -> -x) and swap left/right joint labels."""
    names = list(seq.joint_names)
    if seq.joint_names not in (JOINTS_FULL, JOINTS_LOWER):
        raise PreprocessError(f"unknown joint layout {names}")
    perm = [names.index(("right_" + n[5:]) if n.startswith("left_") else ("left_" + n[6:])) for n in names]
    frames = seq.frames[:, perm].copy()
    frames[:, :, 0] = -frames[:, :, 0]
    return seq.replace(frames=frames)


def select_joints(seq: PoseSequence, joint_set: JointSet | str) -> PoseSequence:
    wanted = JOINT_SETS[JointSet(joint_set)]
    missing = [n for n in wanted if n not in seq.joint_names]
    if missing:
        raise PreprocessError(f"missing joints {missing}")
    if tuple(seq.joint_names) == wanted:
        return seq
    idx = [seq.joint_names.index(n) for n in wanted]
    return seq.replace(frames=seq.frames[:, idx].copy(), joint_names=wanted)


def to_model_input(seq: PoseSequence, meta: WalkMetadata, config: PreprocessConfig) -> tuple[np.ndarray, np.ndarray]:
    """(T, 2J) array laid out [x_0..x_{J-1}, y_0..y_{J-1}] and the metadata vector."""
    if seq.n_frames != config.window:
        raise PreprocessError(f"expected {config.window} frames, got {seq.n_frames}")
    if seq.joint_names != JOINT_SETS[config.joint_set]:
        raise PreprocessError(f"expected joints {JOINT_SETS[config.joint_set]}, got {seq.joint_names}")
    x = np.concatenate([seq.frames[:, :, 0], seq.frames[:, :, 1]], axis=1)
    return x, encode_metadata(meta)


def preprocess_sequence(seq: PoseSequence, config: PreprocessConfig, mirrored: bool = False) -> PoseSequence:
    """interpolate -> smooth -> crop -> select joints -> normalize (-> mirror)."""
    seq = interpolate_missing(seq)
    seq = smooth(seq, config.smoothing)
    seq = crop_tail(seq, config.window)
    seq = select_joints(seq, config.joint_set)
    if config.normalization is Normalization.PER_VIDEO:
        seq = normalize_per_video(seq)
    else:
        seq = normalize_per_frame(seq)
    if mirrored:
        seq = mirror(seq)
    return seq
