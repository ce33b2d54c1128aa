"""Synthetic frontal-view walks with exactly known gait features.

A kinematic walker approaches a wall-mounted camera. Feet are planted at
scheduled heel-strike positions and stay put for the stance phase; swing is
a cosine-eased transfer with a smooth vertical lift. Everything downstream
(2D projection, virtual pose-tracker noise, ground-truth features) comes
from the same per-step schedule, so truth is analytic rather than re-detected.

World frame: x lateral (the walker's right is +x), y up from the floor, z
along the hallway, measured from the camera wall. Walkers move toward -z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import (
    COHORTS,
    JOINTS_FULL,
    TRACKERS,
    Cohort,
    GaitFeatures,
    PoseSequence,
    Tracker,
    WalkMetadata,
    WalkRecord,
)

# (mean, coefficient of variation) per cohort, walk-level
COHORT_STATS: dict[Cohort, dict[str, tuple[float, float]]] = {
    Cohort.DS1: {
        "step_time": (0.60, 0.21),
        "step_width": (17.0, 0.27),
        "step_length": (30.0, 0.32),
        "velocity": (50.0, 0.31),
    },
    Cohort.DS2: {
        "step_time": (0.61, 0.43),
        "step_width": (17.0, 0.27),
        "step_length": (32.0, 0.29),
        "velocity": (65.0, 0.33),
    },
}

TRUNCATION_SD = 3.0


def _log_sigma(cv: float) -> float:
    return math.sqrt(math.log1p(cv * cv))


def _time_length_correlation(cohort: Cohort) -> float:
    """Correlation of log step time and log step length that reproduces the
    cohort's velocity CV when velocity = length / time."""
    stats = COHORT_STATS[cohort]
    s_t = _log_sigma(stats["step_time"][1])
    s_l = _log_sigma(stats["step_length"][1])
    s_v = _log_sigma(stats["velocity"][1])
    r = (s_t ** 2 + s_l ** 2 - s_v ** 2) / (2 * s_t * s_l)
    return float(np.clip(r, -0.95, 0.95))


@dataclass(frozen=True)
class GaitParams:
    """Commanded gait of one walk (velocity is always length / time)."""

    step_time: float
    step_width: float
    step_length: float
    velocity: float
    stance_fraction: float = 0.62
    subject_height: float = 165.0
    cv_step_time: float = 0.0
    cv_step_length: float = 0.0
    cv_step_width: float = 0.0
    pelvis_width: float | None = None
    arm_swing_deg: float = 20.0

    def __post_init__(self):
        for name in ("step_time", "step_width", "step_length", "velocity", "subject_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        expected = self.step_length / self.step_time
        if abs(self.velocity - expected) > 1e-9 * expected:
            raise ValueError(f"velocity {self.velocity} != step_length / step_time = {expected}")
        if not 0.4 < self.stance_fraction < 0.8:
            raise ValueError(f"stance_fraction {self.stance_fraction} outside (0.4, 0.8)")
        if self.pelvis_width is None:
            object.__setattr__(self, "pelvis_width", 0.15 * self.subject_height)

    @classmethod
    def from_steps(cls, step_time: float, step_length: float, step_width: float, **kwargs) -> GaitParams:
        return cls(step_time=step_time, step_width=step_width, step_length=step_length,
                   velocity=step_length / step_time, **kwargs)

    def with_steps(self, step_time: float, step_length: float, step_width: float) -> GaitParams:
        return replace(self, step_time=step_time, step_length=step_length, step_width=step_width,
                       velocity=step_length / step_time)


def sample_gait_params(
    cohort: Cohort | str,
    rng_seed: int | np.random.SeedSequence,
    cv_step_time: float = 0.03,
    cv_step_length: float = 0.04,
    cv_step_width: float = 0.08,
    hands_behind_back: float = 0.3,
    within_subject_cv: float = 0.0,
) -> GaitParams:
    """Draw one subject's base gait for a cohort.

    Step time, length and width are truncated log-normal (cut at mean +/- 3
    SD) with the cohort's mean and CV; log time and log length are
    correlated so that velocity also lands near the cohort's CV.

    ``within_subject_cv`` reserves that much log-scale spread for walk-to-walk
    variation (see ``perturb_walk``), narrowing the between-subject spread
    so the pooled walk distribution keeps the cohort CV.
    """
    try:
        cohort = Cohort(cohort)
    except ValueError:
        raise ValueError(f"unknown cohort {cohort!r}") from None
    rng = np.random.default_rng(rng_seed)
    stats = COHORT_STATS[cohort]
    r = _time_length_correlation(cohort)
    s_w = _log_sigma(within_subject_cv)
    names = ("step_time", "step_length", "step_width")
    mus, sigmas, lows, highs = [], [], [], []
    for n in names:
        mean, cv = stats[n]
        s = _log_sigma(cv)
        if s_w >= s:
            raise ValueError(f"within-subject CV {within_subject_cv} exceeds the {n} CV {cv}")
        mus.append(math.log(mean) - s * s / 2)
        sigmas.append(math.sqrt(s * s - s_w * s_w))
        lows.append(max(mean * (1 - TRUNCATION_SD * cv), 1e-6))
        highs.append(mean * (1 + TRUNCATION_SD * cv))
    cov = np.diag(np.square(sigmas))
    cov[0, 1] = cov[1, 0] = r * sigmas[0] * sigmas[1]
    chol = np.linalg.cholesky(cov)
    while True:
        values = np.exp(np.asarray(mus) + chol @ rng.standard_normal(3))
        if np.all(values >= lows) and np.all(values <= highs):
            break
    st, sl, sw = (float(v) for v in values)
    height = float(np.clip(rng.normal(165.0, 9.0), 140.0, 195.0))
    stance = float(np.clip(rng.normal(0.62, 0.025), 0.52, 0.72))
    pelvis = float(height * 0.15 * np.clip(rng.normal(1.0, 0.08), 0.8, 1.2))
    arm = 0.0 if rng.random() < hands_behind_back else float(rng.uniform(12.0, 25.0))
    return GaitParams.from_steps(
        st, sl, sw,
        stance_fraction=stance, subject_height=height,
        cv_step_time=cv_step_time, cv_step_length=cv_step_length, cv_step_width=cv_step_width,
        pelvis_width=pelvis, arm_swing_deg=arm,
    )


# ---------------------------------------------------------------------------
# kinematics

@dataclass(frozen=True, eq=False)
class StepSchedule:
    """Per-step ground truth: heel strike k puts foot ``side[k]`` at ``pos[k]``.

    ``side`` is 0 for left, 1 for right; feet alternate. ``toe_off[k]`` is
    when the foot planted at step k lifts again.
    """

    times: np.ndarray
    side: np.ndarray
    pos: np.ndarray  # (K, 2) lateral x, anterior z in cm
    toe_off: np.ndarray

    def pelvis_xz(self, t: np.ndarray) -> np.ndarray:
        """Mid-foot path at heel strikes, linearly interpolated."""
        mid = 0.5 * (self.pos[1:] + self.pos[:-1])
        tk = self.times[1:]
        return np.stack([np.interp(t, tk, mid[:, 0]), np.interp(t, tk, mid[:, 1])], axis=-1)


@dataclass(frozen=True, eq=False)
class Walk3D:
    trajectories: np.ndarray  # (T, J, 3) x, y, z in cm
    fps: float
    params: GaitParams
    steps: StepSchedule
    joint_names: tuple[str, ...] = JOINTS_FULL

    @property
    def n_frames(self) -> int:
        return self.trajectories.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.fps

    def joint(self, name: str) -> np.ndarray:
        return self.trajectories[:, self.joint_names.index(name)]

    @property
    def mid_hip(self) -> np.ndarray:
        return 0.5 * (self.joint("left_hip") + self.joint("right_hip"))

    def heel_strike_frames(self) -> tuple[np.ndarray, np.ndarray]:
        """(step indices, frames) of heel strikes inside the recording.

        A heel strike's frame is the first frame at or after foot contact,
        i.e. the first frame in which the foot is planted.
        """
        frames = np.ceil(self.steps.times * self.fps - 1e-9).astype(int)
        keep = (frames >= 0) & (frames < self.n_frames)
        return np.flatnonzero(keep), frames[keep]


def _schedule(params: GaitParams, duration: float, rng: np.random.Generator,
              start_distance: float, lateral_offset: float) -> StepSchedule:
    st, sl, sw = params.step_time, params.step_length, params.step_width
    # two full cycles before t=0 so every foot has a previous footfall
    n_pre = 4
    n_steps = n_pre + int(math.ceil(duration / st * 1.5)) + 6
    eps = np.clip(rng.standard_normal((3, n_steps)), -3, 3)
    dur = st * (1 + params.cv_step_time * eps[0])
    length = sl * (1 + params.cv_step_length * eps[1])
    half_w = 0.5 * sw * (1 + params.cv_step_width * eps[2])
    phase = rng.uniform(0.0, 1.0)
    first_side = int(rng.integers(0, 2))
    times = np.concatenate([[0.0], np.cumsum(dur[1:])])
    # shift so t=0 falls inside step n_pre
    times = times - times[n_pre] + phase * dur[n_pre]
    while times[-1] < duration + 2 * st:
        # guards against unlucky cumulative drift of the step durations
        extra = st * (1 + params.cv_step_time * np.clip(rng.standard_normal(4), -3, 3))
        times = np.concatenate([times, times[-1] + np.cumsum(extra)])
        length = np.concatenate([length, sl * (1 + params.cv_step_length * np.clip(rng.standard_normal(4), -3, 3))])
        half_w = np.concatenate([half_w, 0.5 * sw * (1 + params.cv_step_width * np.clip(rng.standard_normal(4), -3, 3))])
    k = len(times)
    side = (first_side + np.arange(k)) % 2
    sign = np.where(side == 1, 1.0, -1.0)
    z = -np.concatenate([[0.0], np.cumsum(length[1:k])])
    x = lateral_offset + sign * half_w[:k]
    pos = np.stack([x, z], axis=1)
    # place the walker so the pelvis is at start_distance at t=0
    sched = StepSchedule(times, side, pos, np.empty(0))
    z0 = sched.pelvis_xz(np.array([0.0]))[0, 1]
    pos[:, 1] += start_distance - z0
    toe_off = np.full(k, np.inf)
    toe_off[:-2] = times[:-2] + params.stance_fraction * (times[2:] - times[:-2])
    return StepSchedule(times, side, pos, toe_off)


def _foot_track(sched: StepSchedule, side: int, t: np.ndarray, ankle_h: float, lift: float) -> np.ndarray:
    """(T, 3) ankle trajectory for one foot."""
    idx = np.flatnonzero(sched.side == side)
    tk = sched.times[idx]
    out = np.empty((len(t), 3))
    # j = index of the last footfall of this foot at or before t
    j = np.searchsorted(tk, t, side="right") - 1
    if np.any(j < 0):
        raise ValueError("walk starts before the first scheduled footfall")
    cur = idx[j]
    planted = sched.pos[cur]
    out[:, 0], out[:, 2] = planted[:, 0], planted[:, 1]
    out[:, 1] = ankle_h
    toe_off = sched.toe_off[cur]
    swinging = t >= toe_off
    if np.any(swinging):
        nxt = idx[np.minimum(j[swinging] + 1, len(idx) - 1)]
        t0 = toe_off[swinging]
        t1 = sched.times[nxt]
        tau = np.clip((t[swinging] - t0) / (t1 - t0), 0.0, 1.0)
        ease = 0.5 * (1.0 - np.cos(np.pi * tau))
        a, b = sched.pos[cur[swinging]], sched.pos[nxt]
        out[swinging, 0] = a[:, 0] + (b[:, 0] - a[:, 0]) * ease
        out[swinging, 2] = a[:, 1] + (b[:, 1] - a[:, 1]) * ease
        out[swinging, 1] = ankle_h + lift * 0.5 * (1.0 - np.cos(2 * np.pi * tau))
    return out


def _knee(hip: np.ndarray, ankle: np.ndarray, thigh: float, shank: float) -> np.ndarray:
    """Two-link IK; the knee bends toward -z (the walking direction)."""
    d_vec = ankle - hip
    d = np.linalg.norm(d_vec, axis=1, keepdims=True)
    u = d_vec / d
    fwd = np.array([0.0, 0.0, -1.0])
    perp = fwd - (u @ fwd)[:, None] * u
    perp /= np.maximum(np.linalg.norm(perp, axis=1, keepdims=True), 1e-12)
    dc = np.minimum(d, thigh + shank - 1e-9)
    a = (thigh ** 2 - shank ** 2 + dc ** 2) / (2 * dc)
    h = np.sqrt(np.maximum(thigh ** 2 - a ** 2, 0.0))
    return hip + a * u + h * perp


def simulate_walk3d(
    params: GaitParams,
    duration: float,
    fps: float = 30.0,
    rng_seed: int | np.random.SeedSequence = 0,
    start_distance: float = 550.0,
    lateral_offset: float = 0.0,
) -> Walk3D:
    """Simulate ``duration`` seconds of walking toward the camera."""
    if duration * fps < 2 * 2 * params.step_time * fps or duration * fps < 2:
        raise ValueError(
            f"duration {duration}s shorter than two gait cycles ({4 * params.step_time:.3f}s)"
        )
    rng = np.random.default_rng(rng_seed)
    n = int(math.floor(duration * fps + 1e-9)) + 1
    t = np.arange(n) / fps
    H = params.subject_height
    thigh, shank = 0.245 * H, 0.246 * H
    ankle_h = 0.039 * H
    upper_arm, forearm = 0.186 * H, 0.146 * H
    shoulder_h, shoulder_w = 0.818 * H, 0.22 * H
    hip_h = ankle_h + 0.97 * (thigh + shank)
    sched = _schedule(params, duration, rng, start_distance, lateral_offset)

    left = _foot_track(sched, 0, t, ankle_h, 5.0)
    right = _foot_track(sched, 1, t, ankle_h, 5.0)

    pel = sched.pelvis_xz(t)
    # lateral sway toward the newest stance foot, vertical bob peaking mid-step
    k = np.searchsorted(sched.times, t, side="right") - 1
    frac = (t - sched.times[k]) / (sched.times[k + 1] - sched.times[k])
    sign = np.where(sched.side[k] == 1, 1.0, -1.0)
    sway = 1.5 * sign * np.sin(np.pi * frac)
    bob = 1.5 * np.sin(np.pi * frac) ** 2
    px, pz = pel[:, 0] + sway, pel[:, 1]
    py = hip_h - 1.5 + bob

    hw = 0.5 * params.pelvis_width
    lhip = np.stack([px - hw, py, pz], axis=1)
    rhip = np.stack([px + hw, py, pz], axis=1)
    lknee = _knee(lhip, left, thigh, shank)
    rknee = _knee(rhip, right, thigh, shank)

    sy = shoulder_h - (hip_h - py)
    sz = pz - 3.0
    lsho = np.stack([px - shoulder_w / 2, sy, sz], axis=1)
    rsho = np.stack([px + shoulder_w / 2, sy, sz], axis=1)

    if params.arm_swing_deg > 0:
        amp = np.radians(params.arm_swing_deg)
        # each arm swings forward while the same-side foot is behind the pelvis
        def arm(sho, ankle):
            rel = np.clip((ankle[:, 2] - pz) / max(params.step_length, 1e-6), -1.0, 1.0)
            ang = amp * rel
            elbow = sho + upper_arm * np.stack([np.zeros_like(ang), -np.cos(ang), -np.sin(ang)], axis=1)
            a2 = ang + np.radians(15.0)
            wrist = elbow + forearm * np.stack([np.zeros_like(a2), -np.cos(a2), -np.sin(a2)], axis=1)
            return elbow, wrist
        lelb, lwri = arm(lsho, left)
        relb, rwri = arm(rsho, right)
    else:
        # hands clasped behind the back
        def arm(sho, side):
            d = np.array([-0.25 * side, -0.85, 0.45])
            elbow = sho + upper_arm * d / np.linalg.norm(d)
            wrist = np.stack([px + 4.0 * side, py + 4.0, pz + 14.0], axis=1)
            return elbow, wrist
        lelb, lwri = arm(lsho, -1.0)
        relb, rwri = arm(rsho, 1.0)

    traj = np.stack([lsho, rsho, lelb, relb, lwri, rwri, lhip, rhip, lknee, rknee, left, right], axis=1)
    return Walk3D(trajectories=traj, fps=float(fps), params=params, steps=sched)


def true_features(walk: Walk3D, window: tuple[int, int] | None = None) -> GaitFeatures:
    """Mean features over the steps whose heel strikes fall in ``window``.

    ``window`` is a half-open frame range; heel strikes count when their
    time lies within the window's first and last frame times.
    """
    start, stop = (0, walk.n_frames) if window is None else window
    if not 0 <= start < stop <= walk.n_frames:
        raise ValueError(f"bad window {window} for {walk.n_frames} frames")
    t0, t1 = start / walk.fps, (stop - 1) / walk.fps
    tk = walk.steps.times
    idx = np.flatnonzero((tk >= t0 - 1e-12) & (tk <= t1 + 1e-12))
    if len(idx) < 2:
        raise ValueError(f"window {start}:{stop} holds {len(idx)} heel strike(s); need at least 2")
    pos = walk.steps.pos
    dt = np.diff(tk[idx])
    dpos = np.abs(np.diff(pos[idx], axis=0))
    pel = walk.steps.pelvis_xz(tk[idx[[0, -1]]])
    elapsed = tk[idx[-1]] - tk[idx[0]]
    return GaitFeatures(
        step_time=float(dt.mean()),
        step_width=float(dpos[:, 0].mean()),
        step_length=float(dpos[:, 1].mean()),
        velocity=float(abs(pel[1, 1] - pel[0, 1]) / elapsed),
    )


# ---------------------------------------------------------------------------
# camera and virtual trackers

@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera on the end wall at z = 0, pitched down toward the floor."""

    focal: float = 580.0
    cu: float = 320.0
    cv: float = 240.0
    height: float = 220.0
    width_px: int = 640
    height_px: int = 480
    pitch_deg: float = 25.0

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal length must be > 0")

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World (..., 3) -> camera (..., 3) with x right, y down, z forward."""
        th = math.radians(self.pitch_deg)
        rel = points - np.array([0.0, self.height, 0.0])
        right = np.array([-1.0, 0.0, 0.0])
        down = np.array([0.0, -math.cos(th), -math.sin(th)])
        fwd = np.array([0.0, -math.sin(th), math.cos(th)])
        return np.stack([rel @ right, rel @ down, rel @ fwd], axis=-1)

    def project(self, points: np.ndarray) -> np.ndarray:
        cam = self.to_camera(points)
        if np.any(cam[..., 2] <= 0):
            raise ValueError("point at or behind the camera plane")
        u = self.focal * cam[..., 0] / cam[..., 2] + self.cu
        v = self.focal * cam[..., 1] / cam[..., 2] + self.cv
        return np.stack([u, v], axis=-1)

    def inside(self, uv: np.ndarray) -> np.ndarray:
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width_px) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height_px)


def project_to_camera(walk: Walk3D, cam: CameraModel) -> PoseSequence:
    uv = cam.project(walk.trajectories)
    frames = np.concatenate([uv, np.ones(uv.shape[:2] + (1,))], axis=-1)
    return PoseSequence(frames, walk.fps, walk.joint_names)


@dataclass(frozen=True)
class TrackerProfile:
    """Error model of a virtual 2D pose tracker.

    ``dropout`` is a probability per joint and frame, either one value for
    all joints or a mapping from joint name to probability.
    """

    name: str
    sigma: float
    dropout: float | Mapping[str, float] = 0.0
    swap: float = 0.0
    max_swap_run: int = 5

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        probs = self.dropout.values() if isinstance(self.dropout, Mapping) else [self.dropout]
        if any(not 0 <= p <= 1 for p in probs):
            raise ValueError("dropout probability outside [0, 1]")
        if not 0 <= self.swap < 1:
            raise ValueError("swap probability outside [0, 1)")

    def dropout_for(self, joint_names: Sequence[str]) -> np.ndarray:
        if isinstance(self.dropout, Mapping):
            return np.array([float(self.dropout.get(n, 0.0)) for n in joint_names])
        return np.full(len(joint_names), float(self.dropout))


DEFAULT_PROFILES: dict[Tracker, TrackerProfile] = {
    Tracker.A: TrackerProfile("TrackerA", sigma=1.0, dropout=0.01, swap=0.001),
    Tracker.B: TrackerProfile("TrackerB", sigma=2.0, dropout=0.03, swap=0.005),
    Tracker.C: TrackerProfile("TrackerC", sigma=4.0, dropout=0.06, swap=0.01),
}


def _lr_pairs(joint_names: Sequence[str]) -> list[tuple[int, int]]:
    names = list(joint_names)
    return [(names.index(n), names.index("right_" + n[5:])) for n in names if n.startswith("left_")]


def apply_tracker_noise(seq: PoseSequence, profile: TrackerProfile,
                        rng_seed: int | np.random.SeedSequence = 0) -> PoseSequence:
    """Left/right swap runs, then Gaussian jitter, then dropout."""
    rng = np.random.default_rng(rng_seed)
    frames = seq.frames.copy()
    T, J, _ = frames.shape
    if profile.swap > 0:
        for li, ri in _lr_pairs(seq.joint_names):
            starts = np.flatnonzero(rng.random(T) < profile.swap)
            lengths = rng.integers(1, profile.max_swap_run + 1, size=len(starts))
            mask = np.zeros(T, dtype=bool)
            for s, n in zip(starts, lengths):
                mask[s:s + n] = True
            frames[mask, li, :2], frames[mask, ri, :2] = frames[mask, ri, :2], frames[mask, li, :2].copy()
    if profile.sigma > 0:
        frames[:, :, :2] += rng.normal(0.0, profile.sigma, size=(T, J, 2))
    p = profile.dropout_for(seq.joint_names)
    if np.any(p > 0):
        drop = rng.random((T, J)) < p[None, :]
        frames[drop, 2] = 0.0
        frames[drop, :2] = np.nan
    return seq.replace(frames=frames)


# ---------------------------------------------------------------------------
# datasets

@dataclass(frozen=True)
class GenerationConfig:
    n_subjects: Mapping[str, int] = field(default_factory=lambda: {"DS1": 38, "DS2": 12})
    walks_per_subject: int = 20
    fps: float = 30.0
    window: int = 120
    start_distance: float = 550.0
    end_distance: tuple[float, float] = (270.0, 290.0)
    lateral_offset_sd: float = 8.0
    min_duration: float = 5.0
    walk_cv: float = 0.12
    hands_behind_back: float = 0.3
    cv_step_time: float = 0.03
    cv_step_length: float = 0.04
    cv_step_width: float = 0.08
    coordinate_decimals: int = 3
    camera: CameraModel = field(default_factory=CameraModel)
    profiles: Mapping[Tracker, TrackerProfile] = field(default_factory=lambda: dict(DEFAULT_PROFILES))


def perturb_walk(base: GaitParams, rng: np.random.Generator, walk_cv: float) -> GaitParams:
    """Independent log-normal walk-to-walk variation around a subject's base gait."""
    s = _log_sigma(walk_cv)
    f = np.exp(rng.normal(0.0, s, size=3))
    return base.with_steps(base.step_time * f[0], base.step_length * f[1], base.step_width * f[2])


def generate_walk(params: GaitParams, cfg: GenerationConfig, rng: np.random.Generator) -> tuple[Walk3D, GaitFeatures]:
    end = rng.uniform(*cfg.end_distance)
    start = max(cfg.start_distance, end + params.velocity * cfg.min_duration)
    duration = (start - end) / params.velocity
    walk = simulate_walk3d(
        params, duration, cfg.fps,
        rng_seed=np.random.SeedSequence(int(rng.integers(2 ** 63))),
        start_distance=start,
        lateral_offset=rng.normal(0.0, cfg.lateral_offset_sd),
    )
    n = walk.n_frames
    truth = true_features(walk, (n - cfg.window, n))
    return walk, truth


def generate_dataset(
    n_subjects: Mapping[str, int] | None = None,
    walks_per_subject: int | None = None,
    cam: CameraModel | None = None,
    profiles: Mapping[Tracker, TrackerProfile] | None = None,
    rng_seed: int = 0,
    config: GenerationConfig | None = None,
) -> list[WalkRecord]:
    """Records for every (subject, walk, tracker), sorted by (walk_id, tracker).

    Each subject keeps base gait parameters drawn for its cohort; every walk
    perturbs them slightly. The three tracker versions of a walk share its
    kinematics and differ only in tracker noise.
    """
    cfg = config or GenerationConfig()
    overrides = {}
    if n_subjects is not None:
        overrides["n_subjects"] = dict(n_subjects)
    if walks_per_subject is not None:
        overrides["walks_per_subject"] = walks_per_subject
    if cam is not None:
        overrides["camera"] = cam
    if profiles is not None:
        overrides["profiles"] = dict(profiles)
    cfg = replace(cfg, **overrides)
    if cfg.walks_per_subject < 1 or any(v < 0 for v in cfg.n_subjects.values()):
        raise ValueError("subject and walk counts must be positive")
    if sum(cfg.n_subjects.values()) < 1:
        raise ValueError("no subjects requested")

    records = []
    for ci, cohort in enumerate(COHORTS):
        for si in range(int(cfg.n_subjects.get(cohort.value, 0))):
            subject_id = f"{cohort.value}-S{si:03d}"
            base = sample_gait_params(
                cohort, np.random.SeedSequence([rng_seed, ci, si, 0]),
                cv_step_time=cfg.cv_step_time, cv_step_length=cfg.cv_step_length,
                cv_step_width=cfg.cv_step_width, hands_behind_back=cfg.hands_behind_back,
                within_subject_cv=cfg.walk_cv,
            )
            for wi in range(cfg.walks_per_subject):
                walk_id = f"{subject_id}-W{wi:03d}"
                rng = np.random.default_rng(np.random.SeedSequence([rng_seed, ci, si, 1, wi]))
                params = perturb_walk(base, rng, cfg.walk_cv)
                walk, truth = generate_walk(params, cfg, rng)
                clean = project_to_camera(walk, cfg.camera)
                window = clean.frames[-cfg.window:, :, :2]
                if not np.all(cfg.camera.inside(window)):
                    raise ValueError(f"{walk_id}: projected joints leave the image inside the model window")
                for ti, tracker in enumerate(TRACKERS):
                    noisy = apply_tracker_noise(
                        clean, cfg.profiles[tracker], np.random.SeedSequence([rng_seed, ci, si, 2, wi, ti])
                    )
                    frames = noisy.frames.copy()
                    frames[:, :, :2] = np.round(frames[:, :, :2], cfg.coordinate_decimals)
                    meta = WalkMetadata(walk_id, subject_id, cohort, tracker)
                    records.append(WalkRecord(meta, noisy.replace(frames=frames), truth))
    records.sort(key=lambda r: r.key)
    return records
