import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pose2gait.core import JOINTS_FULL, PoseSequence
from pose2gait.gaitevents import oracle_features
from pose2gait.synthgait import (
    DEFAULT_PROFILES, CameraModel, GaitParams, GenerationConfig, TrackerProfile,
    apply_tracker_noise, generate_dataset, project_to_camera, sample_gait_params,
    simulate_walk3d, true_features,
)


def clean_params(**kw):
    base = dict(step_time=0.6, step_length=33.0, step_width=17.0)
    base.update(kw)
    return GaitParams.from_steps(base.pop("step_time"), base.pop("step_length"), base.pop("step_width"), **base)


def test_gait_params_invariants():
    p = clean_params()
    assert p.velocity == pytest.approx(55.0, rel=1e-12)
    with pytest.raises(ValueError):
        GaitParams(0.6, 17.0, 33.0, 60.0)
    with pytest.raises(ValueError):
        clean_params(stance_fraction=0.85)


@pytest.mark.parametrize("cohort, feature, mean, cv", [
    ("DS1", "step_length", 30.0, 0.32),
    ("DS1", "step_time", 0.60, 0.21),
    ("DS1", "step_width", 17.0, 0.27),
    ("DS2", "step_time", 0.61, 0.43),
    ("DS2", "step_length", 32.0, 0.29),
])
def test_sampled_distribution_matches_cohort_table(cohort, feature, mean, cv):
    ss = np.random.SeedSequence(42).spawn(10_000)
    values = np.array([getattr(sample_gait_params(cohort, s), feature) for s in ss])
    assert abs(values.mean() / mean - 1) <= 0.05
    assert abs(values.std() / values.mean() - cv) <= 0.05


def test_sampling_is_deterministic_and_validates_cohort():
    assert sample_gait_params("DS2", 5) == sample_gait_params("DS2", 5)
    assert sample_gait_params("DS2", 5) != sample_gait_params("DS2", 6)
    with pytest.raises(ValueError):
        sample_gait_params("DS3", 0)


def test_pelvis_displacement_matches_commanded_velocity():
    walk = simulate_walk3d(clean_params(), duration=4.0, fps=30)
    # mid-hip sway is lateral and the bob vertical, so z tracks the heel-strike midpoints
    z = walk.mid_hip[:, 2]
    assert abs((z[0] - z[-1]) - 220.0) <= 1.0
    assert np.all(np.diff(z) < 0)


def test_duration_shorter_than_two_cycles_rejected():
    with pytest.raises(ValueError, match="two gait cycles"):
        simulate_walk3d(clean_params(step_time=0.6), duration=2.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), cohort=st.sampled_from(["DS1", "DS2"]))
def test_ankles_still_during_stance(seed, cohort):
    params = sample_gait_params(cohort, seed)
    walk = simulate_walk3d(params, duration=max(5.0, 5 * params.step_time), rng_seed=seed)
    t = walk.times
    for side, name in ((0, "left_ankle"), (1, "right_ankle")):
        traj = walk.joint(name)
        speed = np.linalg.norm(np.diff(traj, axis=0), axis=1)
        for k in np.flatnonzero(walk.steps.side == side):
            a, b = walk.steps.times[k], walk.steps.toe_off[k]
            inside = (t[:-1] >= a) & (t[1:] <= b)
            assert np.all(speed[inside] < 1.0)


def test_heel_strikes_18_frames_apart_at_0_6s():
    walk = simulate_walk3d(clean_params(step_time=0.6), duration=5.0, fps=30)
    _, frames = walk.heel_strike_frames()
    assert np.all(np.abs(np.diff(frames) - 18) <= 1)


def test_true_features_noise_free_equal_commanded():
    p = clean_params(step_time=0.55, step_length=41.0, step_width=12.0)
    walk = simulate_walk3d(p, duration=6.0)
    f = true_features(walk, (walk.n_frames - 120, walk.n_frames))
    assert f.step_time == pytest.approx(p.step_time, rel=1e-12)
    assert f.step_length == pytest.approx(p.step_length, rel=1e-12)
    assert f.step_width == pytest.approx(p.step_width, rel=1e-12)
    assert f.velocity == pytest.approx(p.velocity, rel=1e-12)


def test_true_features_average_emitted_steps():
    p = clean_params(step_time=0.5, step_length=30.0, cv_step_length=0.05)
    walk = simulate_walk3d(p, duration=6.0, rng_seed=11)
    tk = walk.steps.times
    window = (0, walk.n_frames)
    idx = np.flatnonzero((tk >= 0) & (tk <= (walk.n_frames - 1) / walk.fps))
    expected = np.abs(np.diff(walk.steps.pos[idx, 1])).mean()
    f = true_features(walk, window)
    assert f.step_length == pytest.approx(expected, rel=1e-12)
    assert abs(f.step_length - 30.0) < 2.0


def test_true_features_needs_two_heel_strikes():
    walk = simulate_walk3d(clean_params(step_time=0.6), duration=4.0)
    _, frames = walk.heel_strike_frames()
    with pytest.raises(ValueError, match="heel strike"):
        true_features(walk, (frames[0], frames[0] + 5))


def test_point_on_optical_axis_hits_principal_point():
    cam = CameraModel(pitch_deg=0.0)
    uv = cam.project(np.array([[0.0, cam.height, 300.0]]))
    assert np.allclose(uv, [[cam.cu, cam.cv]])
    cam = CameraModel(pitch_deg=25.0)
    d = np.radians(25.0)
    uv = cam.project(np.array([[0.0, cam.height - 400 * np.sin(d), 400 * np.cos(d)]]))
    assert np.allclose(uv, [[cam.cu, cam.cv]])


def test_projection_behind_camera_rejected():
    cam = CameraModel()
    with pytest.raises(ValueError, match="behind"):
        cam.project(np.array([[0.0, cam.height, -5.0]]))
    with pytest.raises(ValueError):
        CameraModel(focal=0)


def test_doubling_distance_halves_hip_width():
    cam = CameraModel(pitch_deg=0.0)
    hips = np.array([[-15.0, 100.0, 300.0], [15.0, 100.0, 300.0]])
    near = cam.project(hips)
    # with zero pitch the depth is the z coordinate, so doubling z doubles depth
    far = cam.project(hips * np.array([1.0, 1.0, 2.0]))
    w_near = np.linalg.norm(near[1] - near[0])
    w_far = np.linalg.norm(far[1] - far[0])
    assert w_far == pytest.approx(w_near / 2, rel=1e-12)


def test_projection_scale_grows_as_walker_approaches():
    walk = simulate_walk3d(clean_params(), duration=5.0)
    seq = project_to_camera(walk, CameraModel())
    assert np.all(seq.conf == 1.0)
    hw = np.linalg.norm(seq.joint("left_hip")[:, :2] - seq.joint("right_hip")[:, :2], axis=1)
    assert hw[-30:].mean() > hw[:30].mean()


def test_identity_tracker_profile():
    walk = simulate_walk3d(clean_params(), duration=5.0)
    seq = project_to_camera(walk, CameraModel())
    out = apply_tracker_noise(seq, TrackerProfile("none", 0.0), 3)
    assert out == seq


def test_full_dropout_on_ankles():
    walk = simulate_walk3d(clean_params(), duration=5.0)
    seq = project_to_camera(walk, CameraModel())
    out = apply_tracker_noise(seq, TrackerProfile("x", 0.0, dropout={"left_ankle": 1.0, "right_ankle": 1.0}), 3)
    assert np.all(out.joint("left_ankle")[:, 2] == 0) and np.all(out.joint("right_ankle")[:, 2] == 0)
    assert np.all(out.joint("left_knee")[:, 2] == 1)


def test_jitter_mean_absolute_displacement():
    frames = np.zeros((10_000, 12, 3))
    frames[:, :, :2] = 100.0
    frames[:, :, 2] = 1.0
    seq = PoseSequence(frames, 30.0, JOINTS_FULL)
    out = apply_tracker_noise(seq, TrackerProfile("j", 2.0), 0)
    mad = np.abs(out.xy - seq.xy).mean()
    assert mad == pytest.approx(2 * math.sqrt(2 / math.pi), rel=0.05)


def test_swap_runs_exchange_left_right():
    walk = simulate_walk3d(clean_params(), duration=5.0)
    seq = project_to_camera(walk, CameraModel())
    out = apply_tracker_noise(seq, TrackerProfile("s", 0.0, swap=0.2, max_swap_run=3), 1)
    la, ra = seq.joint("left_ankle")[:, :2], seq.joint("right_ankle")[:, :2]
    swapped = np.all(out.joint("left_ankle")[:, :2] == ra, axis=1) & np.all(out.joint("right_ankle")[:, :2] == la, axis=1)
    untouched = np.all(out.joint("left_ankle")[:, :2] == la, axis=1)
    assert swapped.any() and np.all(swapped | untouched)


def test_profiles_distinct_and_validated():
    assert len({(p.sigma, p.swap) for p in DEFAULT_PROFILES.values()}) == 3
    with pytest.raises(ValueError):
        TrackerProfile("bad", -1.0)
    with pytest.raises(ValueError):
        TrackerProfile("bad", 1.0, swap=1.0)


def test_dataset_counts_and_ids():
    recs = generate_dataset({"DS1": 2, "DS2": 0}, 3, rng_seed=0)
    assert len(recs) == 18
    assert len({r.meta.walk_id for r in recs}) == 6
    assert [r.key for r in recs] == sorted(r.key for r in recs)
    for r in recs:
        assert r.truth is not None and r.sequence.n_frames >= 120


def test_tracker_versions_share_kinematics(small_dataset):
    by_walk = {}
    for r in small_dataset:
        by_walk.setdefault(r.meta.walk_id, []).append(r)
    for recs in by_walk.values():
        assert len(recs) == 3
        assert len({r.truth for r in recs}) == 1
        assert len({r.sequence.n_frames for r in recs}) == 1


def test_window_inside_image(small_dataset):
    cam = CameraModel()
    for r in small_dataset:
        xy = r.sequence.xy[-120:]
        ok = np.isnan(xy[..., 0]) | cam.inside(np.nan_to_num(xy))
        assert ok.all()


def test_between_subject_velocity_variance_dominates():
    recs = [r for r in generate_dataset({"DS1": 12, "DS2": 4}, 8, rng_seed=5) if r.meta.tracker.value == "TrackerA"]
    by_subject = {}
    for r in recs:
        by_subject.setdefault(r.meta.subject_id, []).append(r.truth.velocity)
    means = [np.mean(v) for v in by_subject.values()]
    within = np.mean([np.var(v, ddof=1) for v in by_subject.values()])
    assert np.var(means, ddof=1) / within > 1


def test_dataset_deterministic():
    a = generate_dataset({"DS1": 1, "DS2": 1}, 2, rng_seed=9)
    b = generate_dataset({"DS1": 1, "DS2": 1}, 2, rng_seed=9)
    c = generate_dataset({"DS1": 1, "DS2": 1}, 2, rng_seed=10)
    assert a == b
    assert a != c


def test_oracle_recovers_commanded_values_on_noise_free_walk():
    p = clean_params(step_time=0.62, step_length=28.0, step_width=15.0)
    walk = simulate_walk3d(p, duration=6.0)
    f = oracle_features(walk)
    assert abs(f.step_time - p.step_time) <= 1 / 30
    assert abs(f.step_length - p.step_length) <= 1.0
    assert abs(f.step_width - p.step_width) <= 1.0


def test_generation_config_rejects_bad_counts():
    with pytest.raises(ValueError):
        generate_dataset({"DS1": 0, "DS2": 0}, 1)
    with pytest.raises(ValueError):
        generate_dataset({"DS1": 1}, 0)
    assert GenerationConfig().walk_cv < 0.21
