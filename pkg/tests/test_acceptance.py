"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criterion 3 is marked slow (about 12 minutes on one core); run everything with
``pytest tests/test_acceptance.py -v``.
"""
import itertools
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from pose2gait import cli, nn
from pose2gait.core import (
    FEATURE_NAMES, JOINTS_FULL, JOINTS_LOWER, LossWeights, PoseSequence, WalkRecord, read_walks, write_walks,
)
from pose2gait.evaluation import format_report, run_ablation, run_cross_validation, spearman_rho
from pose2gait.gaitevents import oracle_features
from pose2gait.model import Pose2GaitConfig, init_state, loss_and_grads, predict_arrays, prepare, train
from pose2gait.preprocess import PreprocessConfig, mirror, normalize_per_frame, normalize_per_video
from pose2gait.synthgait import generate_dataset, sample_gait_params, simulate_walk3d


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


@pytest.fixture(scope="module")
def synthetic_dataset():
    """50 subjects (38 DS1, 12 DS2), 20 walks each, three trackers."""
    return generate_dataset({"DS1": 38, "DS2": 12}, 20, rng_seed=0)


def test_criterion_1_gradient_check(verdict):
    start = time.perf_counter()
    cfg = Pose2GaitConfig()
    state = init_state(cfg, 120, len(JOINTS_FULL), dtype=np.float64)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 120, 2 * len(JOINTS_FULL)))
    meta = np.eye(5)[[0, 3]]
    y = rng.normal(size=(2, 4))
    weights = LossWeights().as_array()
    _, grads = loss_and_grads(state, x, meta, y, weights)

    def loss():
        return loss_and_grads(state, x, meta, y, weights)[0]

    worst = nn.gradient_check(loss, state.params, grads, h=1e-6, max_entries=30, n_directions=3, seed=1)
    elapsed = time.perf_counter() - start
    err = max(worst.values())
    verdict(1, "gradient check", err < 1e-4 and elapsed < 60,
            f"max rel err {err:.2e} over {len(worst)} arrays, {elapsed:.1f}s")


def test_criterion_2_oracle_fidelity(verdict):
    start = time.perf_counter()
    errs = {n: [] for n in FEATURE_NAMES}
    for i, s in enumerate(np.random.SeedSequence(2024).spawn(100)):
        p = sample_gait_params("DS1" if i % 4 else "DS2", s, cv_step_time=0.0, cv_step_length=0.0, cv_step_width=0.0)
        walk = simulate_walk3d(p, duration=max(4.0, 6 * p.step_time), rng_seed=s)
        f = oracle_features(walk)
        for n in FEATURE_NAMES:
            errs[n].append(abs(getattr(f, n) - getattr(p, n)))
    elapsed = time.perf_counter() - start
    st, sl, sw = (float(np.mean(errs[n])) for n in ("step_time", "step_length", "step_width"))
    ok = st < 0.033 and sl < 1.0 and sw < 1.0 and elapsed < 30
    verdict(2, "oracle fidelity", ok,
            f"MAE step_time {1000 * st:.1f}ms, step_length {sl:.3f}cm, step_width {sw:.3f}cm, {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_3_synthetic_end_to_end(verdict, synthetic_dataset):
    start = time.perf_counter()
    report = run_cross_validation(synthetic_dataset, 10, Pose2GaitConfig(lr=1e-3, epochs=60), seed=0)
    elapsed = time.perf_counter() - start
    rho = {f: report.metric(f).rho for f in FEATURE_NAMES}
    ok = rho["velocity"] >= 0.8 and rho["step_length"] >= 0.6 and rho["velocity"] > rho["step_width"]
    ok = ok and elapsed <= 30 * 60
    verdict(3, "synthetic end-to-end", ok,
            ", ".join(f"rho {f} {rho[f]:.3f}" for f in FEATURE_NAMES) + f", {elapsed / 60:.1f} min")


def _random_sequence(rng):
    joints = JOINTS_LOWER if rng.random() < 0.5 else JOINTS_FULL
    n = int(rng.integers(1, 41))
    frames = np.empty((n, len(joints), 3))
    frames[:, :, :2] = rng.uniform(-200, 200, size=(n, len(joints), 2))
    li, ri = joints.index("left_hip"), joints.index("right_hip")
    angle = rng.uniform(0, 2 * np.pi, size=n)
    half = 0.5 * rng.uniform(5, 80, size=n)[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    mid = frames[:, li, :2].copy()
    frames[:, li, :2], frames[:, ri, :2] = mid - half, mid + half
    frames[:, :, 2] = 1.0
    return PoseSequence(frames, 30.0, joints)


def test_criterion_4_normalization_invariances(verdict):
    rng = np.random.default_rng(4)
    inv = unit = invol = 0.0
    for _ in range(1000):
        seq = _random_sequence(rng)
        scale, shift = rng.uniform(0.05, 20.0), rng.uniform(-1e3, 1e3, size=2)
        moved = seq.frames.copy()
        moved[:, :, :2] = moved[:, :, :2] * scale + shift
        a = normalize_per_video(seq).xy
        b = normalize_per_video(seq.replace(frames=moved)).xy
        inv = max(inv, float(np.max(np.abs(a - b))))
        out = normalize_per_frame(seq)
        li, ri = out.joint_names.index("left_hip"), out.joint_names.index("right_hip")
        widths = np.linalg.norm(out.xy[:, ri] - out.xy[:, li], axis=-1)
        unit = max(unit, float(np.max(np.abs(widths - 1.0))))
        invol = max(invol, float(np.max(np.abs(mirror(mirror(seq)).frames - seq.frames))))
    ok = inv <= 1e-6 and unit <= 1e-6 and invol <= 1e-9
    verdict(4, "normalization invariances", ok,
            f"similarity {inv:.1e}, per-frame hip width {unit:.1e}, mirror involution {invol:.1e} over 1000 sequences")


def _brute_spearman(x, y):
    def ranks(v):
        return [sum(a < u for a in v) + (sum(a == u for a in v) + 1) / 2 for u in v]
    rx, ry = ranks(x), ranks(y)
    mx, my = math.fsum(rx) / len(rx), math.fsum(ry) / len(ry)
    num = math.fsum((a - mx) * (b - my) for a, b in zip(rx, ry))
    return num / math.sqrt(math.fsum((a - mx) ** 2 for a in rx) * math.fsum((b - my) ** 2 for b in ry))


def test_criterion_5_spearman(verdict):
    worst, checked = 0.0, 0
    rng = np.random.default_rng(5)
    for n in range(3, 8):
        if n <= 4:
            # every tie pattern: all vectors over n distinct levels
            vectors = [list(v) for v in itertools.product(range(n), repeat=n) if len(set(v)) > 1]
            pairs = itertools.product(vectors, vectors)
        else:
            pairs = ((list(rng.integers(0, n, n)), list(rng.integers(0, n, n))) for _ in range(3000))
        for x, y in pairs:
            if len(set(x)) == 1 or len(set(y)) == 1:
                continue
            worst = max(worst, abs(spearman_rho(x, y)[0] - _brute_spearman(x, y)))
            checked += 1
    hand = spearman_rho([1, 2, 3, 4], [1, 3, 2, 4])[0]
    verdict(5, "spearman", worst <= 1e-12 and hand == 0.8,
            f"max |diff| {worst:.1e} over {checked} pairs, hand case {hand!r}")


def test_criterion_6_weighted_mse(verdict):
    w = LossWeights().as_array()
    target = np.random.default_rng(6).normal(size=(5, 4))
    unit = float(nn.weighted_mse(nn.Tensor(target + 1.0), target, w).data)
    exact = float(nn.weighted_mse(nn.Tensor(np.ones((5, 4))), np.zeros((5, 4)), w).data)
    zero = float(nn.weighted_mse(nn.Tensor(target.copy()), target, w).data)
    verdict(6, "weighted MSE", exact == 1.1875 and zero == 0.0 and abs(unit - 1.1875) < 1e-15,
            f"unit errors {exact!r}, pred=target {zero!r}")


def test_criterion_7_overfit(verdict):
    recs = [r for r in generate_dataset({"DS1": 5, "DS2": 5}, 1, rng_seed=21) if r.meta.tracker.value == "TrackerA"]
    val = [r for r in generate_dataset({"DS1": 0, "DS2": 1}, 1, rng_seed=22) if r.meta.tracker.value == "TrackerA"]
    # the validation subject id must not collide with a training subject
    val = [WalkRecord(replace(v.meta, subject_id="HELD-OUT", walk_id="HELD-OUT-W0"), v.sequence, v.truth) for v in val]
    rep = train(recs, val, Pose2GaitConfig(lr=1e-3, epochs=500))
    data = prepare(recs, PreprocessConfig())
    err = np.abs(predict_arrays(rep.final_state, data) - data.y).mean(axis=0)
    rel = err / data.y.std(axis=0)
    ratio = rep.train_loss[-1] / rep.train_loss[0]
    verdict(7, "overfit", len(recs) == 10 and ratio < 0.01 and bool(np.all(rel < 0.05)),
            f"final/first loss {ratio:.2e}, MAE/SD " + ", ".join(f"{f} {v:.3f}" for f, v in zip(FEATURE_NAMES, rel)))


def _run_pipeline(root, tag):
    cfg = {
        "seed": 11,
        "generate": {"n_subjects": {"DS1": 4, "DS2": 2}, "walks_per_subject": 2},
        "model": {"epochs": 3, "lr": 1e-3},
        "eval": {"k": 3, "variants": ["main", "mirror"]},
    }
    run = root / tag
    run.mkdir()
    path = run / "config.json"
    path.write_text(json.dumps(cfg))
    codes = [cli.main(["generate", "--config", str(path), "--out", str(run / "data")])]
    records = read_walks(run / "data" / "walks.jsonl.gz")
    write_walks([r for r in records if r.meta.subject_id != "DS2-S001"], run / "train.jsonl.gz")
    write_walks([r for r in records if r.meta.subject_id == "DS2-S001"], run / "val.jsonl.gz")
    cfg["data"] = {"walks": str(run / "data" / "walks.jsonl.gz"),
                   "train_walks": str(run / "train.jsonl.gz"), "val_walks": str(run / "val.jsonl.gz")}
    path.write_text(json.dumps(cfg))
    codes.append(cli.main(["train", "--config", str(path), "--out", str(run / "train")]))
    codes.append(cli.main(["ablate", "--config", str(path), "--out", str(run / "ablate")]))
    return codes, {
        "dataset": (run / "data" / "walks.jsonl.gz").read_bytes(),
        "truth": (run / "data" / "truth.jsonl").read_bytes(),
        "loss curves": (run / "train" / "train_report.json").read_bytes(),
        "checkpoint": (run / "train" / "checkpoint.p2g").read_bytes(),
        **{name: (run / "ablate" / name).read_bytes()
           for name in ("report.txt", "metrics.csv", "predictions.csv", "report.json")},
    }


def test_criterion_8_determinism(verdict, tmp_path):
    codes_a, a = _run_pipeline(tmp_path, "a")
    codes_b, b = _run_pipeline(tmp_path, "b")
    differing = [k for k in a if a[k] != b[k]]
    ok = codes_a == codes_b == [0, 0, 0] and not differing
    verdict(8, "determinism", ok, f"exit codes {codes_a}/{codes_b}, {len(a)} artifacts compared, differing: {differing or 'none'}")


def test_criterion_9_ablation(verdict, synthetic_dataset):
    # the criterion 3 dataset and folds, with 2 epochs per fold so the four-variant sweep takes minutes
    start = time.perf_counter()
    reports = run_ablation(synthetic_dataset, k=10, config=Pose2GaitConfig(lr=1e-3, epochs=2), seed=0)
    elapsed = time.perf_counter() - start
    shared = all(r.settings["folds"] == reports["main"].settings["folds"] for r in reports.values())
    doubled = all(m.n_train * 2 == x.n_train for m, x in zip(reports["main"].folds, reports["mirror"].folds))
    text = format_report(reports)
    table = text.split("Spearman rho per variant\n", 1)[-1].splitlines()
    header = [c.strip() for c in table[0].split("|")]
    labels = [line.split("|")[0].strip() for line in table[2:6]]
    shaped = header == ["Model", "Step Time", "Step Width", "Step Length", "Velocity"] and \
        labels == ["P2G", "P2G+Mirror", "P2G+Lower", "P2G+PerFrame"]
    ok = list(reports) == ["main", "mirror", "lower_body", "per_frame"] and shared and doubled and shaped
    verdict(9, "ablation harness", ok,
            f"shared folds {shared}, mirror 2x training sequences {doubled}, table shape {shaped}, {elapsed / 60:.1f} min")
