"""The gait feature network: shared 1D-conv encoder plus one head per feature."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .core import FEATURE_NAMES, METADATA_SIZE, LossWeights, WalkRecord, feature_entry
from .preprocess import PreprocessConfig, PreprocessError, preprocess_sequence, to_model_input

log = logging.getLogger(__name__)


class LeakageError(ValueError):
    """A subject appears in more than one split."""


@dataclass(frozen=True)
class Pose2GaitConfig:
    # (out_channels, kernel, stride) per conv layer, each followed by ReLU
    conv: tuple[tuple[int, int, int], ...] = ((32, 5, 2), (48, 5, 2), (64, 5, 2), (64, 3, 1))
    head_hidden: int = 64
    lr: float = 1e-5
    epochs: int = 200
    batch_size: int = 20
    loss_weights: LossWeights = field(default_factory=LossWeights)
    standardize_targets: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv", tuple(tuple(int(v) for v in layer) for layer in self.conv))
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", LossWeights(**self.loss_weights))
        if self.batch_size < 1 or self.epochs < 1 or not self.lr > 0:
            raise ValueError("batch_size, epochs and lr must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [list(layer) for layer in self.conv]
        return d


def architecture(config: Pose2GaitConfig, window: int, n_joints: int, metadata: int = METADATA_SIZE) -> dict:
    layers = []
    c_in, t = 2 * n_joints, window
    for c_out, k, s in config.conv:
        t_out = nn.conv1d_output_length(t, k, s)
        layers.append({"in": c_in, "out": c_out, "kernel": k, "stride": s, "length": t_out})
        c_in, t = c_out, t_out
    return {
        "window": window,
        "n_joints": n_joints,
        "metadata": metadata,
        "conv": layers,
        "flat": c_in * t,
        "head_in": c_in * t + metadata,
        "head_hidden": config.head_hidden,
        "features": list(FEATURE_NAMES),
    }


def init_state(config: Pose2GaitConfig, window: int, n_joints: int, dtype=np.float32, zero: bool = False) -> nn.ModelState:
    """Uniform fan-in initialisation, +/- sqrt(1 / fan_in)."""
    arch = architecture(config, window, n_joints)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))

    def uniform(shape, fan_in):
        if zero:
            return np.zeros(shape, dtype=dtype)
        bound = np.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    params = {}
    for i, layer in enumerate(arch["conv"]):
        fan_in = layer["in"] * layer["kernel"]
        params[f"enc{i}.weight"] = uniform((layer["out"], layer["in"], layer["kernel"]), fan_in)
        params[f"enc{i}.bias"] = uniform((layer["out"],), fan_in)
    h_in, hid = arch["head_in"], arch["head_hidden"]
    for name in FEATURE_NAMES:
        params[f"head.{name}.0.weight"] = uniform((hid, h_in), h_in)
        params[f"head.{name}.0.bias"] = uniform((hid,), h_in)
        params[f"head.{name}.1.weight"] = uniform((1, hid), hid)
        params[f"head.{name}.1.bias"] = uniform((1,), hid)
    return nn.ModelState(arch=arch, params=params, seed=config.seed)


def network(arch: dict, params: dict[str, nn.Tensor], x: nn.Tensor, meta: nn.Tensor) -> nn.Tensor:
    """Graph of the full network; returns (B, 4) predictions."""
    h = x
    for i, layer in enumerate(arch["conv"]):
        h = nn.relu(nn.conv1d(h, params[f"enc{i}.weight"], params[f"enc{i}.bias"], layer["stride"]))
    h = nn.concat([nn.flatten(h), meta], axis=1)
    outs = []
    for name in FEATURE_NAMES:
        z = nn.relu(nn.linear(h, params[f"head.{name}.0.weight"], params[f"head.{name}.0.bias"]))
        outs.append(nn.linear(z, params[f"head.{name}.1.weight"], params[f"head.{name}.1.bias"]))
    return nn.concat(outs, axis=1)


def _batchify(state: nn.ModelState, x: np.ndarray, meta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    arch = state.arch
    x = np.asarray(x)
    meta = np.asarray(meta)
    if x.ndim == 2:
        x, meta = x[None], meta[None]
    expected = (arch["window"], 2 * arch["n_joints"])
    if x.shape[1:] != expected:
        raise ValueError(f"input shape {x.shape[1:]} does not match architecture {expected}")
    if meta.shape != (x.shape[0], arch["metadata"]):
        raise ValueError(f"metadata shape {meta.shape} != ({x.shape[0]}, {arch['metadata']})")
    dtype = next(iter(state.params.values())).dtype
    return x.astype(dtype, copy=False), meta.astype(dtype, copy=False)


def forward(state: nn.ModelState, x: np.ndarray, meta: np.ndarray) -> np.ndarray:
    """Predictions in training (standardised) units, shape (B, 4) or (4,)."""
    single = np.asarray(x).ndim == 2
    xb, mb = _batchify(state, x, meta)
    params = {k: nn.Tensor(v) for k, v in state.params.items()}
    out = network(state.arch, params, nn.Tensor(xb), nn.Tensor(mb)).data
    return out[0] if single else out


def loss_and_grads(state: nn.ModelState, x: np.ndarray, meta: np.ndarray, y: np.ndarray,
                   weights: Sequence[float]) -> tuple[float, dict[str, np.ndarray]]:
    xb, mb = _batchify(state, x, meta)
    params = {k: nn.Tensor(v, requires_grad=True) for k, v in state.params.items()}
    pred = network(state.arch, params, nn.Tensor(xb), nn.Tensor(mb))
    loss = nn.weighted_mse(pred, np.asarray(y, dtype=xb.dtype).reshape(pred.shape), weights)
    nn.backward(loss)
    return float(loss.data), {k: t.grad for k, t in params.items()}


def input_gradients(state: nn.ModelState, x: np.ndarray, meta: np.ndarray, feature: str) -> tuple[np.ndarray, np.ndarray]:
    """d(prediction of ``feature``)/d(input) and d/d(metadata), summed over the batch."""
    xb, mb = _batchify(state, x, meta)
    params = {k: nn.Tensor(v) for k, v in state.params.items()}
    xt, mt = nn.Tensor(xb, requires_grad=True), nn.Tensor(mb, requires_grad=True)
    out = network(state.arch, params, xt, mt)
    dt = out.data.dtype
    pick = np.zeros((1, len(FEATURE_NAMES)), dtype=dt)
    pick[0, FEATURE_NAMES.index(feature)] = 1.0
    nn.backward(nn.tsum(nn.linear(out, nn.Tensor(pick), nn.Tensor(np.zeros(1, dtype=dt)))))
    return xt.grad, mt.grad


# ---------------------------------------------------------------------------
# data preparation

@dataclass
class PreparedData:
    x: np.ndarray
    meta: np.ndarray
    y: np.ndarray | None
    keys: list[tuple[str, str]]
    subjects: list[str]
    cohorts: list[str]
    skipped: list[tuple[tuple[str, str], str]] = field(default_factory=list)

    def __len__(self):
        return len(self.keys)


def prepare(records: Sequence[WalkRecord], pp: PreprocessConfig, mirror_copies: bool = False,
            dtype=np.float32, require_truth: bool = True) -> PreparedData:
    """Preprocess records into model arrays; failures are collected, not raised.

    With ``mirror_copies`` every record also contributes its laterally
    mirrored version.
    """
    xs, ms, ys, keys, subjects, cohorts, skipped = [], [], [], [], [], [], []
    for rec in records:
        if require_truth and rec.truth is None:
            raise ValueError(f"walk {rec.meta.walk_id} ({rec.meta.tracker.value}) has no ground truth")
        variants = (False, True) if mirror_copies else (False,)
        try:
            seqs = [preprocess_sequence(rec.sequence, pp, mirrored=m) for m in variants]
        except PreprocessError as exc:
            skipped.append((rec.key, str(exc)))
            log.warning("event=skip walk_id=%s tracker=%s reason=%r", rec.meta.walk_id, rec.meta.tracker.value, str(exc))
            continue
        for seq in seqs:
            x, m = to_model_input(seq, rec.meta, pp)
            xs.append(x)
            ms.append(m)
            ys.append(rec.truth.as_array() if rec.truth is not None else np.full(4, np.nan))
            keys.append(rec.key)
            subjects.append(rec.meta.subject_id)
            cohorts.append(rec.meta.cohort.value)
    n_ch = 2 * pp.n_joints
    return PreparedData(
        x=np.asarray(xs, dtype=dtype).reshape(-1, pp.window, n_ch),
        meta=np.asarray(ms, dtype=dtype).reshape(-1, METADATA_SIZE),
        y=np.asarray(ys, dtype=np.float64).reshape(-1, 4),
        keys=keys, subjects=subjects, cohorts=cohorts, skipped=skipped,
    )


def check_disjoint_subjects(*splits: Sequence[WalkRecord], names: Sequence[str] = ("train", "val", "test")) -> None:
    seen: dict[str, str] = {}
    for name, split in zip(names, splits):
        for subject in sorted({r.meta.subject_id for r in split}):
            if subject in seen:
                raise LeakageError(f"subject {subject} appears in both {seen[subject]} and {name} splits")
            seen[subject] = name


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    best_state: nn.ModelState
    final_state: nn.ModelState
    n_train: int
    n_val: int
    skipped: list[tuple[tuple[str, str], str]] = field(default_factory=list)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]


def _evaluate_loss(state: nn.ModelState, x: np.ndarray, meta: np.ndarray, y: np.ndarray,
                   weights: np.ndarray, batch: int = 200) -> float:
    total = 0.0
    for i in range(0, len(x), batch):
        pred = forward(state, x[i:i + batch], meta[i:i + batch])
        diff = pred.astype(np.float64) - y[i:i + batch]
        total += float((weights * diff * diff).sum())
    return total / (len(x) * y.shape[1])


def train(
    train_records: Sequence[WalkRecord],
    val_records: Sequence[WalkRecord],
    config: Pose2GaitConfig = Pose2GaitConfig(),
    pp: PreprocessConfig = PreprocessConfig(),
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainReport:
    """Train with Adam, keeping the parameters of the epoch with lowest validation loss.

    Targets are standardised with the training split's mean and SD. Each
    epoch visits every training sequence once in a seed-determined order.
    """
    if not train_records or not val_records:
        raise ValueError("train and validation splits must be non-empty")
    check_disjoint_subjects(train_records, val_records, names=("train", "val"))
    tr = prepare(train_records, pp, mirror_copies=pp.mirror)
    va = prepare(val_records, pp)
    if len(tr) == 0 or len(va) == 0:
        raise ValueError("no usable sequences after preprocessing")

    mean = tr.y.mean(axis=0)
    std = tr.y.std(axis=0) if config.standardize_targets else np.ones(4)
    if not config.standardize_targets:
        mean = np.zeros(4)
    std = np.where(std > 0, std, 1.0)
    y_tr = ((tr.y - mean) / std).astype(np.float32)
    y_va = (va.y - mean) / std
    weights = config.loss_weights.as_array()

    state = init_state(config, pp.window, pp.n_joints)
    state.extra = {
        "target_mean": mean.tolist(),
        "target_std": std.tolist(),
        "preprocess": pp.to_dict(),
        "loss_weights": weights.tolist(),
    }
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 11]))
    train_curve, val_curve = [], []
    best_epoch, best_state = -1, None
    n = len(tr)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            loss, grads = loss_and_grads(state, tr.x[idx], tr.meta[idx], y_tr[idx], weights)
            nn.adam_step(state, grads, config.lr)
            total += loss * len(idx)
        train_curve.append(total / n)
        val_curve.append(_evaluate_loss(state, va.x, va.meta, y_va, weights))
        if best_state is None or val_curve[-1] < val_curve[best_epoch]:
            best_epoch, best_state = epoch, state.copy()
        log.debug("event=epoch epoch=%d train_loss=%.6f val_loss=%.6f", epoch, train_curve[-1], val_curve[-1])
        if on_epoch is not None:
            on_epoch(epoch, train_curve[-1], val_curve[-1])
    best_state.extra["best_epoch"] = best_epoch
    return TrainReport(
        train_loss=train_curve, val_loss=val_curve, best_epoch=best_epoch,
        best_state=best_state, final_state=state, n_train=n, n_val=len(va),
        skipped=tr.skipped + va.skipped,
    )


# ---------------------------------------------------------------------------
# prediction

def destandardize(state: nn.ModelState, pred: np.ndarray) -> np.ndarray:
    mean = np.asarray(state.extra["target_mean"])
    std = np.asarray(state.extra["target_std"])
    return pred.astype(np.float64) * std + mean


def checkpoint_preprocess(state: nn.ModelState) -> PreprocessConfig:
    return PreprocessConfig(**state.extra["preprocess"])


def predict_arrays(state: nn.ModelState, data: PreparedData, batch: int = 200) -> np.ndarray:
    if len(data) == 0:
        return np.empty((0, 4))
    out = [forward(state, data.x[i:i + batch], data.meta[i:i + batch]) for i in range(0, len(data), batch)]
    return destandardize(state, np.concatenate(out))


def predict(state: nn.ModelState, records: Sequence[WalkRecord],
            pp: PreprocessConfig | None = None) -> tuple[list[dict], list[dict]]:
    """Physical-unit predictions per (walk_id, tracker) plus skipped walks with reasons."""
    saved = checkpoint_preprocess(state)
    pp = saved if pp is None else pp
    if pp.window != state.arch["window"] or pp.n_joints != state.arch["n_joints"]:
        raise ValueError(
            f"checkpoint expects window={state.arch['window']}, joints={state.arch['n_joints']}; "
            f"preprocess config gives window={pp.window}, joints={pp.n_joints}"
        )
    data = prepare(records, pp, require_truth=False)
    values = predict_arrays(state, data)
    entries = [
        feature_entry(walk_id, tracker, dict(zip(FEATURE_NAMES, row)))
        for (walk_id, tracker), row in zip(data.keys, values)
    ]
    skipped = [{"walk_id": k[0], "tracker": k[1], "skipped": reason} for k, reason in data.skipped]
    return entries, skipped
