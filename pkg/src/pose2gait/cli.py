"""Command line entry point: ``pose2gait {generate,baseline,train,evaluate,ablate,predict}``.

Every subcommand reads an experiment config (YAML or JSON, ``--config``)
whose values can be overridden by flags, writes its outputs plus a
``manifest.json`` into the output directory, and exits with

    0  success
    2  config or file-schema error
    3  data error (leakage, unusable walks, missing data files)
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import scipy
import yaml

from . import __version__, nn
from .core import COHORTS, FEATURE_NAMES, TRACKERS, LossWeights, SchemaError, Tracker, WalkRecord
from .core import feature_entry, read_walks, write_features, write_walks
from .evaluation import VARIANT_LABELS, canonical_variant, run_ablation, run_cross_validation, write_reports
from .gaitevents import baseline_features_2d
from .model import LeakageError, Pose2GaitConfig, predict, train
from .preprocess import PreprocessConfig, PreprocessError, interpolate_missing
from .synthgait import DEFAULT_PROFILES, CameraModel, GenerationConfig, TrackerProfile, generate_dataset

log = logging.getLogger("pose2gait")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# experiment config

@dataclass(frozen=True)
class DataPaths:
    walks: str | None = None
    train_walks: str | None = None
    val_walks: str | None = None
    checkpoint: str | None = None


@dataclass(frozen=True)
class EvalSettings:
    k: int = 10
    variants: tuple[str, ...] = ("main", "mirror", "lower_body", "per_frame")
    test_trackers: tuple[str, ...] = ("TrackerA",)
    cohort: str | None = None
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/experiment"
    data: DataPaths = field(default_factory=DataPaths)
    generate: GenerationConfig = field(default_factory=GenerationConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: Pose2GaitConfig = field(default_factory=Pose2GaitConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)


def _check_keys(raw: Any, allowed: Sequence[str], where: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed {sorted(allowed)}")
    return dict(raw)


def _names(cls) -> list[str]:
    return [f.name for f in fields(cls)]


def _build(cls, raw: Any, where: str, **converted):
    values = _check_keys(raw, _names(cls), where)
    values.update(converted)
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _generation(raw: Any) -> GenerationConfig:
    values = _check_keys(raw, [n for n in _names(GenerationConfig) if n != "profiles"] + ["trackers"], "generate")
    conv = {}
    if "camera" in values:
        conv["camera"] = _build(CameraModel, values.pop("camera"), "generate.camera")
    if "trackers" in values:
        trackers = _check_keys(values.pop("trackers"), [t.value for t in TRACKERS], "generate.trackers")
        profiles = dict(DEFAULT_PROFILES)
        for name, spec in trackers.items():
            spec = _check_keys(spec, [n for n in _names(TrackerProfile) if n != "name"], f"generate.trackers.{name}")
            profiles[Tracker(name)] = _build(TrackerProfile, spec, f"generate.trackers.{name}", name=name)
        conv["profiles"] = profiles
    if "end_distance" in values:
        conv["end_distance"] = tuple(values.pop("end_distance"))
    if "n_subjects" in values:
        conv["n_subjects"] = _check_keys(values.pop("n_subjects"), [c.value for c in COHORTS], "generate.n_subjects")
    return _build(GenerationConfig, values, "generate", **conv)


def _model(raw: Any) -> Pose2GaitConfig:
    values = _check_keys(raw, _names(Pose2GaitConfig), "model")
    conv = {}
    if "conv" in values:
        conv["conv"] = tuple(tuple(int(v) for v in layer) for layer in values.pop("conv"))
    if "loss_weights" in values:
        conv["loss_weights"] = _build(LossWeights, values.pop("loss_weights"), "model.loss_weights")
    for key in ("lr",):
        if key in values:
            conv[key] = float(values.pop(key))
    return _build(Pose2GaitConfig, values, "model", **conv)


def _eval(raw: Any) -> EvalSettings:
    values = _check_keys(raw, _names(EvalSettings), "eval")
    conv = {}
    if "variants" in values:
        try:
            conv["variants"] = tuple(canonical_variant(v) for v in values.pop("variants"))
        except ValueError as exc:
            raise ConfigError(f"eval.variants: {exc}") from None
    if "test_trackers" in values:
        try:
            conv["test_trackers"] = tuple(Tracker(t).value for t in values.pop("test_trackers"))
        except ValueError as exc:
            raise ConfigError(f"eval.test_trackers: {exc}") from None
    settings = _build(EvalSettings, values, "eval", **conv)
    if settings.cohort is not None and settings.cohort not in [c.value for c in COHORTS]:
        raise ConfigError(f"eval.cohort: unknown cohort {settings.cohort!r}")
    return settings


def parse_config(raw: Mapping | None) -> ExperimentConfig:
    values = _check_keys(raw, _names(ExperimentConfig), "config")
    return ExperimentConfig(
        seed=int(values.get("seed", 0)),
        out=str(values.get("out", ExperimentConfig.out)),
        data=_build(DataPaths, values.get("data"), "data"),
        generate=_generation(values.get("generate")),
        preprocess=_build(PreprocessConfig, values.get("preprocess"), "preprocess"),
        model=_model(values.get("model")),
        eval=_eval(values.get("eval")),
    )


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: not valid {'JSON' if path.suffix == '.json' else 'YAML'}: {exc}") from None
    return parse_config(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    gen = cfg.generate
    return {
        "seed": cfg.seed,
        "out": cfg.out,
        "data": vars(cfg.data).copy(),
        "generate": {
            **{n: getattr(gen, n) for n in _names(GenerationConfig) if n not in ("camera", "profiles", "n_subjects", "end_distance")},
            "n_subjects": dict(gen.n_subjects),
            "end_distance": list(gen.end_distance),
            "camera": vars(gen.camera).copy(),
            "trackers": {t.value: {n: getattr(p, n) for n in _names(TrackerProfile) if n != "name"}
                         for t, p in sorted(gen.profiles.items(), key=lambda kv: kv[0].value)},
        },
        "preprocess": cfg.preprocess.to_dict(),
        "model": cfg.model.to_dict(),
        "eval": {**vars(cfg.eval), "variants": list(cfg.eval.variants), "test_trackers": list(cfg.eval.test_trackers)},
    }


def config_fingerprint(cfg: ExperimentConfig) -> str:
    """Hash of everything that determines results (the output directory does not)."""
    settings = config_to_dict(cfg)
    del settings["out"]
    blob = json.dumps(settings, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# helpers

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, outputs: Sequence[Path], extra: Mapping | None = None) -> Path:
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config_fingerprint": config_fingerprint(cfg),
        "config": config_to_dict(cfg),
        "versions": {"pose2gait": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=list) + "\n")
    return path


def _load_records(path: str | None, what: str, cohort: str | None = None) -> list[WalkRecord]:
    if not path:
        raise ConfigError(f"data.{what} is not set")
    p = Path(path)
    if not p.exists():
        raise DataError(f"data.{what}: file {p} does not exist")
    records = read_walks(p)
    if cohort is not None:
        records = [r for r in records if r.meta.cohort.value == cohort]
    if not records:
        raise DataError(f"data.{what}: no walks{'' if cohort is None else f' for cohort {cohort}'} in {p}")
    log.info("event=load what=%s path=%s records=%d", what, p, len(records))
    return records


def _records_or_generate(cfg: ExperimentConfig) -> list[WalkRecord]:
    if cfg.data.walks:
        return _load_records(cfg.data.walks, "walks", cfg.eval.cohort)
    log.info("event=generate_in_memory seed=%d", cfg.seed)
    records = generate_dataset(rng_seed=cfg.seed, config=cfg.generate)
    if cfg.eval.cohort is not None:
        records = [r for r in records if r.meta.cohort.value == cfg.eval.cohort]
    return records


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(cfg: ExperimentConfig, out: Path) -> list[Path]:
    records = generate_dataset(rng_seed=cfg.seed, config=cfg.generate)
    walks = out / "walks.jsonl.gz"
    truth = out / "truth.jsonl"
    write_walks(records, walks)
    write_features([feature_entry(r.meta.walk_id, r.meta.tracker.value, dict(zip(FEATURE_NAMES, r.truth.as_array()))) for r in records], truth)
    log.info("event=generated records=%d walks=%d subjects=%d", len(records),
             len({r.meta.walk_id for r in records}), len({r.meta.subject_id for r in records}))
    return [walks, truth]


def cmd_baseline(cfg: ExperimentConfig, out: Path) -> list[Path]:
    records = _load_records(cfg.data.walks, "walks", cfg.eval.cohort)
    entries = []
    for rec in records:
        try:
            feats = baseline_features_2d(interpolate_missing(rec.sequence))
        except ValueError as exc:
            log.warning("event=skip walk_id=%s tracker=%s reason=%r", rec.meta.walk_id, rec.meta.tracker.value, str(exc))
            entries.append({"walk_id": rec.meta.walk_id, "tracker": rec.meta.tracker.value, "skipped": str(exc)})
            continue
        entries.append(feature_entry(rec.meta.walk_id, rec.meta.tracker.value, feats))
    if all("skipped" in e for e in entries):
        raise DataError("baseline failed on every walk")
    path = out / "baseline_features.jsonl"
    write_features(entries, path)
    return [path]


def cmd_train(cfg: ExperimentConfig, out: Path) -> list[Path]:
    tr = _load_records(cfg.data.train_walks, "train_walks", cfg.eval.cohort)
    va = _load_records(cfg.data.val_walks, "val_walks", cfg.eval.cohort)
    report = train(tr, va, replace(cfg.model, seed=cfg.seed), cfg.preprocess,
                   on_epoch=lambda e, a, b: log.info("event=epoch epoch=%d train_loss=%.6f val_loss=%.6f", e, a, b))
    ckpt = out / "checkpoint.p2g"
    nn.save_checkpoint(report.best_state, ckpt)
    summary = out / "train_report.json"
    summary.write_text(json.dumps({
        "best_epoch": report.best_epoch,
        "train_loss": [float(v) for v in report.train_loss],
        "val_loss": [float(v) for v in report.val_loss],
        "n_train": report.n_train,
        "n_val": report.n_val,
        "skipped": [{"walk_id": k[0], "tracker": k[1], "skipped": r} for k, r in report.skipped],
    }, indent=1) + "\n")
    log.info("event=trained best_epoch=%d best_val_loss=%.6f", report.best_epoch, report.val_loss[report.best_epoch])
    return [ckpt, summary]


def _variants(cfg: ExperimentConfig, requested: Sequence[str] | None) -> list[str]:
    try:
        return [canonical_variant(v) for v in (requested or cfg.eval.variants)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_evaluate(cfg: ExperimentConfig, out: Path, variants: Sequence[str] | None = None) -> list[Path]:
    (variant,) = _variants(cfg, variants[:1] if variants else ["main"])
    records = _records_or_generate(cfg)
    report = run_cross_validation(
        records, cfg.eval.k, cfg.model, cfg.preprocess, cfg.seed, variant=variant,
        test_trackers=cfg.eval.test_trackers, workers=cfg.eval.workers,
        on_fold=lambda f: log.info("event=fold fold=%d best_epoch=%d n_test=%d", f.fold, f.best_epoch, f.n_test),
    )
    return write_reports([report], out)


def cmd_ablate(cfg: ExperimentConfig, out: Path, variants: Sequence[str] | None = None) -> list[Path]:
    names = _variants(cfg, variants)
    records = _records_or_generate(cfg)
    reports = run_ablation(
        records, names, cfg.eval.k, cfg.model, cfg.preprocess, cfg.seed,
        test_trackers=cfg.eval.test_trackers, workers=cfg.eval.workers,
        on_fold=lambda f: log.info("event=fold fold=%d best_epoch=%d n_train=%d", f.fold, f.best_epoch, f.n_train),
    )
    return write_reports(reports, out)


def cmd_predict(cfg: ExperimentConfig, out: Path) -> list[Path]:
    if not cfg.data.checkpoint:
        raise ConfigError("data.checkpoint is not set")
    ckpt = Path(cfg.data.checkpoint)
    if not ckpt.exists():
        raise DataError(f"data.checkpoint: file {ckpt} does not exist")
    state = nn.load_checkpoint(ckpt)
    records = _load_records(cfg.data.walks, "walks", cfg.eval.cohort)
    entries, skipped = predict(state, records)
    for s in skipped:
        log.warning("event=skip walk_id=%s tracker=%s reason=%r", s["walk_id"], s["tracker"], s["skipped"])
    if not entries:
        raise DataError("no walk could be preprocessed")
    path = out / "features.jsonl"
    write_features(sorted(entries + skipped, key=lambda e: (e["walk_id"], e["tracker"])), path)
    return [path]


COMMANDS = {
    "generate": cmd_generate,
    "baseline": cmd_baseline,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "predict": cmd_predict,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pose2gait", description="Gait features from 2D frontal-view pose sequences.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config (YAML or JSON)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--cohort", choices=[c.value for c in COHORTS], help="restrict to one cohort")
        p.add_argument("--variant", action="append", metavar="NAME",
                       help=f"model variant, repeatable for ablate ({', '.join(VARIANT_LABELS)})")
        p.add_argument("--workers", type=int, help="parallel folds")
        p.add_argument("--log-level", default="INFO")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="level=%(levelname)s logger=%(name)s %(message)s")
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        cfg = replace(cfg, **overrides)
        eval_overrides = {}
        if args.cohort is not None:
            eval_overrides["cohort"] = args.cohort
        if args.workers is not None:
            eval_overrides["workers"] = args.workers
        cfg = replace(cfg, eval=replace(cfg.eval, **eval_overrides))
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command]
        if args.command in ("evaluate", "ablate"):
            outputs = fn(cfg, out, args.variant)
        else:
            if args.variant:
                raise ConfigError(f"--variant does not apply to {args.command}")
            outputs = fn(cfg, out)
        write_manifest(out, args.command, cfg, outputs)
    except (ConfigError, SchemaError) as exc:
        log.error("event=config_error command=%s error=%r", args.command, str(exc))
        return EXIT_CONFIG
    except (DataError, LeakageError, PreprocessError) as exc:
        log.error("event=data_error command=%s error=%r", args.command, str(exc))
        return EXIT_DATA
    except ValueError as exc:
        log.error("event=data_error command=%s error=%r", args.command, str(exc))
        return EXIT_DATA
    log.info("event=done command=%s out=%s", args.command, cfg.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
