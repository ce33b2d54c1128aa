"""Subject-wise cross-validation, rank correlation / MAE metrics and the ablation matrix."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .core import COHORTS, FEATURE_KEYS, FEATURE_NAMES, WalkRecord
from .model import Pose2GaitConfig, check_disjoint_subjects, predict_arrays, prepare, train
from .preprocess import JointSet, Normalization, PreprocessConfig

log = logging.getLogger(__name__)

GROUPS = ("overall",) + tuple(c.value for c in COHORTS)
METRICS = ("rho", "p", "mae", "n")


# ---------------------------------------------------------------------------
# metrics

def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    return x, y


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    r = float(a @ b / math.sqrt(float(a @ a) * float(b @ b)))
    return min(1.0, max(-1.0, r))


def spearman_rho(x, y) -> tuple[float, float]:
    """Spearman's rho (Pearson correlation of tie-averaged ranks) and its t-approximation p-value."""
    x, y = _pair(x, y)
    if len(x) < 3:
        raise ValueError(f"need at least 3 pairs, got {len(x)}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("inputs contain non-finite values")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("rank correlation undefined for constant input")
    rho = _pearson(stats.rankdata(x), stats.rankdata(y))
    n = len(x)
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, float(2.0 * stats.t.sf(abs(t), n - 2))


def permutation_p_value(x, y, max_n: int = 10) -> float:
    """Exact two-sided p-value of Spearman's rho by enumerating all permutations of y."""
    x, y = _pair(x, y)
    n = len(x)
    if n > max_n:
        raise ValueError(f"exact permutation test limited to n <= {max_n}, got {n}")
    rho, _ = spearman_rho(x, y)
    rx = stats.rankdata(x)
    rx = rx - rx.mean()
    ry = stats.rankdata(y)
    ry = ry - ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    hits = total = 0
    perms = itertools.permutations(range(n))
    while True:
        chunk = np.array(list(itertools.islice(perms, 50_000)), dtype=np.intp)
        if len(chunk) == 0:
            break
        r = (ry[chunk] @ rx) / denom
        hits += int(np.count_nonzero(np.abs(r) >= abs(rho) - 1e-12))
        total += len(chunk)
    return hits / total


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    if len(pred) == 0:
        raise ValueError("mae of empty input")
    return float(np.mean(np.abs(pred - truth)))


@dataclass(frozen=True)
class Metric:
    rho: float | None
    p: float | None
    mae: float
    n: int


def feature_metrics(pred: np.ndarray, truth: np.ndarray) -> Metric:
    err = mae(pred, truth)
    try:
        rho, p = spearman_rho(pred, truth)
    except ValueError:
        rho = p = None
    return Metric(rho, p, err, len(pred))


# ---------------------------------------------------------------------------
# folds

@dataclass(frozen=True)
class FoldAssignment:
    folds: dict[str, int]
    cohorts: dict[str, str]
    k: int

    def subjects(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.folds.items() if f == fold)

    def counts(self, cohort: str | None = None) -> list[int]:
        out = [0] * self.k
        for s, f in self.folds.items():
            if cohort is None or self.cohorts[s] == cohort:
                out[f] += 1
        return out


def assign_folds(subjects: Mapping[str, str], k: int = 10, seed: int = 0) -> FoldAssignment:
    """Spread each cohort's subjects evenly over k folds.

    Subjects are shuffled within their cohort and dealt round-robin over a
    seeded fold order; the dealing position carries over from one cohort to
    the next, so fold sizes overall also differ by at most one.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if len(subjects) < k:
        raise ValueError(f"{len(subjects)} subjects cannot fill {k} folds")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    order = rng.permutation(k)
    cohorts = {s: str(getattr(c, "value", c)) for s, c in subjects.items()}
    folds: dict[str, int] = {}
    pos = 0
    for cohort in sorted(set(cohorts.values())):
        members = sorted(s for s, c in cohorts.items() if c == cohort)
        for i in rng.permutation(len(members)):
            folds[members[i]] = int(order[pos % k])
            pos += 1
    return FoldAssignment(dict(sorted(folds.items())), dict(sorted(cohorts.items())), k)


def subject_cohorts(records: Iterable[WalkRecord]) -> dict[str, str]:
    out: dict[str, str] = {}
    for r in records:
        prev = out.setdefault(r.meta.subject_id, r.meta.cohort.value)
        if prev != r.meta.cohort.value:
            raise ValueError(f"subject {r.meta.subject_id} appears in cohorts {prev} and {r.meta.cohort.value}")
    return out


# ---------------------------------------------------------------------------
# cross-validation

@dataclass
class FoldResult:
    fold: int
    test_subjects: list[str]
    val_subjects: list[str]
    n_train: int
    n_val: int
    n_test: int
    best_epoch: int
    train_loss: list[float]
    val_loss: list[float]
    mae: dict[str, float]
    skipped: list[dict] = field(default_factory=list)


@dataclass
class EvalReport:
    variant: str
    label: str
    metrics: dict[tuple[str, str], Metric]
    folds: list[FoldResult]
    predictions: list[dict]
    fingerprint: str
    settings: dict

    def metric(self, feature: str, group: str = "overall") -> Metric:
        return self.metrics[(group, feature)]

    def rows(self) -> list[dict]:
        """Flat (variant, cohort, feature, metric, value) rows."""
        out = []
        for group in GROUPS:
            for feat in FEATURE_NAMES:
                m = self.metrics.get((group, feat))
                if m is None:
                    continue
                for name in METRICS:
                    out.append({"variant": self.variant, "cohort": group, "feature": feat,
                                "metric": name, "value": getattr(m, name)})
        return out

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "label": self.label,
            "fingerprint": self.fingerprint,
            "settings": self.settings,
            "metrics": self.rows(),
            "folds": [vars(f) for f in self.folds],
        }


VARIANT_LABELS = {
    "main": "P2G",
    "mirror": "P2G+Mirror",
    "lower_body": "P2G+Lower",
    "per_frame": "P2G+PerFrame",
    "ds1_only": "P2G-DS1",
    "ds2_only": "P2G-DS2",
}


def canonical_variant(name: str) -> str:
    key = name.strip().lstrip("+").lower().replace("-", "_")
    key = {"lower": "lower_body", "perframe": "per_frame", "p2g": "main"}.get(key, key)
    if key not in VARIANT_LABELS:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANT_LABELS)}")
    return key


def variant_settings(variant: str, pp: PreprocessConfig) -> tuple[PreprocessConfig, str | None]:
    """Preprocessing and training-cohort restriction for a named variant."""
    variant = canonical_variant(variant)
    if variant == "mirror":
        return replace(pp, mirror=True), None
    if variant == "lower_body":
        return replace(pp, joint_set=JointSet.LOWER_6), None
    if variant == "per_frame":
        return replace(pp, normalization=Normalization.PER_FRAME), None
    if variant in ("ds1_only", "ds2_only"):
        return pp, variant[:3].upper()
    return pp, None


def dataset_digest(records: Sequence[WalkRecord]) -> str:
    h = hashlib.sha256()
    for r in sorted(records, key=lambda r: r.key):
        h.update(repr((r.key, r.meta.subject_id, r.meta.cohort.value, r.sequence.fps)).encode())
        h.update(np.ascontiguousarray(r.sequence.frames, dtype=np.float64).tobytes())
        if r.truth is not None:
            h.update(r.truth.as_array().tobytes())
    return h.hexdigest()


def fingerprint(settings: Mapping, data_digest: str) -> str:
    blob = json.dumps({"settings": settings, "data": data_digest}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, 101, fold]).generate_state(1)[0])


def _run_fold(fold: int, k: int, by_fold: dict[int, list[WalkRecord]], config: Pose2GaitConfig,
              pp: PreprocessConfig, seed: int, test_trackers: tuple[str, ...]):
    val_fold = (fold + 1) % k
    test = [r for r in by_fold[fold] if r.meta.tracker.value in test_trackers]
    val = by_fold[val_fold]
    tr = [r for f, recs in sorted(by_fold.items()) if f not in (fold, val_fold) for r in recs]
    if not test:
        raise ValueError(f"fold {fold} has no test walks")
    check_disjoint_subjects(tr, val, test)
    report = train(tr, val, replace(config, seed=fold_seed(seed, fold)), pp)
    data = prepare(test, pp)
    if len(data) == 0:
        raise ValueError(f"fold {fold}: every test walk failed preprocessing")
    pred = predict_arrays(report.best_state, data)
    rows = []
    for i, (walk_id, tracker) in enumerate(data.keys):
        row = {"walk_id": walk_id, "tracker": tracker, "subject_id": data.subjects[i],
               "cohort": data.cohorts[i], "fold": fold}
        for j, feat in enumerate(FEATURE_NAMES):
            row[f"pred_{feat}"] = float(pred[i, j])
            row[f"true_{feat}"] = float(data.y[i, j])
        rows.append(row)
    skipped = [{"walk_id": key[0], "tracker": key[1], "skipped": reason}
               for key, reason in report.skipped + data.skipped]
    result = FoldResult(
        fold=fold,
        test_subjects=sorted({r.meta.subject_id for r in test}),
        val_subjects=sorted({r.meta.subject_id for r in val}),
        n_train=report.n_train, n_val=report.n_val, n_test=len(data),
        best_epoch=report.best_epoch,
        train_loss=[float(v) for v in report.train_loss],
        val_loss=[float(v) for v in report.val_loss],
        mae={feat: mae(pred[:, j], data.y[:, j]) for j, feat in enumerate(FEATURE_NAMES)},
        skipped=skipped,
    )
    return result, rows


def run_cross_validation(
    records: Sequence[WalkRecord],
    k: int = 10,
    config: Pose2GaitConfig = Pose2GaitConfig(),
    pp: PreprocessConfig = PreprocessConfig(),
    seed: int = 0,
    *,
    variant: str = "main",
    assignment: FoldAssignment | None = None,
    test_trackers: Sequence[str] = ("TrackerA",),
    workers: int = 1,
    on_fold: Callable[[FoldResult], None] | None = None,
) -> EvalReport:
    """k-fold CV: fold i is the test set, fold (i+1) mod k validation, the rest training.

    Metrics are computed on the pooled test predictions of all folds.
    ``variant`` adjusts preprocessing or restricts training and testing to
    one cohort; the fold assignment is shared when passed in.
    """
    if k < 3:
        raise ValueError(f"k must be >= 3 so that test, validation and training folds differ, got {k}")
    variant = canonical_variant(variant)
    pp, only = variant_settings(variant, pp)
    if assignment is None:
        assignment = assign_folds(subject_cohorts(records), k, seed)
    elif assignment.k != k:
        raise ValueError(f"assignment has k={assignment.k}, asked for k={k}")
    if only is not None:
        records = [r for r in records if r.meta.cohort.value == only]
    unknown = {r.meta.subject_id for r in records} - set(assignment.folds)
    if unknown:
        raise ValueError(f"subjects without a fold: {sorted(unknown)[:5]}")
    test_trackers = tuple(str(getattr(t, "value", t)) for t in test_trackers)

    by_fold: dict[int, list[WalkRecord]] = {i: [] for i in range(k)}
    for r in sorted(records, key=lambda r: r.key):
        by_fold[assignment.folds[r.meta.subject_id]].append(r)
    for i in range(k):
        if not any(r.meta.tracker.value in test_trackers for r in by_fold[i]):
            raise ValueError(f"fold {i} has no test walks")

    settings = {
        "variant": variant, "k": k, "seed": seed, "model": config.to_dict(),
        "preprocess": pp.to_dict(), "test_trackers": list(test_trackers),
        "folds": assignment.folds,
    }
    fp = fingerprint(settings, dataset_digest(records))
    log.info("event=cv_start variant=%s k=%d records=%d fingerprint=%s", variant, k, len(records), fp)

    args = [(i, k, by_fold, config, pp, seed, test_trackers) for i in range(k)]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_fold, *a) for a in args]
            for fut in futures:
                results.append(fut.result())
                if on_fold is not None:
                    on_fold(results[-1][0])
    else:
        for a in args:
            results.append(_run_fold(*a))
            if on_fold is not None:
                on_fold(results[-1][0])
    for res, _ in results:
        log.info("event=fold_done variant=%s fold=%d n_train=%d n_test=%d best_epoch=%d",
                 variant, res.fold, res.n_train, res.n_test, res.best_epoch)

    folds = [res for res, _ in results]
    predictions = sorted((row for _, rows in results for row in rows), key=lambda r: (r["walk_id"], r["tracker"]))
    return EvalReport(
        variant=variant, label=VARIANT_LABELS[variant],
        metrics=pooled_metrics(predictions), folds=folds,
        predictions=predictions, fingerprint=fp, settings=settings,
    )


def pooled_metrics(predictions: Sequence[Mapping]) -> dict[tuple[str, str], Metric]:
    out = {}
    for group in GROUPS:
        rows = [r for r in predictions if group == "overall" or r["cohort"] == group]
        if not rows:
            continue
        for feat in FEATURE_NAMES:
            pred = np.array([r[f"pred_{feat}"] for r in rows])
            truth = np.array([r[f"true_{feat}"] for r in rows])
            out[(group, feat)] = feature_metrics(pred, truth)
    return out


def run_ablation(
    records: Sequence[WalkRecord],
    variants: Sequence[str] = ("main", "mirror", "lower_body", "per_frame"),
    k: int = 10,
    config: Pose2GaitConfig = Pose2GaitConfig(),
    pp: PreprocessConfig = PreprocessConfig(),
    seed: int = 0,
    **kwargs,
) -> dict[str, EvalReport]:
    """One cross-validation per variant, all sharing a single fold assignment."""
    if not variants:
        raise ValueError("no variants requested")
    names = [canonical_variant(v) for v in variants]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate variants in {list(variants)}")
    assignment = assign_folds(subject_cohorts(records), k, seed)
    return {
        name: run_cross_validation(records, k, config, pp, seed, variant=name, assignment=assignment, **kwargs)
        for name in names
    }


# ---------------------------------------------------------------------------
# report output

_UNITS = {"step_time": ("ms", 1000.0), "step_width": ("cm", 1.0), "step_length": ("cm", 1.0), "velocity": ("cm/s", 1.0)}
_TITLES = {"step_time": "Step Time", "step_width": "Step Width", "step_length": "Step Length", "velocity": "Velocity"}


def _rho_cell(m: Metric | None) -> str:
    if m is None or m.rho is None:
        return "---"
    return f"{m.rho:.2f}" + ("" if m.p is not None and m.p < 0.01 else "*")


def _mae_cell(m: Metric | None, feat: str) -> str:
    if m is None:
        return "---"
    unit, scale = _UNITS[feat]
    return f"{m.mae * scale:.1f}{unit}"


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    line = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths))
    return "\n".join([line(header), "-+-".join("-" * w for w in widths)] + [line(r) for r in rows])


def format_report(reports: Mapping[str, EvalReport] | Sequence[EvalReport]) -> str:
    """Text tables: pooled rho and MAE, per-cohort rho, and the variant comparison."""
    reports = list(reports.values()) if isinstance(reports, Mapping) else list(reports)
    titles = [_TITLES[f] for f in FEATURE_NAMES]
    parts = []
    rows = []
    for rep in reports:
        rows.append(["rho", rep.label] + [_rho_cell(rep.metrics.get(("overall", f))) for f in FEATURE_NAMES])
    for rep in reports:
        rows.append(["MAE", rep.label] + [_mae_cell(rep.metrics.get(("overall", f)), f) for f in FEATURE_NAMES])
    parts.append("Pooled over all folds and cohorts\n" + _table(["Metric", "Model"] + titles, rows))
    for cohort in GROUPS[1:]:
        rows = [[rep.label] + [_rho_cell(rep.metrics.get((cohort, f))) for f in FEATURE_NAMES]
                for rep in reports if any(g == cohort for g, _ in rep.metrics)]
        if rows:
            parts.append(f"Spearman rho, {cohort} only\n" + _table(["Model"] + titles, rows))
    if len(reports) > 1:
        rows = [[rep.label] + [_rho_cell(rep.metrics.get(("overall", f))) for f in FEATURE_NAMES] for rep in reports]
        parts.append("Spearman rho per variant\n" + _table(["Model"] + titles, rows))
    parts.append("* p >= 0.01")
    return "\n\n".join(parts) + "\n"


def metrics_csv(reports: Mapping[str, EvalReport] | Sequence[EvalReport]) -> str:
    reports = list(reports.values()) if isinstance(reports, Mapping) else list(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "cohort", "feature", "metric", "value", "unit"])
    for rep in reports:
        for row in rep.rows():
            unit = "" if row["metric"] in ("rho", "p", "n") else FEATURE_KEYS[row["feature"]].rsplit("_", 1)[1]
            value = "" if row["value"] is None else repr(row["value"])
            w.writerow([row["variant"], row["cohort"], row["feature"], row["metric"], value, unit])
    return buf.getvalue()


def predictions_csv(reports: Mapping[str, EvalReport] | Sequence[EvalReport]) -> str:
    reports = list(reports.values()) if isinstance(reports, Mapping) else list(reports)
    cols = ["variant", "fold", "walk_id", "tracker", "subject_id", "cohort"]
    cols += [f"{kind}_{f}" for f in FEATURE_NAMES for kind in ("true", "pred")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rep in reports:
        for row in rep.predictions:
            row = dict(row, variant=rep.variant)
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return buf.getvalue()


def write_reports(reports: Mapping[str, EvalReport] | Sequence[EvalReport], out_dir: str | Path) -> list[Path]:
    """Write report.txt, metrics.csv, predictions.csv and report.json into ``out_dir``."""
    reports = list(reports.values()) if isinstance(reports, Mapping) else list(reports)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.txt": format_report(reports),
        "metrics.csv": metrics_csv(reports),
        "predictions.csv": predictions_csv(reports),
        "report.json": json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True) + "\n",
    }
    paths = []
    for name, text in files.items():
        (out / name).write_text(text)
        paths.append(out / name)
    return paths
