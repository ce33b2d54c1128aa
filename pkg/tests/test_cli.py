import json

import pytest

from pose2gait import cli
from pose2gait.core import read_features, read_walks, write_walks

SMALL = {
    "seed": 4,
    "generate": {"n_subjects": {"DS1": 3, "DS2": 1}, "walks_per_subject": 2},
    "model": {"epochs": 2, "lr": 1e-3},
    "eval": {"k": 3},
}


def write_config(path, **changes):
    cfg = json.loads(json.dumps(SMALL))
    for key, value in changes.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("gen")
    out = root / "data"
    assert cli.main(["generate", "--config", write_config(root / "c.json"), "--out", str(out)]) == 0
    return out


def test_generate_outputs_and_manifest(generated):
    records = read_walks(generated / "walks.jsonl.gz")
    assert len(records) == 4 * 2 * 3
    truth = read_features(generated / "truth.jsonl")
    assert len(truth) == len(records)
    manifest = json.loads((generated / "manifest.json").read_text())
    assert manifest["command"] == "generate" and manifest["seed"] == 4
    assert set(manifest["outputs"]) == {"walks.jsonl.gz", "truth.jsonl"}
    assert set(manifest["versions"]) == {"pose2gait", "python", "numpy", "scipy"}
    assert manifest["config"]["generate"]["n_subjects"] == {"DS1": 3, "DS2": 1}


def test_generate_byte_identical(tmp_path, generated):
    cfg = write_config(tmp_path / "c.json")
    assert cli.main(["generate", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    for name in ("walks.jsonl.gz", "truth.jsonl"):
        assert (tmp_path / "again" / name).read_bytes() == (generated / name).read_bytes()
    assert cli.main(["generate", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "other")]) == 0
    assert (tmp_path / "other" / "truth.jsonl").read_bytes() != (generated / "truth.jsonl").read_bytes()


def test_evaluate_writes_reports(tmp_path, generated):
    cfg = write_config(tmp_path / "c.json", data={"walks": str(generated / "walks.jsonl.gz")})
    out = tmp_path / "ev"
    assert cli.main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    for name in ("report.txt", "metrics.csv", "predictions.csv", "report.json", "manifest.json"):
        assert (out / name).exists()
    assert "P2G" in (out / "report.txt").read_text()
    assert cli.main(["evaluate", "--config", cfg, "--out", str(tmp_path / "ev2")]) == 0
    for name in ("report.txt", "metrics.csv", "predictions.csv", "report.json"):
        assert (out / name).read_bytes() == (tmp_path / "ev2" / name).read_bytes()
    manifests = [json.loads((d / "manifest.json").read_text()) for d in (out, tmp_path / "ev2")]
    for m in manifests:
        assert m["config"].pop("out").endswith(("ev", "ev2"))
    assert manifests[0] == manifests[1]


def test_train_then_predict(tmp_path, generated):
    records = read_walks(generated / "walks.jsonl.gz")
    write_walks([r for r in records if r.meta.subject_id != "DS1-S000"], tmp_path / "train.jsonl.gz")
    write_walks([r for r in records if r.meta.subject_id == "DS1-S000"], tmp_path / "val.jsonl.gz")
    cfg = write_config(tmp_path / "c.json", data={
        "train_walks": str(tmp_path / "train.jsonl.gz"), "val_walks": str(tmp_path / "val.jsonl.gz"),
        "walks": str(tmp_path / "val.jsonl.gz"), "checkpoint": str(tmp_path / "tr" / "checkpoint.p2g"),
    })
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "tr")]) == 0
    summary = json.loads((tmp_path / "tr" / "train_report.json").read_text())
    assert len(summary["train_loss"]) == 2
    assert cli.main(["predict", "--config", cfg, "--out", str(tmp_path / "pr")]) == 0
    entries = read_features(tmp_path / "pr" / "features.jsonl")
    assert len(entries) == 6


def test_leakage_exits_with_data_error(tmp_path, generated):
    path = str(generated / "walks.jsonl.gz")
    cfg = write_config(tmp_path / "c.json", data={"train_walks": path, "val_walks": path})
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_DATA
    assert not (tmp_path / "o" / "checkpoint.p2g").exists()


def test_config_errors_exit_2(tmp_path):
    cfg = write_config(tmp_path / "a.json", model={"epochz": 3})
    assert cli.main(["evaluate", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    cfg = write_config(tmp_path / "b.json", eval={"variants": ["+upper"]})
    assert cli.main(["ablate", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    (tmp_path / "c.yaml").write_text("seed: [1,\n")
    assert cli.main(["generate", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--config", write_config(tmp_path / "d.json"), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_missing_data_file_exits_3(tmp_path):
    cfg = write_config(tmp_path / "c.json", data={"walks": str(tmp_path / "missing.jsonl")})
    assert cli.main(["baseline", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_DATA


def test_yaml_config_and_fingerprint_ignores_out(tmp_path):
    (tmp_path / "c.yaml").write_text("seed: 3\nout: somewhere\nmodel:\n  epochs: 5\n")
    cfg = cli.load_config(tmp_path / "c.yaml")
    assert cfg.seed == 3 and cfg.model.epochs == 5
    other = cli.parse_config({"seed": 3, "out": "elsewhere", "model": {"epochs": 5}})
    assert cli.config_fingerprint(cfg) == cli.config_fingerprint(other)
    assert cli.config_fingerprint(cfg) != cli.config_fingerprint(cli.parse_config({"seed": 4, "model": {"epochs": 5}}))
