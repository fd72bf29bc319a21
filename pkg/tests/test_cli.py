import json

import pytest

from app.main import main

MODEL_CONFIG = {
    "feature_width": 8,
    "global_seq_len": 10,
    "resnet_blocks": 1,
    "n_heads": 1,
    "d_k": 4,
    "d_v": 4,
    "tcn_dilations": [1],
    "tcn_width": 8,
    "head_hidden": 4,
}
TRAIN_CONFIG = {"lr_init": 0.001, "epochs": 2, "batch_size": 16, "split_ratio": 0.5}


def write_json(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = write_json(root / "dataset.json", {
        "counts": {m: {"healthy": 2, "abnormal": 2} for m in ("urban", "rural", "mixed")},
        "route_duration_s": 10.0,
    })
    assert main(["generate", "--config", config, "--out", str(root / "data"), "--seed", "3"]) == 0
    return root


def test_generate_creates_missing_output_directory(dataset_dir):
    manifest = json.loads((dataset_dir / "data" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["trace_counts"] == {"healthy": 6, "abnormal": 6}
    assert manifest["seed"] == 3


def test_out_of_band_tremor_is_schema_error(tmp_path, capsys):
    config = write_json(tmp_path / "bad.json", {"symptoms": {"tremor": {"freq_min_hz": 7.0, "freq_max_hz": 7.0}}})
    code, out = run(capsys, "generate", "--config", config, "--out", str(tmp_path / "data"), "--json")

    payload = json.loads(out)
    assert code == 2
    assert payload["exit_code"] == 2
    assert "symptoms.tremor.freq_min_hz" in payload["message"]
    assert "symptoms.tremor.freq_max_hz" in payload["message"]


def test_missing_config_file_is_schema_error(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 2


def test_full_pipeline(dataset_dir, capsys):
    data = dataset_dir / "data"
    model_config = write_json(dataset_dir / "model.json", MODEL_CONFIG)
    train_config = write_json(dataset_dir / "train.json", TRAIN_CONFIG)

    code, out = run(capsys, "preprocess", "--manifest", str(data / "manifest.json"), "--json")
    assert code == 0
    assert json.loads(out)["count"] == 12 * 3
    windows = str(data / "windows.npz")

    train_out = dataset_dir / "train"
    code, out = run(
        capsys, "train", "--manifest", str(data / "manifest.json"), "--windows", windows,
        "--config", train_config, "--model-config", model_config, "--out", str(train_out), "--json",
    )
    assert code == 0
    for name in ("split.json", "history.json", "metrics.json", "checkpoint.safed"):
        assert (train_out / name).exists()
    history = json.loads((train_out / "history.json").read_text(encoding="utf-8"))
    assert len(history["learning_rate"]) == 2
    recorded = json.loads((data / "manifest.json").read_text(encoding="utf-8"))
    split = json.loads((train_out / "split.json").read_text(encoding="utf-8"))
    assert recorded["split_ratio"] == 0.5
    assert sorted(tid for tid, side in recorded["split"].items() if side == "test") == sorted(split["test"])

    code, out = run(
        capsys, "eval", "--checkpoint", str(train_out / "checkpoint.safed"), "--manifest", str(data / "manifest.json"),
        "--windows", windows, "--out", str(dataset_dir / "eval"), "--json",
    )
    assert code == 0
    assert set(json.loads(out)["per_map_accuracy"]) == {"urban", "rural", "mixed"}

    ablation = write_json(dataset_dir / "ablation.json", {"experiment": "overall", "seeds": [0]})
    ablate_out = dataset_dir / "ablate"
    code, out = run(
        capsys, "ablate", "--config", ablation, "--manifest", str(data / "manifest.json"), "--windows", windows,
        "--model-config", model_config, "--train-config", train_config, "--out", str(ablate_out), "--json",
    )
    assert code == 0
    assert list(json.loads(out)["levels"]) == ["safe-d"]
    assert len(list(ablate_out.glob("confusion_*.png"))) == 3

    rerender = dataset_dir / "rerender"
    code, _ = run(capsys, "report", "--report", str(ablate_out / "report.json"), "--out", str(rerender))
    assert code == 0
    assert (rerender / "report.json").read_bytes() == (ablate_out / "report.json").read_bytes()


def test_preprocess_rejects_corrupted_trace(dataset_dir, tmp_path, capsys):
    manifest = json.loads((dataset_dir / "data" / "manifest.json").read_text(encoding="utf-8"))
    for entry in manifest["entries"]:
        source = dataset_dir / "data" / entry["path"]
        target = tmp_path / entry["path"]
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(source.read_bytes())
        sidecar = source.with_suffix(".meta.json")
        target.with_suffix(".meta.json").write_bytes(sidecar.read_bytes())
    (tmp_path / "manifest.json").write_text(json.dumps(manifest), encoding="utf-8")

    broken = tmp_path / manifest["entries"][0]["path"]
    broken.write_text("not json\n", encoding="utf-8")

    code, out = run(capsys, "preprocess", "--manifest", str(tmp_path / "manifest.json"), "--json")
    assert code == 3
    assert json.loads(out)["error"] == "TraceValidationException"


def test_acceptance_command_forwards_seed_and_summarizes(tmp_path, capsys, monkeypatch):
    from app.models.evaluation import AcceptanceReport, CriterionResult
    from app.services.acceptance_service import AcceptanceService

    calls = {}

    def fake_run(self, out_dir, seeds=None, jobs=1, check_determinism=False, **kwargs):
        calls.update(out_dir=out_dir, seeds=seeds, determinism=check_determinism)
        return AcceptanceReport(
            seeds=seeds,
            criteria=[
                CriterionResult(criterion=1, name="overall", passed=True, threshold=">= 0.9"),
                CriterionResult(criterion=2, name="channels", passed=False, threshold="strictly increasing"),
            ],
        )

    monkeypatch.setattr(AcceptanceService, "run", fake_run)
    code, out = run(capsys, "acceptance", "--out", str(tmp_path / "acc"), "--seed", "5", "--determinism", "--json")

    payload = json.loads(out)
    assert code == 0
    assert calls["seeds"] == [5]
    assert calls["determinism"] is True
    assert payload["passed"] is False
    assert payload["criteria"] == {"1": True, "2": False}
