import json

import pytest

from app.core.exceptions import TraceParseException, TraceValidationException
from app.models.telemetry import ChannelId, DatasetManifest, ManifestEntry, TraceLabel
from app.services.telemetry_service import TelemetryService, sidecar_path
from app.services.train_service import TrainService
from tests.conftest import make_trace


@pytest.fixture
def service():
    return TelemetryService()


def test_save_trace_writes_one_record_per_sample(service, tmp_path):
    trace = make_trace(duration_s=0.01, rates=(100.0, 100.0, 100.0), values=(10.0, 20.0, 0.0))
    path = service.save_trace(trace, tmp_path / "t.jsonl")

    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 6
    assert sidecar_path(path).exists()
    assert {json.loads(line)["channel"] for line in lines} == {"steering", "throttle", "brake"}


def test_save_then_load_is_identical(service, tmp_path):
    trace = make_trace(values=(45.0, 30.0, 5.0), label=TraceLabel.ABNORMAL)
    path = service.save_trace(trace, tmp_path / "t.jsonl")
    assert service.load_trace(path) == trace


def test_trace_missing_brake_channel_is_rejected():
    trace = make_trace()
    with pytest.raises(ValueError):
        trace.replace(series=trace.series[:2])


def test_load_rejects_file_without_brake_records(service, tmp_path):
    trace = make_trace(duration_s=1.0)
    path = service.save_trace(trace, tmp_path / "t.jsonl")
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if json.loads(line)["channel"] != "brake"]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    with pytest.raises(TraceValidationException) as info:
        service.load_trace(path)
    assert "brake" in info.value.message
    assert info.value.exit_code == 3


def test_load_rejects_repeated_timestamps(service, tmp_path):
    trace = make_trace(duration_s=1.0)
    path = service.save_trace(trace, tmp_path / "t.jsonl")
    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    steering = [r for r in records if r["channel"] == "steering"]
    steering[1]["t"] = steering[0]["t"]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")

    with pytest.raises(TraceValidationException) as info:
        service.load_trace(path)
    assert "순증가" in info.value.message


def test_load_empty_file_is_parse_error(service, tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(TraceParseException) as info:
        service.load_trace(path)
    assert info.value.line == 1
    assert info.value.exit_code == 3


def test_load_reports_line_of_malformed_record(service, tmp_path):
    trace = make_trace(duration_s=1.0)
    path = service.save_trace(trace, tmp_path / "t.jsonl")
    lines = path.read_text(encoding="utf-8").splitlines()
    lines[4] = "{not json"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    with pytest.raises(TraceParseException) as info:
        service.load_trace(path)
    assert info.value.line == 5


def _write_dataset(service, root, healthy=10, abnormal=10):
    entries = []
    for label, count in ((TraceLabel.HEALTHY, healthy), (TraceLabel.ABNORMAL, abnormal)):
        for index in range(count):
            trace_id = f"{label.value}-{index}"
            trace = make_trace(duration_s=10.0, label=label, trace_id=trace_id)
            relative = f"traces/{trace_id}.jsonl"
            service.save_trace(trace, root / relative)
            entries.append(ManifestEntry(
                trace_id=trace_id, path=relative, label=label, map_id="urban", duration_s=10.0, n_windows=3,
            ))
    return DatasetManifest(
        entries=entries,
        trace_counts={"healthy": healthy, "abnormal": abnormal},
        window_counts={"healthy": 3 * healthy, "abnormal": 3 * abnormal},
        seed=0,
    )


def test_validate_dataset_counts_valid_traces(service, tmp_path):
    manifest = _write_dataset(service, tmp_path)
    report = service.validate_dataset(manifest, tmp_path)

    assert report.ok
    assert report.trace_counts == {"healthy": 10, "abnormal": 10}
    assert report.rate_stats["steering"]["mean"] == pytest.approx(60.0)


def test_validate_dataset_flags_nan_trace(service, tmp_path):
    manifest = _write_dataset(service, tmp_path)
    path = tmp_path / manifest.entries[0].path
    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    records[3]["value"] = float("nan")
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")

    report = service.validate_dataset(manifest, tmp_path)
    assert not report.ok
    assert len(report.violations) == 1


def test_validate_dataset_flags_claimed_count_mismatch(service, tmp_path):
    manifest = _write_dataset(service, tmp_path)
    manifest = manifest.model_copy(update={"trace_counts": {"healthy": 11, "abnormal": 10}})

    report = service.validate_dataset(manifest, tmp_path)
    assert not report.ok
    assert any("트레이스 수 불일치" in v for v in report.violations)


def test_validate_dataset_accepts_recorded_split(service, tmp_path):
    manifest = _write_dataset(service, tmp_path)
    trainer = TrainService()
    train, test = trainer.split_dataset(manifest, 0.85, seed=0)
    manifest = trainer.record_split(manifest, train, test, 0.85)

    report = service.validate_dataset(manifest, tmp_path)
    assert report.ok
    assert set(manifest.split.values()) == {"train", "test"}


def test_validate_dataset_flags_split_off_ratio(service, tmp_path):
    manifest = _write_dataset(service, tmp_path)
    ids = [entry.trace_id for entry in manifest.entries]
    manifest = TrainService.record_split(manifest, ids[:-1], ids[-1:], 0.5)

    report = service.validate_dataset(manifest, tmp_path)
    assert not report.ok
    assert any("분할 비율 불일치" in v for v in report.violations)


def test_validate_dataset_flags_unassigned_trace(service, tmp_path):
    manifest = _write_dataset(service, tmp_path)
    ids = [entry.trace_id for entry in manifest.entries]
    manifest = TrainService.record_split(manifest, ids[:10], ids[10:-1], 0.5)

    report = service.validate_dataset(manifest, tmp_path)
    assert not report.ok
    assert any("분할에 없는 트레이스" in v for v in report.violations)


def test_channel_keys_round_trip():
    assert ChannelId.from_key("Brake") is ChannelId.BRAKE
    with pytest.raises(ValueError):
        ChannelId.from_key("clutch")
