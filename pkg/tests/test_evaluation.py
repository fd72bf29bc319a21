import json

import pytest

from app.core.exceptions import ConfigSchemaException, EvaluationException
from app.models.evaluation import AblationSpec, ConfusionMatrix, ExperimentKind
from app.models.training import TrainConfig
from app.services.evaluation_service import EvaluationService
from tests.conftest import toy_manifest, toy_windows


@pytest.fixture
def service():
    return EvaluationService()


@pytest.fixture
def quick_train():
    return TrainConfig(lr_init=1e-3, epochs=2, batch_size=16)


@pytest.fixture
def short_windows():
    return toy_windows(48, length=12)


def test_accuracy_and_confusion_agree(service):
    preds, labels = [1, 0, 1, 1], [1, 0, 0, 1]
    matrix = service.confusion(preds, labels)

    assert service.accuracy(preds, labels) == 0.75
    assert (matrix.tp, matrix.tn, matrix.fp, matrix.fn) == (2, 1, 1, 0)
    assert matrix.accuracy == 0.75
    assert matrix.as_grid() == [[1, 1], [0, 2]]


@pytest.mark.parametrize("method", ["accuracy", "confusion"])
def test_empty_input_is_rejected(service, method):
    with pytest.raises(EvaluationException):
        getattr(service, method)([], [])


def test_length_mismatch_is_rejected(service):
    with pytest.raises(EvaluationException):
        service.accuracy([1, 0], [1])


def test_non_binary_labels_are_rejected(service):
    with pytest.raises(EvaluationException):
        service.confusion([1, 2], [1, 0])


def test_confusion_matrices_add_cellwise():
    total = ConfusionMatrix(tp=1, tn=2) + ConfusionMatrix(fp=3, fn=4, tp=1)
    assert (total.tp, total.tn, total.fp, total.fn) == (2, 2, 3, 4)
    with pytest.raises(ValueError):
        ConfusionMatrix().accuracy


def test_spec_fills_default_levels():
    assert AblationSpec(experiment="datasize").levels[0] == 0.1
    assert AblationSpec(experiment="channels").levels == [1, 2, 3]


def test_spec_rejects_duplicate_seeds(service):
    with pytest.raises(ConfigSchemaException):
        service.parse_spec({"experiment": "channels", "seeds": [0, 0]})


def test_channel_ablation_produces_row_per_level_seed_and_map(service, tiny_config, quick_train, short_windows):
    spec = AblationSpec(experiment=ExperimentKind.CHANNELS, seeds=[0, 1])
    report = service.run_ablation(spec, toy_manifest(short_windows), short_windows, tiny_config, quick_train)

    table = report.tables[0]
    assert len(table.rows) == 3 * 2 * 3
    assert [s.level for s in table.summaries] == ["1", "2", "3"]
    assert set(table.summary(3).per_seed) == {"0", "1"}
    assert set(report.per_map_accuracy) == {"urban", "rural", "mixed"}
    assert report.metadata["feature_length"] == 21 + 3 * 12
    assert set(report.config_digests) == {"spec", "1", "2", "3"}


def test_frame_ablation_reports_each_frame_count(service, tiny_config, quick_train, short_windows):
    assert tiny_config.total_frames == 5
    spec = AblationSpec(experiment=ExperimentKind.FRAMES, levels=[1, 3, 5], seeds=[0])
    report = service.run_ablation(spec, toy_manifest(short_windows), short_windows, tiny_config, quick_train)

    table = report.tables[0]
    assert [s.level for s in table.summaries] == ["1", "3", "5"]
    for level in ("1", "3", "5"):
        rows = [r for r in table.rows if r.level == level]
        assert {r.map_id for r in rows} == {"urban", "rural", "mixed"}
        assert all(0.0 <= r.accuracy <= 1.0 for r in rows)
    assert len({report.config_digests[level] for level in ("1", "3", "5")}) == 3


def test_level_summary_averages_maps_then_seeds(service, tiny_config, quick_train, short_windows):
    spec = AblationSpec(experiment=ExperimentKind.ATTENTION, seeds=[0, 1])
    table = service.run_ablation(spec, toy_manifest(short_windows), short_windows, tiny_config, quick_train).tables[0]

    summary = table.summary("on")
    rows = [r for r in table.rows if r.level == "on"]
    for seed in (0, 1):
        accuracies = [r.accuracy for r in rows if r.seed == seed]
        assert summary.per_seed[str(seed)] == pytest.approx(sum(accuracies) / len(accuracies))
    assert summary.spread == pytest.approx(summary.max_accuracy - summary.min_accuracy)


def test_primary_confusion_sums_over_seeds(service, tiny_config, quick_train, short_windows):
    spec = AblationSpec(experiment=ExperimentKind.OVERALL, seeds=[0, 1])
    report = service.run_ablation(spec, toy_manifest(short_windows), short_windows, tiny_config, quick_train)

    rows = report.tables[0].rows
    for map_id, matrix in report.confusion.items():
        assert matrix.total == sum(r.n_test for r in rows if r.map_id == map_id)


def test_baseline_levels_run_side_by_side(service, tiny_config, quick_train, short_windows):
    spec = AblationSpec(experiment=ExperimentKind.BASELINES, levels=["rf", "safe-d"], seeds=[0])
    report = service.run_ablation(spec, toy_manifest(short_windows), short_windows, tiny_config, quick_train)

    assert [s.level for s in report.tables[0].summaries] == ["rf", "safe-d"]
    assert report.tables[0].summary("rf").mean_accuracy == 1.0


def test_datasize_levels_shrink_training_traces(service, short_windows):
    manifest = toy_manifest(short_windows)
    train_ids, _ = service.train_service.split_dataset(manifest, 0.85, seed=0)

    half = service._subsample(manifest, train_ids, 0.5, seed=0)
    tenth = service._subsample(manifest, train_ids, 0.1, seed=0)
    assert len(tenth) < len(half) < len(train_ids)
    assert set(half) <= set(train_ids)
    assert len(tenth) == 6


def test_map_filter_restricts_rows(service, tiny_config, quick_train, short_windows):
    spec = AblationSpec(experiment=ExperimentKind.OVERALL, seeds=[0], maps=["rural"])
    report = service.run_ablation(spec, toy_manifest(short_windows), short_windows, tiny_config, quick_train)
    assert list(report.per_map_accuracy) == ["rural"]


def test_unknown_map_filter_is_rejected(service, tiny_config, quick_train, short_windows):
    spec = AblationSpec(experiment=ExperimentKind.OVERALL, seeds=[0], maps=["desert"])
    with pytest.raises(EvaluationException):
        service.run_ablation(spec, toy_manifest(short_windows), short_windows, tiny_config, quick_train)


@pytest.mark.parametrize("experiment, level", [("channels", 4), ("frames", 99), ("attention", "maybe"), ("baselines", "knn")])
def test_invalid_levels_are_rejected(service, tiny_config, quick_train, short_windows, experiment, level):
    spec = AblationSpec(experiment=experiment, levels=[level], seeds=[0])
    with pytest.raises(EvaluationException):
        service.run_ablation(spec, toy_manifest(short_windows), short_windows, tiny_config, quick_train)


def test_ablation_report_is_reproducible(service, tiny_config, quick_train, short_windows):
    spec = AblationSpec(experiment=ExperimentKind.FEATURES, seeds=[0])
    manifest = toy_manifest(short_windows)
    first = service.run_ablation(spec, manifest, short_windows, tiny_config, quick_train)
    second = service.run_ablation(spec, manifest, short_windows, tiny_config, quick_train)
    assert json.dumps(first.model_dump(mode="json"), sort_keys=True) == json.dumps(second.model_dump(mode="json"), sort_keys=True)


def test_overall_report_from_predictions(service, short_windows):
    labels = [w.label for w in short_windows]
    report = service.evaluate_overall(labels, short_windows, seed=0)

    assert report.average_accuracy == 1.0
    assert report.map_spread == 0.0
    assert sum(m.total for m in report.confusion.values()) == len(short_windows)
