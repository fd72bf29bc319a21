import json

import pytest

from app.models.evaluation import AblationRow, AblationTable, ConfusionMatrix, ExperimentKind
from app.models.network import ModelConfig
from app.models.training import TrainConfig
from app.services.acceptance_service import AcceptanceService, acceptance_dataset_config
from app.services.evaluation_service import EvaluationService

PASSING = {
    ExperimentKind.OVERALL: {"safe-d": [0.95, 0.94, 0.96]},
    ExperimentKind.CHANNELS: {1: [0.80, 0.82, 0.81], 2: [0.86, 0.87, 0.85], 3: [0.95, 0.94, 0.96]},
    ExperimentKind.ATTENTION: {"off": [0.92, 0.92, 0.92], "on": [0.95, 0.94, 0.96]},
    ExperimentKind.FEATURES: {"local": [0.90, 0.90, 0.90], "global": [0.88, 0.88, 0.88], "both": [0.95, 0.94, 0.96]},
    ExperimentKind.DATASIZE: {0.1: [0.80, 0.80, 0.80], 0.5: [0.93, 0.93, 0.93], 1.0: [0.95, 0.94, 0.96]},
    ExperimentKind.BASELINES: {
        "svm": [0.90, 0.90, 0.90], "rf": [0.91, 0.91, 0.91], "adaboost": [0.89, 0.89, 0.89],
        "ct": [0.95, 0.95, 0.95], "safe-d": [0.95, 0.94, 0.96],
    },
}


def make_reports(levels_by_kind):
    evaluation = EvaluationService()
    reports = {}
    for kind, levels in levels_by_kind.items():
        rows = []
        for level, accuracies in levels.items():
            for seed, accuracy in enumerate(accuracies):
                rows.append(AblationRow(
                    level=str(level) if not isinstance(level, float) else f"{level:g}",
                    seed=seed,
                    map_id="urban",
                    accuracy=accuracy,
                    n_test=100,
                    confusion=ConfusionMatrix(tp=int(accuracy * 100), fn=100 - int(accuracy * 100)),
                ))
        keys = list(dict.fromkeys(row.level for row in rows))
        table = AblationTable(
            experiment=kind,
            rows=rows,
            summaries=[evaluation._summarize(key, [r for r in rows if r.level == key]) for key in keys],
        )
        reports[kind] = evaluation.build_report(kind, table, keys[-1], [0, 1, 2], {})
    return reports


def test_acceptance_dataset_spreads_symptoms_over_pedals():
    config = acceptance_dataset_config(7)
    assert config.seed == 7
    assert config.symptoms.channels_per_trace == 1
    assert config.symptoms.tremor.channels == ["steering", "throttle", "brake"]


def test_all_criteria_pass_on_expected_results():
    criteria = AcceptanceService.evaluate_criteria(make_reports(PASSING))
    assert [c.criterion for c in criteria] == [1, 2, 3, 4, 5, 6]
    assert all(c.passed for c in criteria)


def test_flat_channel_curve_fails_channel_criterion():
    results = dict(PASSING)
    results[ExperimentKind.CHANNELS] = {1: [0.94, 0.94, 0.94], 2: [0.94, 0.95, 0.95], 3: [0.95, 0.94, 0.96]}
    criteria = {c.criterion: c for c in AcceptanceService.evaluate_criteria(make_reports(results))}
    assert not criteria[2].passed
    assert criteria[1].passed


def test_weak_seed_fails_separability():
    results = dict(PASSING)
    results[ExperimentKind.OVERALL] = {"safe-d": [0.99, 0.99, 0.85]}
    criteria = {c.criterion: c for c in AcceptanceService.evaluate_criteria(make_reports(results))}
    assert not criteria[1].passed


def test_baseline_criterion_allows_small_ct_margin():
    results = dict(PASSING)
    results[ExperimentKind.BASELINES] = {**PASSING[ExperimentKind.BASELINES], "ct": [0.953, 0.953, 0.953]}
    criteria = {c.criterion: c for c in AcceptanceService.evaluate_criteria(make_reports(results))}
    assert criteria[6].passed

    results[ExperimentKind.BASELINES] = {**PASSING[ExperimentKind.BASELINES], "rf": [0.97, 0.97, 0.97]}
    criteria = {c.criterion: c for c in AcceptanceService.evaluate_criteria(make_reports(results))}
    assert not criteria[6].passed


@pytest.mark.slow
def test_acceptance_run_writes_reports(tmp_path):
    model_cfg = ModelConfig(feature_width=16, global_seq_len=30, n_heads=2, d_k=4, d_v=4, tcn_width=16, head_hidden=8)
    train_cfg = TrainConfig(lr_init=1e-3, epochs=10, lr_decay_epoch=8)
    result = AcceptanceService().run(
        tmp_path, seeds=[0], check_determinism=True, model_cfg=model_cfg, train_cfg=train_cfg,
    )

    saved = json.loads((tmp_path / "acceptance.json").read_text(encoding="utf-8"))
    assert [c["criterion"] for c in saved["criteria"]] == [1, 2, 3, 4, 5, 6, 10]
    assert {c.criterion: c.passed for c in result.criteria}[10]
    for kind in ("overall", "channels", "attention", "features", "datasize", "baselines"):
        assert (tmp_path / "reports" / kind / "report.json").exists()
