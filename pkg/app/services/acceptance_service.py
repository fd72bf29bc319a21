import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from app.models.evaluation import AcceptanceReport, AblationSpec, CriterionResult, EvalReport, ExperimentKind
from app.models.network import ModelConfig
from app.models.synth import DatasetConfig
from app.models.telemetry import DatasetManifest, WindowSample
from app.models.training import TrainConfig
from app.services.evaluation_service import EvaluationService
from app.services.preprocess_service import PreprocessService
from app.services.report_service import ReportService
from app.services.synth_service import SynthService

logger = logging.getLogger(__name__)

EXPERIMENTS = (
    ExperimentKind.OVERALL,
    ExperimentKind.CHANNELS,
    ExperimentKind.ATTENTION,
    ExperimentKind.FEATURES,
    ExperimentKind.DATASIZE,
    ExperimentKind.BASELINES,
)


def acceptance_dataset_config(seed: int) -> DatasetConfig:
    """기본 데이터셋 + 트레이스마다 증상을 한 채널에만 싣는 설정 (페달 채널 포함)"""
    return DatasetConfig.model_validate({
        "seed": seed,
        "symptoms": {
            "tremor": {"channels": ["steering", "throttle", "brake"]},
            "spike": {"channels": ["steering", "throttle", "brake"]},
            "brownian": {"channels": ["steering", "throttle"]},
            "channels_per_trace": 1,
        },
    })


class AcceptanceService:
    """합성 데이터 기준 수용 기준(1~6, 10) 실행 서비스"""

    def __init__(
        self,
        synth_service: Optional[SynthService] = None,
        preprocess_service: Optional[PreprocessService] = None,
        evaluation_service: Optional[EvaluationService] = None,
        report_service: Optional[ReportService] = None,
    ):
        self.synth_service = synth_service or SynthService()
        self.preprocess_service = preprocess_service or PreprocessService()
        self.evaluation_service = evaluation_service or EvaluationService()
        self.report_service = report_service or ReportService()

    def run(
        self,
        out_dir: Union[str, Path],
        seeds: Optional[List[int]] = None,
        data_seed: int = 42,
        jobs: int = 1,
        check_determinism: bool = False,
        model_cfg: Optional[ModelConfig] = None,
        train_cfg: Optional[TrainConfig] = None,
    ) -> AcceptanceReport:
        out_dir = Path(out_dir)
        seeds = seeds or [0, 1, 2]
        manifest, windows = self._dataset(out_dir / "data", data_seed, jobs)

        reports = self._run_experiments(manifest, windows, seeds, jobs, model_cfg, train_cfg)
        for kind, report in reports.items():
            self.report_service.emit_report(report, out_dir / "reports" / kind.value)

        criteria = self.evaluate_criteria(reports)
        if check_determinism:
            rerun = self._run_experiments(manifest, windows, seeds, jobs, model_cfg, train_cfg)
            identical = all(self._json_bytes(reports[k]) == self._json_bytes(rerun[k]) for k in reports)
            criteria.append(CriterionResult(
                criterion=10,
                name="determinism",
                passed=identical,
                value={"identical": identical},
                threshold="동일 시드 재실행 시 리포트 JSON 바이트 동일",
            ))

        result = AcceptanceReport(criteria=criteria, seeds=seeds)
        path = out_dir / "acceptance.json"
        path.write_text(json.dumps(result.model_dump(mode="json"), indent=2, sort_keys=True, ensure_ascii=False), encoding="utf-8")
        for item in criteria:
            logger.info(f"기준 {item.criterion} ({item.name}): {'PASS' if item.passed else 'FAIL'} {item.value}")
        return result

    def _dataset(self, data_dir: Path, seed: int, jobs: int) -> Tuple[DatasetManifest, List[WindowSample]]:
        config = acceptance_dataset_config(seed)
        manifest, _ = self.synth_service.build_dataset(config, seed, data_dir, jobs)
        windows = self.preprocess_service.build_windows(manifest, data_dir, jobs)
        return manifest, windows

    def _run_experiments(self, manifest, windows, seeds, jobs, model_cfg, train_cfg) -> Dict[ExperimentKind, EvalReport]:
        reports = {}
        for kind in EXPERIMENTS:
            spec = AblationSpec(experiment=kind, seeds=seeds)
            reports[kind] = self.evaluation_service.run_ablation(spec, manifest, windows, model_cfg, train_cfg, jobs)
        return reports

    @staticmethod
    def _json_bytes(report: EvalReport) -> bytes:
        return json.dumps(report.model_dump(mode="json"), sort_keys=True).encode("utf-8")

    @staticmethod
    def evaluate_criteria(reports: Dict[ExperimentKind, EvalReport]) -> List[CriterionResult]:
        """실험 리포트로 기준 1~6 판정"""
        criteria = []

        def table(kind: ExperimentKind):
            return reports[kind].tables[0]

        overall = table(ExperimentKind.OVERALL).summary("safe-d")
        per_seed = list(overall.per_seed.values())
        criteria.append(CriterionResult(
            criterion=1,
            name="end-to-end separability",
            passed=min(per_seed) >= 0.90 and overall.mean_accuracy >= 0.93,
            value={"per_seed": overall.per_seed, "mean": overall.mean_accuracy},
            threshold="시드별 ≥ 0.90, 평균 ≥ 0.93",
        ))

        channels = table(ExperimentKind.CHANNELS)
        c1, c2, c3 = (channels.summary(level) for level in (1, 2, 3))
        ordered_seeds = sum(
            1 for seed in c1.per_seed
            if c1.per_seed[seed] < c2.per_seed[seed] < c3.per_seed[seed]
        )
        criteria.append(CriterionResult(
            criterion=2,
            name="channel ablation ordering",
            passed=(
                c1.mean_accuracy < c2.mean_accuracy < c3.mean_accuracy
                and c3.mean_accuracy - c1.mean_accuracy >= 0.05
                and ordered_seeds >= min(2, len(c1.per_seed))
            ),
            value={"1": c1.mean_accuracy, "2": c2.mean_accuracy, "3": c3.mean_accuracy, "ordered_seeds": ordered_seeds},
            threshold="1 < 2 < 3 채널, 총 이득 ≥ 5점, 시드 3개 중 2개 이상 순서 유지",
        ))

        attention = table(ExperimentKind.ATTENTION)
        on, off = attention.summary("on"), attention.summary("off")
        criteria.append(CriterionResult(
            criterion=3,
            name="attention ablation",
            passed=on.mean_accuracy - off.mean_accuracy >= 0.01,
            value={"on": on.mean_accuracy, "off": off.mean_accuracy},
            threshold="on − off ≥ 1점",
        ))

        features = table(ExperimentKind.FEATURES)
        both, local, glob = (features.summary(level) for level in ("both", "local", "global"))
        criteria.append(CriterionResult(
            criterion=4,
            name="feature-type ablation",
            passed=both.mean_accuracy >= max(local.mean_accuracy, glob.mean_accuracy) + 0.02,
            value={"both": both.mean_accuracy, "local": local.mean_accuracy, "global": glob.mean_accuracy},
            threshold="both ≥ max(local, global) + 2점",
        ))

        datasize = table(ExperimentKind.DATASIZE)
        d10, d50, d100 = (datasize.summary(level) for level in (0.1, 0.5, 1.0))
        criteria.append(CriterionResult(
            criterion=5,
            name="dataset-size curve",
            passed=(
                abs(d100.mean_accuracy - d50.mean_accuracy) <= 0.04
                and (d50.mean_accuracy - d10.mean_accuracy) > (d100.mean_accuracy - d50.mean_accuracy)
            ),
            value={"0.1": d10.mean_accuracy, "0.5": d50.mean_accuracy, "1": d100.mean_accuracy},
            threshold="|100% − 50%| ≤ 4점, 10→50% 이득 > 50→100% 이득",
        ))

        baselines = table(ExperimentKind.BASELINES)
        safe_d = baselines.summary("safe-d").mean_accuracy
        others = {level: baselines.summary(level).mean_accuracy for level in ("svm", "rf", "adaboost", "ct")}
        criteria.append(CriterionResult(
            criterion=6,
            name="baseline comparison",
            passed=all(safe_d >= others[k] for k in ("svm", "rf", "adaboost")) and safe_d >= others["ct"] - 0.005,
            value={"safe-d": safe_d, **others},
            threshold="SAFE-D ≥ SVM/RF/AdaBoost, SAFE-D ≥ CT − 0.5점",
        ))
        return criteria
