import logging
from collections import OrderedDict, defaultdict
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import ConfigSchemaException, EvaluationException, SafeDException, describe_validation_error
from app.models.evaluation import (
    AblationRow,
    AblationSpec,
    AblationTable,
    ConfusionMatrix,
    EvalReport,
    ExperimentKind,
    LevelSummary,
    level_key,
)
from app.models.network import ModelConfig
from app.models.telemetry import ALL_CHANNELS, DatasetManifest, WindowSample
from app.models.training import TrainConfig
from app.services.baseline_service import BASELINE_KINDS, BaselineService, feature_layout
from app.services.model_service import ModelService
from app.services.train_service import TrainService
from app.utils.helpers import config_digest, make_rng, mean

logger = logging.getLogger(__name__)

CHANNEL_LEVELS = {
    1: ["steering"],
    2: ["steering", "throttle"],
    3: [c.key for c in ALL_CHANNELS],
}
SAFE_D = "safe-d"


class EvaluationService:
    """정확도/혼동 행렬 계산과 어블레이션 실행 서비스"""

    def __init__(
        self,
        train_service: Optional[TrainService] = None,
        baseline_service: Optional[BaselineService] = None,
    ):
        self.train_service = train_service or TrainService()
        self.baseline_service = baseline_service or BaselineService()

    @staticmethod
    def accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
        preds, labels = np.asarray(preds), np.asarray(labels)
        if preds.size == 0:
            raise EvaluationException("빈 입력의 정확도는 계산할 수 없습니다")
        if preds.shape != labels.shape:
            raise EvaluationException(f"길이 불일치: {preds.size} != {labels.size}")
        return float(np.count_nonzero(preds == labels) / preds.size)

    @staticmethod
    def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
        preds, labels = np.asarray(preds), np.asarray(labels)
        if preds.size == 0:
            raise EvaluationException("빈 입력의 혼동 행렬은 만들 수 없습니다")
        if preds.shape != labels.shape:
            raise EvaluationException(f"길이 불일치: {preds.size} != {labels.size}")
        for name, values in (("preds", preds), ("labels", labels)):
            if not np.isin(values, (0, 1)).all():
                raise EvaluationException(f"{name}에 0/1 이외의 값이 있습니다")
        return ConfusionMatrix(
            tp=int(np.count_nonzero((preds == 1) & (labels == 1))),
            tn=int(np.count_nonzero((preds == 0) & (labels == 0))),
            fp=int(np.count_nonzero((preds == 1) & (labels == 0))),
            fn=int(np.count_nonzero((preds == 0) & (labels == 1))),
        )

    @staticmethod
    def parse_spec(spec: Union[AblationSpec, Dict[str, Any]]) -> AblationSpec:
        if isinstance(spec, AblationSpec):
            return spec
        try:
            return AblationSpec.model_validate(spec)
        except ValidationError as e:
            raise ConfigSchemaException(f"어블레이션 설정 오류: {describe_validation_error(e)}")

    def run_ablation(
        self,
        spec: Union[AblationSpec, Dict[str, Any]],
        manifest: DatasetManifest,
        windows: Sequence[WindowSample],
        model_cfg: Union[ModelConfig, Dict[str, Any], None] = None,
        train_cfg: Union[TrainConfig, Dict[str, Any], None] = None,
        jobs: int = 1,
    ) -> EvalReport:
        """수준 × 시드마다 학습/평가 후 맵별 행과 수준 요약을 만든다"""
        spec = self.parse_spec(spec)
        base_model = self.train_service.model_service.parse_config({
            **ModelService.parse_config(model_cfg).model_dump(),
            **spec.model,
        })
        base_train = self.train_service.parse_config({
            **TrainService.parse_config(train_cfg).model_dump(),
            **spec.train,
        })
        ratio = spec.split_ratio or base_train.split_ratio

        manifest, windows = self._filter_maps(manifest, windows, spec.maps)
        levels = [(level_key(level), self._level_plan(spec, level, base_model, base_train)) for level in spec.levels]

        jobs_args = []
        for seed in spec.seeds:
            train_ids, test_ids = self.train_service.split_dataset(manifest, ratio, seed, base_train.stratify_by_map)
            for key, plan in levels:
                if spec.experiment is ExperimentKind.DATASIZE:
                    ids = self._subsample(manifest, train_ids, plan["fraction"], seed)
                else:
                    ids = train_ids
                train_w, test_w = self.train_service.split_windows(windows, ids, test_ids)
                if not test_w:
                    raise EvaluationException(f"시드 {seed}의 테스트 윈도우가 없습니다")
                jobs_args.append((key, seed, plan, train_w, test_w, spec.baseline_epochs))

        logger.info(f"어블레이션 시작: {spec.experiment.value}, 수준 {[k for k, _ in levels]}, 시드 {spec.seeds}, 작업 {len(jobs_args)}개")
        try:
            if jobs > 1:
                with ProcessPoolExecutor(max_workers=jobs) as executor:
                    outcomes = list(executor.map(_run_job, jobs_args))
            else:
                outcomes = [_run_job(args) for args in jobs_args]
        except SafeDException:
            raise
        except Exception as e:
            logger.error(f"어블레이션 실패: {e}")
            raise EvaluationException(f"어블레이션 실행에 실패했습니다: {str(e)}")

        order = {key: index for index, (key, _) in enumerate(levels)}
        rows = []
        for (key, seed, _, _, test_w, _), preds in zip(jobs_args, outcomes):
            rows.extend(self._map_rows(key, seed, test_w, preds))
        rows.sort(key=lambda row: (order[row.level], spec.seeds.index(row.seed), row.map_id))

        table = AblationTable(
            experiment=spec.experiment,
            rows=rows,
            summaries=[self._summarize(key, [r for r in rows if r.level == key]) for key, _ in levels],
        )
        digests = {"spec": config_digest(spec.model_dump(mode="json"))}
        digests.update({key: config_digest(plan["digest_source"]) for key, plan in levels})

        report = self.build_report(spec.experiment, table, levels[-1][0], spec.seeds, digests)
        layout = feature_layout(base_model.window_len)
        report.metadata["feature_length"] = layout["length"]
        report.metadata["feature_stats"] = layout["stats"]
        report.metadata["split_ratio"] = ratio
        for summary in table.summaries:
            logger.info(
                f"[{spec.experiment.value}] {summary.level}: 평균 {summary.mean_accuracy:.4f} "
                f"(min {summary.min_accuracy:.4f}, max {summary.max_accuracy:.4f})"
            )
        return report

    def build_report(
        self,
        experiment: ExperimentKind,
        table: AblationTable,
        primary_level: str,
        seeds: List[int],
        digests: Dict[str, str],
    ) -> EvalReport:
        """대표 수준의 맵별 정확도/혼동 행렬(시드 합)과 맵 평균"""
        confusion: Dict[str, ConfusionMatrix] = OrderedDict()
        for row in table.rows:
            if row.level == primary_level:
                confusion[row.map_id] = confusion.get(row.map_id, ConfusionMatrix()) + row.confusion
        per_map = {map_id: matrix.accuracy for map_id, matrix in sorted(confusion.items())}
        average = mean(per_map.values()) if per_map else None
        return EvalReport(
            experiment=experiment,
            per_map_accuracy=per_map,
            average_accuracy=average,
            map_spread=(max(per_map.values()) - min(per_map.values())) if per_map else None,
            confusion=dict(sorted(confusion.items())),
            tables=[table] if table.rows else [],
            config_digests=digests,
            seeds=list(seeds),
        )

    def evaluate_overall(
        self,
        preds: Sequence[int],
        windows: Sequence[WindowSample],
        seed: int,
        digests: Optional[Dict[str, str]] = None,
    ) -> EvalReport:
        """이미 학습된 모델의 예측으로 overall 형태 리포트 생성"""
        rows = self._map_rows(SAFE_D, seed, windows, np.asarray(preds))
        table = AblationTable(
            experiment=ExperimentKind.OVERALL,
            rows=rows,
            summaries=[self._summarize(SAFE_D, rows)] if rows else [],
        )
        return self.build_report(ExperimentKind.OVERALL, table, SAFE_D, [seed], digests or {})

    def _map_rows(self, level: str, seed: int, windows: Sequence[WindowSample], preds: np.ndarray) -> List[AblationRow]:
        by_map: Dict[str, List[int]] = defaultdict(list)
        for index, window in enumerate(windows):
            by_map[window.map_id].append(index)
        labels = np.array([w.label for w in windows])
        rows = []
        for map_id in sorted(by_map):
            index = np.array(by_map[map_id])
            matrix = self.confusion(preds[index], labels[index])
            rows.append(AblationRow(
                level=level,
                seed=seed,
                map_id=map_id,
                accuracy=matrix.accuracy,
                n_test=matrix.total,
                confusion=matrix,
            ))
        return rows

    @staticmethod
    def _summarize(level: str, rows: List[AblationRow]) -> LevelSummary:
        seeds: Dict[int, List[float]] = OrderedDict()
        maps: Dict[str, List[float]] = defaultdict(list)
        for row in rows:
            seeds.setdefault(row.seed, []).append(row.accuracy)
            maps[row.map_id].append(row.accuracy)
        per_seed = {str(seed): mean(values) for seed, values in seeds.items()}
        values = list(per_seed.values())
        return LevelSummary(
            level=level,
            mean_accuracy=mean(values),
            min_accuracy=min(values),
            max_accuracy=max(values),
            spread=max(values) - min(values),
            per_seed=per_seed,
            per_map={map_id: mean(items) for map_id, items in sorted(maps.items())},
        )

    def _level_plan(self, spec: AblationSpec, level: Any, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Dict[str, Any]:
        """수준 하나를 (모델 설정 | 베이스라인 종류, 학습 설정)으로 변환"""
        experiment = spec.experiment
        update: Dict[str, Any] = {}
        plan: Dict[str, Any] = {"kind": SAFE_D, "fraction": 1.0}

        if experiment is ExperimentKind.CHANNELS:
            if level not in CHANNEL_LEVELS:
                raise EvaluationException(f"채널 수준은 1, 2, 3 중 하나여야 합니다 (입력 {level})")
            update["channels"] = CHANNEL_LEVELS[level]
        elif experiment is ExperimentKind.ATTENTION:
            if level not in ("on", "off"):
                raise EvaluationException(f"어텐션 수준은 on/off여야 합니다 (입력 {level})")
            update["use_attention"] = level == "on"
        elif experiment is ExperimentKind.FRAMES:
            if not isinstance(level, int) or not 1 <= level <= model_cfg.total_frames:
                raise EvaluationException(f"프레임 수준은 1..{model_cfg.total_frames} 정수여야 합니다 (입력 {level})")
            update["n_frames"] = level
        elif experiment is ExperimentKind.FEATURES:
            flags = {"local": (False, True), "global": (True, False), "both": (True, True)}
            if level not in flags:
                raise EvaluationException(f"특징 수준은 local/global/both 중 하나여야 합니다 (입력 {level})")
            update["use_global"], update["use_local"] = flags[level]
        elif experiment is ExperimentKind.DATASIZE:
            if not isinstance(level, (int, float)) or not 0 < float(level) <= 1:
                raise EvaluationException(f"데이터 비율은 (0, 1] 범위여야 합니다 (입력 {level})")
            plan["fraction"] = float(level)
        elif experiment is ExperimentKind.BASELINES:
            if level != SAFE_D and level not in BASELINE_KINDS:
                raise EvaluationException(f"알 수 없는 베이스라인 수준: {level}")
            plan["kind"] = level
        elif level != SAFE_D:
            raise EvaluationException(f"overall 실험의 수준은 {SAFE_D}뿐입니다 (입력 {level})")

        try:
            level_model = ModelConfig.model_validate({**model_cfg.model_dump(), **update})
        except ValidationError as e:
            raise EvaluationException(f"수준 {level}이 모델 설정과 맞지 않습니다: {describe_validation_error(e)}")
        plan["model"] = level_model.model_dump(mode="json")
        plan["train"] = train_cfg.model_dump(mode="json")
        plan["digest_source"] = {"kind": plan["kind"], "model": plan["model"], "train": plan["train"], "fraction": plan["fraction"]}
        return plan

    @staticmethod
    def _filter_maps(
        manifest: DatasetManifest,
        windows: Sequence[WindowSample],
        maps: Optional[List[str]],
    ) -> Tuple[DatasetManifest, List[WindowSample]]:
        if not maps:
            return manifest, list(windows)
        known = {entry.map_id for entry in manifest.entries}
        unknown = [m for m in maps if m not in known]
        if unknown:
            raise EvaluationException(f"매니페스트에 없는 맵: {unknown}")
        entries = [entry for entry in manifest.entries if entry.map_id in maps]
        return manifest.model_copy(update={"entries": entries}), [w for w in windows if w.map_id in maps]

    @staticmethod
    def _subsample(manifest: DatasetManifest, train_ids: List[str], fraction: float, seed: int) -> List[str]:
        """(라벨, 맵) 층마다 학습 트레이스의 fraction만 남긴다 (층당 최소 1개)"""
        if fraction >= 1.0:
            return list(train_ids)
        chosen = set(train_ids)
        strata: Dict[Tuple[str, str], List[str]] = OrderedDict()
        for entry in manifest.entries:
            if entry.trace_id in chosen:
                strata.setdefault((entry.label.value, entry.map_id), []).append(entry.trace_id)
        kept = set()
        for index, ids in enumerate(strata.values()):
            count = max(1, int(round(len(ids) * fraction)))
            order = make_rng(seed, 1000 + index).permutation(len(ids))
            kept.update(ids[i] for i in order[:count])
        return [tid for tid in train_ids if tid in kept]


def _run_job(args: tuple) -> np.ndarray:
    key, seed, plan, train_windows, test_windows, baseline_epochs = args
    if plan["kind"] == SAFE_D:
        service = TrainService()
        train_cfg = {**plan["train"], "seed": seed}
        model, _ = service.train_model(plan["model"], train_cfg, train_windows, test_windows)
        return service.evaluate(model, test_windows)

    baselines = BaselineService()
    model = baselines.train_baseline(plan["kind"], train_windows, seed, epochs=baseline_epochs or settings.ct_epochs)
    return baselines.predict_baseline(model, test_windows)
