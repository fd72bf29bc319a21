from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class ExperimentKind(str, Enum):
    OVERALL = "overall"
    CHANNELS = "channels"
    ATTENTION = "attention"
    FRAMES = "frames"
    FEATURES = "features"
    DATASIZE = "datasize"
    BASELINES = "baselines"


DEFAULT_LEVELS: Dict[ExperimentKind, List[Any]] = {
    ExperimentKind.OVERALL: ["safe-d"],
    ExperimentKind.CHANNELS: [1, 2, 3],
    ExperimentKind.ATTENTION: ["off", "on"],
    ExperimentKind.FRAMES: [1, 2, 3, 4, 5, 6, 7],
    ExperimentKind.FEATURES: ["local", "global", "both"],
    ExperimentKind.DATASIZE: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
    ExperimentKind.BASELINES: ["svm", "rf", "adaboost", "ct", "safe-d"],
}


class ConfusionMatrix(BaseModel):
    tp: int = Field(0, ge=0, description="이상 → 이상")
    tn: int = Field(0, ge=0, description="정상 → 정상")
    fp: int = Field(0, ge=0, description="정상 → 이상")
    fn: int = Field(0, ge=0, description="이상 → 정상")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise ValueError("빈 혼동 행렬의 정확도는 정의되지 않습니다")
        return (self.tp + self.tn) / self.total

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp,
            tn=self.tn + other.tn,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
        )

    def as_grid(self) -> List[List[int]]:
        """[[tn, fp], [fn, tp]] (행: 실제, 열: 예측)"""
        return [[self.tn, self.fp], [self.fn, self.tp]]


class AblationSpec(BaseModel):
    experiment: ExperimentKind = Field(..., description="실험 종류")
    levels: Optional[List[Any]] = Field(None, description="변수 수준 (None이면 실험 기본값)")
    seeds: List[int] = Field(default=[0, 1, 2], min_length=1, description="반복 시드")
    maps: Optional[List[str]] = Field(None, description="맵 필터 (None이면 전부)")
    split_ratio: Optional[float] = Field(None, gt=0, lt=1, description="학습 비율 덮어쓰기")
    model: Dict[str, Any] = Field(default={}, description="ModelConfig 덮어쓰기")
    train: Dict[str, Any] = Field(default={}, description="TrainConfig 덮어쓰기")
    baseline_epochs: Optional[int] = Field(None, ge=1, description="CT 베이스라인 에폭")

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, value: List[int]) -> List[int]:
        if len(set(value)) != len(value):
            raise ValueError("시드가 중복되었습니다")
        return value

    @model_validator(mode="after")
    def _fill_levels(self) -> "AblationSpec":
        if self.levels is None:
            self.levels = list(DEFAULT_LEVELS[self.experiment])
        if not self.levels:
            raise ValueError("levels는 하나 이상이어야 합니다")
        return self


class AblationRow(BaseModel):
    level: str = Field(..., description="변수 수준")
    seed: int = Field(..., description="시드")
    map_id: str = Field(..., description="맵")
    accuracy: float = Field(..., description="테스트 정확도")
    n_test: int = Field(..., description="테스트 윈도우 수")
    confusion: ConfusionMatrix = Field(..., description="혼동 행렬")


class LevelSummary(BaseModel):
    level: str = Field(..., description="변수 수준")
    mean_accuracy: float = Field(..., description="시드 평균 정확도 (시드별 맵 평균의 평균)")
    min_accuracy: float = Field(..., description="시드 최소")
    max_accuracy: float = Field(..., description="시드 최대")
    spread: float = Field(..., description="max − min")
    per_seed: Dict[str, float] = Field(default={}, description="시드별 맵 평균 정확도")
    per_map: Dict[str, float] = Field(default={}, description="맵별 시드 평균 정확도")


class AblationTable(BaseModel):
    experiment: ExperimentKind = Field(..., description="실험 종류")
    rows: List[AblationRow] = Field(default=[], description="(수준, 시드, 맵) 행")
    summaries: List[LevelSummary] = Field(default=[], description="수준 순서의 요약")

    def summary(self, level: Any) -> LevelSummary:
        key = level_key(level)
        for item in self.summaries:
            if item.level == key:
                return item
        raise KeyError(key)


class EvalReport(BaseModel):
    experiment: ExperimentKind = Field(..., description="실험 종류")
    per_map_accuracy: Dict[str, float] = Field(default={}, description="대표 수준의 맵별 정확도")
    average_accuracy: Optional[float] = Field(None, description="맵별 정확도 평균")
    map_spread: Optional[float] = Field(None, description="맵 간 정확도 범위")
    confusion: Dict[str, ConfusionMatrix] = Field(default={}, description="맵별 혼동 행렬 (시드 합)")
    tables: List[AblationTable] = Field(default=[], description="어블레이션 표")
    config_digests: Dict[str, str] = Field(default={}, description="수준별 설정 요약 해시")
    seeds: List[int] = Field(default=[], description="사용한 시드")
    metadata: Dict[str, Any] = Field(default={}, description="특징 길이 등 부가 정보")


class CriterionResult(BaseModel):
    criterion: int = Field(..., description="기준 번호")
    name: str = Field(..., description="기준 이름")
    passed: bool = Field(..., description="통과 여부")
    value: Dict[str, Any] = Field(default={}, description="측정값")
    threshold: str = Field(..., description="판정 조건")


class AcceptanceReport(BaseModel):
    criteria: List[CriterionResult] = Field(default=[], description="기준별 결과")
    seeds: List[int] = Field(default=[], description="사용한 시드")

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.criteria)


def level_key(level: Any) -> str:
    if isinstance(level, float):
        return f"{level:g}"
    return str(level)
