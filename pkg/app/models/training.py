from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator

from app.core.config import settings


class TrainConfig(BaseModel):
    lr_init: float = Field(1e-4, gt=0, description="초기 학습률")
    lr_decay_epoch: int = Field(70, ge=1, description="학습률 감소 시작 에폭")
    lr_decay_factor: float = Field(0.1, gt=0, le=1, description="학습률 감소 배율")
    epochs: int = Field(100, ge=1, description="에폭 수")
    batch_size: int = Field(32, ge=1, description="미니배치 크기")
    split_ratio: float = Field(0.85, gt=0, lt=1, description="학습 트레이스 비율")
    stratify_by_map: bool = Field(True, description="맵별 층화 여부 (False면 라벨만)")
    seed: Optional[int] = Field(None, description="학습 시드 (None이면 설정 기본값)")
    dropout: Optional[float] = Field(None, ge=0, lt=1, description="모델 드롭아웃 덮어쓰기")
    grid: Optional[Dict[str, List[Any]]] = Field(None, description="그리드 탐색 후보값")
    grid_epochs: int = Field(settings.grid_search_epochs, ge=1, description="그리드 지점별 단축 에폭")
    eval_batch_size: int = Field(256, ge=1, description="평가 배치 크기")

    @field_validator("grid")
    @classmethod
    def _check_grid(cls, value: Optional[Dict[str, List[Any]]]) -> Optional[Dict[str, List[Any]]]:
        if value is None:
            return value
        for key, candidates in value.items():
            if not candidates:
                raise ValueError(f"grid.{key}에 후보값이 없습니다")
        return value

    @property
    def resolved_seed(self) -> int:
        return settings.default_seed if self.seed is None else self.seed


class TrainHistory(BaseModel):
    train_loss: List[float] = Field(default=[], description="에폭별 평균 학습 손실")
    train_accuracy: List[float] = Field(default=[], description="에폭별 학습 정확도 (추론 모드)")
    test_accuracy: List[Optional[float]] = Field(default=[], description="에폭별 테스트 정확도")
    learning_rate: List[float] = Field(default=[], description="에폭별 학습률")
    best_epoch: Optional[int] = Field(None, description="체크포인트로 선택된 에폭")
    best_test_accuracy: Optional[float] = Field(None, description="선택 에폭의 테스트 정확도")

    @property
    def epochs_completed(self) -> int:
        return len(self.train_loss)


class GridRow(BaseModel):
    params: Dict[str, Any] = Field(..., description="그리드 지점")
    test_accuracy: float = Field(..., description="검증 정확도 (최고 에폭)")
    parameter_count: int = Field(..., description="학습 가능 파라미터 수")
    best: bool = Field(False, description="선택 여부")


class GridResult(BaseModel):
    rows: List[GridRow] = Field(..., description="그리드 지점별 결과")
    best_params: Dict[str, Any] = Field(..., description="선택된 지점")
    model_config_best: Dict[str, Any] = Field(..., description="선택된 모델 설정")
    train_config_best: Dict[str, Any] = Field(..., description="선택된 학습 설정")

    model_config = {"protected_namespaces": ()}
