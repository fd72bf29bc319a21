from enum import Enum, IntEnum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings


class ChannelId(IntEnum):
    """차량 조작 채널 (서수 = 채널 인덱스 c)"""
    STEERING = 0
    THROTTLE = 1
    BRAKE = 2

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> "ChannelId":
        try:
            return cls[key.strip().upper()]
        except KeyError:
            raise ValueError(f"알 수 없는 채널: {key}")


ALL_CHANNELS: Tuple[ChannelId, ...] = tuple(ChannelId)


class SegmentKind(str, Enum):
    STRAIGHT = "straight"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    U_TURN = "u_turn"

    @property
    def is_straight(self) -> bool:
        return self is SegmentKind.STRAIGHT


class TraceLabel(str, Enum):
    HEALTHY = "healthy"
    ABNORMAL = "abnormal"

    @property
    def as_int(self) -> int:
        return 0 if self is TraceLabel.HEALTHY else 1


class ChannelSeries(BaseModel):
    channel: ChannelId = Field(..., description="채널")
    timestamps: Tuple[float, ...] = Field(..., description="타임스탬프 (초, 순증가)")
    values: Tuple[float, ...] = Field(..., description="원시 단위 값")
    nominal_rate: float = Field(..., gt=0, description="공칭 샘플링 주파수 (Hz)")

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_samples(self) -> "ChannelSeries":
        if len(self.timestamps) != len(self.values):
            raise ValueError(
                f"{self.channel.key}: timestamps({len(self.timestamps)})와 values({len(self.values)}) 길이가 다릅니다"
            )
        times = np.asarray(self.timestamps, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(times)):
            raise ValueError(f"{self.channel.key}: 유한하지 않은 타임스탬프가 있습니다")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            index = int(np.argmax(np.diff(times) <= 0))
            raise ValueError(
                f"{self.channel.key}: 타임스탬프가 순증가하지 않습니다 (index {index + 1}, t={times[index + 1]})"
            )
        if not np.all(np.isfinite(values)):
            index = int(np.argmax(~np.isfinite(values)))
            raise ValueError(f"{self.channel.key}: 유한하지 않은 값이 있습니다 (index {index})")
        return self

    @property
    def times_array(self) -> np.ndarray:
        return np.asarray(self.timestamps, dtype=float)

    @property
    def values_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def __len__(self) -> int:
        return len(self.values)


class Segment(BaseModel):
    start_s: float = Field(..., ge=0, description="구간 시작 (초)")
    end_s: float = Field(..., description="구간 끝 (초)")
    kind: SegmentKind = Field(..., description="도로 구간 종류")

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_bounds(self) -> "Segment":
        if self.end_s <= self.start_s:
            raise ValueError(f"구간 끝({self.end_s})이 시작({self.start_s})보다 커야 합니다")
        return self

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


class RawTrace(BaseModel):
    trace_id: str = Field(..., description="트레이스 식별자")
    series: Tuple[ChannelSeries, ...] = Field(..., description="채널별 시계열")
    segments: Tuple[Segment, ...] = Field(..., description="도로 구간 목록")
    map_id: str = Field(..., description="주행 맵")
    label: TraceLabel = Field(..., description="정상/이상 라벨")
    provenance: str = Field("healthy", description="생성 이력 (healthy 또는 증상 설정 요약)")
    seed: int = Field(0, description="생성 시드")
    steering_range_deg: float = Field(settings.steering_range_deg, gt=0, description="조향 최대각 (±도)")
    normalized: bool = Field(False, description="정규화 여부")
    clipped_samples: int = Field(0, ge=0, description="정규화 중 클리핑된 샘플 수")

    class Config:
        frozen = True

    @field_validator("series")
    @classmethod
    def _check_channels(cls, series: Tuple[ChannelSeries, ...]) -> Tuple[ChannelSeries, ...]:
        channels = sorted(item.channel for item in series)
        if channels != list(ALL_CHANNELS):
            missing = [c.key for c in ALL_CHANNELS if c not in channels]
            raise ValueError(f"세 채널이 정확히 하나씩 필요합니다 (누락: {missing}, 입력: {[c.key for c in channels]})")
        empty = [item.channel.key for item in series if len(item) == 0]
        if empty:
            raise ValueError(f"샘플이 없는 채널이 있습니다: {empty}")
        return tuple(sorted(series, key=lambda item: item.channel))

    @field_validator("segments")
    @classmethod
    def _check_tiling(cls, segments: Tuple[Segment, ...]) -> Tuple[Segment, ...]:
        if not segments:
            raise ValueError("구간이 최소 하나 필요합니다")
        if abs(segments[0].start_s) > 1e-9:
            raise ValueError("첫 구간은 0초에서 시작해야 합니다")
        for previous, current in zip(segments, segments[1:]):
            if abs(previous.end_s - current.start_s) > 1e-6:
                raise ValueError(
                    f"구간 사이에 틈/겹침이 있습니다 ({previous.end_s} → {current.start_s})"
                )
        return segments

    @model_validator(mode="after")
    def _check_span(self) -> "RawTrace":
        duration = self.duration_s
        for item in self.series:
            if item.timestamps and (item.timestamps[0] < -1e-9 or item.timestamps[-1] > duration + 1e-6):
                raise ValueError(f"{item.channel.key}: 타임스탬프가 [0, {duration}] 범위를 벗어납니다")
        return self

    @property
    def duration_s(self) -> float:
        return self.segments[-1].end_s

    def channel(self, channel: ChannelId) -> ChannelSeries:
        return self.series[int(channel)]

    def segment_index(self, times: np.ndarray) -> np.ndarray:
        """각 시각이 속한 구간 인덱스 ([start, end), 마지막 구간은 끝 포함)"""
        bounds = np.asarray([segment.end_s for segment in self.segments[:-1]], dtype=float)
        return np.searchsorted(bounds, np.asarray(times, dtype=float), side="right")

    def straight_mask(self, times: np.ndarray) -> np.ndarray:
        kinds = np.asarray([segment.kind.is_straight for segment in self.segments], dtype=bool)
        return kinds[self.segment_index(times)]

    def replace(self, **changes) -> "RawTrace":
        """변경 사항을 반영한 새 트레이스 (재검증)"""
        payload = {name: getattr(self, name) for name in type(self).model_fields}
        payload.update(changes)
        return type(self)(**payload)


class WindowSample(BaseModel):
    data: Tuple[Tuple[float, ...], ...] = Field(..., description="3×M 정규화 행렬")
    label: int = Field(..., ge=0, le=1, description="0=정상, 1=이상")
    window_start_s: float = Field(..., ge=0, description="윈도우 시작 시각")
    map_id: str = Field(..., description="주행 맵")
    trace_id: str = Field(..., description="원본 트레이스")
    segment_kinds: Tuple[SegmentKind, ...] = Field(default=(), description="겹치는 구간 종류")

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_ranges(self) -> "WindowSample":
        if len(self.data) != len(ALL_CHANNELS):
            raise ValueError(f"행 수는 {len(ALL_CHANNELS)}이어야 합니다 (입력 {len(self.data)})")
        lengths = {len(row) for row in self.data}
        if len(lengths) != 1 or 0 in lengths:
            raise ValueError(f"모든 행의 길이가 같아야 합니다 ({sorted(lengths)})")
        matrix = self.to_array()
        if not np.all(np.isfinite(matrix)):
            raise ValueError("유한하지 않은 값이 있습니다")
        steering = matrix[ChannelId.STEERING]
        pedals = matrix[[ChannelId.THROTTLE, ChannelId.BRAKE]]
        if steering.min() < -1 - 1e-9 or steering.max() > 1 + 1e-9:
            raise ValueError("조향 행은 [-1, 1] 범위여야 합니다")
        if pedals.min() < -1e-9 or pedals.max() > 1 + 1e-9:
            raise ValueError("페달 행은 [0, 1] 범위여야 합니다")
        return self

    def to_array(self) -> np.ndarray:
        return np.asarray(self.data, dtype=float)

    @property
    def length(self) -> int:
        return len(self.data[0])

    @classmethod
    def from_array(cls, matrix: np.ndarray, **fields) -> "WindowSample":
        rows = tuple(tuple(float(v) for v in row) for row in np.asarray(matrix, dtype=float))
        return cls(data=rows, **fields)


class Frame(BaseModel):
    data: Tuple[Tuple[float, ...], ...] = Field(..., description="3×F 프레임 행렬")
    frame_index: int = Field(..., ge=1, description="프레임 번호 r (1부터)")

    class Config:
        frozen = True

    def to_array(self) -> np.ndarray:
        return np.asarray(self.data, dtype=float)


class PreprocessParams(BaseModel):
    target_hz: int = Field(settings.target_hz, gt=0, description="정렬 주파수")
    window_s: float = Field(settings.window_s, gt=0, description="윈도우 길이 (초)")
    overlap_s: float = Field(settings.overlap_s, ge=0, description="윈도우 겹침 (초)")
    frame_s: float = Field(settings.frame_s, gt=0, description="프레임 길이 (초)")
    frame_stride_s: float = Field(settings.frame_stride_s, gt=0, description="프레임 이동 간격 (초)")

    @model_validator(mode="after")
    def _check_stride(self) -> "PreprocessParams":
        if self.overlap_s >= self.window_s:
            raise ValueError("overlap_s는 window_s보다 작아야 합니다")
        if self.frame_s > self.window_s:
            raise ValueError("frame_s는 window_s 이하여야 합니다")
        return self

    @property
    def stride_s(self) -> float:
        return self.window_s - self.overlap_s

    @property
    def window_len(self) -> int:
        return int(round(self.window_s * self.target_hz))

    @property
    def frame_len(self) -> int:
        return int(round(self.frame_s * self.target_hz))

    @property
    def frame_stride(self) -> int:
        return int(round(self.frame_stride_s * self.target_hz))


class ManifestEntry(BaseModel):
    trace_id: str = Field(..., description="트레이스 식별자")
    path: str = Field(..., description="매니페스트 기준 상대 경로")
    label: TraceLabel = Field(..., description="라벨")
    map_id: str = Field(..., description="주행 맵")
    duration_s: float = Field(..., gt=0, description="주행 길이")
    n_windows: int = Field(..., ge=0, description="잘려 나올 윈도우 수")


class DatasetManifest(BaseModel):
    entries: List[ManifestEntry] = Field(default=[], description="트레이스 목록")
    trace_counts: Dict[str, int] = Field(default={}, description="클래스별 트레이스 수")
    window_counts: Dict[str, int] = Field(default={}, description="클래스별 윈도우 수")
    seed: int = Field(..., description="전역 시드")
    preprocessing: PreprocessParams = Field(default_factory=PreprocessParams, description="전처리 파라미터")
    split: Dict[str, Literal["train", "test"]] = Field(default={}, description="trace_id → train|test (윈도우는 트레이스의 쪽을 따름)")
    split_ratio: Optional[float] = Field(None, gt=0, lt=1, description="학습 비율")
    created_at: Optional[str] = Field(None, description="생성 시각")


class ValidationReport(BaseModel):
    ok: bool = Field(..., description="위반 사항 없음 여부")
    trace_counts: Dict[str, int] = Field(default={}, description="실제 클래스별 트레이스 수")
    window_counts: Dict[str, int] = Field(default={}, description="실제 클래스별 윈도우 수")
    rate_stats: Dict[str, Dict[str, float]] = Field(default={}, description="채널별 샘플링 주파수 통계")
    violations: List[str] = Field(default=[], description="위반 목록")
