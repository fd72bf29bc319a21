from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings
from app.models.telemetry import ChannelId, PreprocessParams, SegmentKind
from app.utils.helpers import distribute

MAP_IDS: Tuple[str, ...] = ("urban", "rural", "mixed")

# 전체 규모 기준 트레이스 수 (정상 / 이상)
FULL_SCALE_HEALTHY = 7822
FULL_SCALE_ABNORMAL = 6351


def _channel_keys(channels: List[str]) -> List[str]:
    for key in channels:
        ChannelId.from_key(key)
    return channels


class RouteSegment(BaseModel):
    kind: SegmentKind = Field(..., description="구간 종류")
    duration_s: float = Field(..., gt=0, description="구간 길이 (초)")
    target_deg: float = Field(0.0, description="회전 구간 목표 조향각 (도, 좌회전 음수)")


class RoutePlan(BaseModel):
    map_id: str = Field(..., description="맵 식별자")
    segments: List[RouteSegment] = Field(..., min_length=1, description="순서 있는 구간 목록")

    @property
    def total_duration_s(self) -> float:
        return float(sum(segment.duration_s for segment in self.segments))

    def kind_fraction(self, straight: bool) -> float:
        """직선(또는 비직선) 구간의 시간 비율"""
        part = sum(s.duration_s for s in self.segments if s.kind.is_straight == straight)
        return part / self.total_duration_s


class DriverProfile(BaseModel):
    steering_tau_s: float = Field(1.2, gt=0, description="조향 램프 시간 상수 (초)")
    jitter_std: Dict[str, float] = Field(
        default={"steering": 0.004, "throttle": 0.01, "brake": 0.0},
        description="채널별 기본 흔들림 표준편차 (정규화 단위)",
    )
    jitter_tau_s: float = Field(0.5, gt=0, description="흔들림 상관 시간 (초)")
    cruise_throttle_pct: float = Field(30.0, ge=0, le=100, description="직선 순항 가속 페달 (%)")
    turn_throttle_pct: float = Field(12.0, ge=0, le=100, description="회전 중 가속 페달 (%)")
    brake_peak_pct: float = Field(35.0, ge=0, le=100, description="회전 진입 제동 최대치 (%)")
    brake_duration_s: float = Field(1.0, gt=0, description="회전 진입 제동 길이 (초)")

    @field_validator("jitter_std")
    @classmethod
    def _check_jitter(cls, value: Dict[str, float]) -> Dict[str, float]:
        _channel_keys(list(value))
        for key, std in value.items():
            if std < 0:
                raise ValueError(f"jitter_std[{key}]는 0 이상이어야 합니다")
        return value

    def jitter_for(self, channel: ChannelId) -> float:
        return float(self.jitter_std.get(channel.key, 0.0))


class ChannelRates(BaseModel):
    steering: float = Field(60.0, gt=0, description="조향 원시 주파수 (Hz)")
    throttle: float = Field(25.0, gt=0, description="가속 페달 원시 주파수 (Hz)")
    brake: float = Field(25.0, gt=0, description="브레이크 원시 주파수 (Hz)")

    def rate_for(self, channel: ChannelId) -> float:
        return float(getattr(self, channel.key))


class TremorConfig(BaseModel):
    freq_min_hz: float = Field(4.0, description="떨림 주파수 하한 (Hz)")
    freq_max_hz: float = Field(6.0, description="떨림 주파수 상한 (Hz)")
    amplitude_scale: float = Field(1.0, description="직선 구간 정상 peak-to-peak 대비 진폭 배율")
    min_peak_to_peak: float = Field(0.03, ge=0, description="peak-to-peak 하한 (정규화 단위)")
    channels: List[str] = Field(default=["steering"], description="적용 채널")

    @field_validator("freq_min_hz", "freq_max_hz")
    @classmethod
    def _check_band(cls, value: float) -> float:
        if not 4.0 <= value <= 6.0:
            raise ValueError(f"떨림 주파수는 [4, 6] Hz 범위여야 합니다 (입력 {value})")
        return value

    @field_validator("amplitude_scale")
    @classmethod
    def _check_scale(cls, value: float) -> float:
        if value < 0:
            raise ValueError("amplitude_scale은 0 이상이어야 합니다")
        return value

    @field_validator("channels")
    @classmethod
    def _check_channels(cls, value: List[str]) -> List[str]:
        return _channel_keys(value)

    @model_validator(mode="after")
    def _check_order(self) -> "TremorConfig":
        if self.freq_min_hz > self.freq_max_hz:
            raise ValueError("freq_min_hz는 freq_max_hz 이하여야 합니다")
        return self


class SpikeConfig(BaseModel):
    rate_per_s: float = Field(0.6, ge=0, description="스파이크 발생률 (회/초)")
    magnitude_min: float = Field(0.05, ge=0, description="스파이크 크기 하한 (정규화 단위)")
    magnitude_max: float = Field(0.2, ge=0, description="스파이크 크기 상한 (정규화 단위)")
    duration_min: int = Field(3, ge=1, description="스파이크 길이 하한 (샘플)")
    duration_max: int = Field(12, ge=1, description="스파이크 길이 상한 (샘플)")
    channels: List[str] = Field(default=["steering", "throttle"], description="적용 채널")

    @field_validator("channels")
    @classmethod
    def _check_channels(cls, value: List[str]) -> List[str]:
        return _channel_keys(value)

    @model_validator(mode="after")
    def _check_ranges(self) -> "SpikeConfig":
        if self.magnitude_min > self.magnitude_max:
            raise ValueError("magnitude_min은 magnitude_max 이하여야 합니다")
        if self.duration_min > self.duration_max:
            raise ValueError("duration_min은 duration_max 이하여야 합니다")
        return self


class BrownianConfig(BaseModel):
    step_std: float = Field(0.004, ge=0, description="샘플당 가우시안 스텝 표준편차 (정규화 단위)")
    channels: List[str] = Field(default=["steering"], description="적용 채널")

    @field_validator("channels")
    @classmethod
    def _check_channels(cls, value: List[str]) -> List[str]:
        return _channel_keys(value)


class SluggishConfig(BaseModel):
    enabled: bool = Field(False, description="느린 조작 전이 주입 여부")
    lag_min_s: float = Field(0.2, ge=0, description="1차 지연 시간 상수 하한 (초)")
    lag_max_s: float = Field(0.6, ge=0, description="1차 지연 시간 상수 상한 (초)")
    channels: List[str] = Field(default=["steering"], description="적용 채널")

    @field_validator("channels")
    @classmethod
    def _check_channels(cls, value: List[str]) -> List[str]:
        return _channel_keys(value)

    @model_validator(mode="after")
    def _check_order(self) -> "SluggishConfig":
        if self.lag_min_s > self.lag_max_s:
            raise ValueError("lag_min_s는 lag_max_s 이하여야 합니다")
        return self


class SymptomConfig(BaseModel):
    tremor: TremorConfig = Field(default_factory=TremorConfig, description="직선 구간 연속 떨림")
    spike: SpikeConfig = Field(default_factory=SpikeConfig, description="비직선 구간 스파이크 노이즈")
    brownian: BrownianConfig = Field(default_factory=BrownianConfig, description="비직선 구간 브라운 노이즈")
    sluggish: SluggishConfig = Field(default_factory=SluggishConfig, description="비직선 구간 느린 전이")
    channels_per_trace: Optional[int] = Field(
        None, ge=1, description="트레이스마다 각 증상을 적용할 채널 수 (None이면 지정 채널 전부)"
    )


class MapCounts(BaseModel):
    healthy: int = Field(..., ge=0, description="정상 트레이스 수")
    abnormal: int = Field(..., ge=0, description="이상 트레이스 수")


class DatasetConfig(BaseModel):
    maps: List[str] = Field(default=list(MAP_IDS), min_length=1, description="사용할 맵")
    counts: Dict[str, MapCounts] = Field(
        default={map_id: MapCounts(healthy=20, abnormal=20) for map_id in MAP_IDS},
        description="맵별 클래스별 트레이스 수",
    )
    route_duration_s: float = Field(31.0, gt=0, description="트레이스 길이 (초)")
    profile: DriverProfile = Field(default_factory=DriverProfile, description="정상 운전자 프로필")
    symptoms: SymptomConfig = Field(default_factory=SymptomConfig, description="증상 주입 설정")
    rates: ChannelRates = Field(default_factory=ChannelRates, description="채널별 원시 주파수")
    preprocessing: PreprocessParams = Field(default_factory=PreprocessParams, description="전처리 파라미터")
    steering_range_deg: float = Field(settings.steering_range_deg, gt=0, description="조향 최대각 (±도)")
    seed: Optional[int] = Field(None, description="전역 시드 (CLI --seed가 우선)")

    @model_validator(mode="after")
    def _check_maps(self) -> "DatasetConfig":
        for map_id in self.maps:
            if map_id not in MAP_IDS:
                raise ValueError(f"알 수 없는 맵: {map_id} (허용: {list(MAP_IDS)})")
            if map_id not in self.counts:
                raise ValueError(f"counts에 맵 {map_id}가 없습니다")
        return self

    @classmethod
    def full_scale(cls, scale: float, **overrides) -> "DatasetConfig":
        """전체 규모 트레이스 수(7822/6351)를 scale배 하여 세 맵에 분배 (나머지는 앞 맵부터)"""
        healthy = distribute(round(FULL_SCALE_HEALTHY * scale), len(MAP_IDS))
        abnormal = distribute(round(FULL_SCALE_ABNORMAL * scale), len(MAP_IDS))
        counts = {
            map_id: MapCounts(healthy=h, abnormal=a)
            for map_id, h, a in zip(MAP_IDS, healthy, abnormal)
        }
        return cls(counts=counts, **overrides)

    def total(self, label: str) -> int:
        return sum(getattr(self.counts[map_id], label) for map_id in self.maps)
