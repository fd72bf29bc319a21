from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from app.models.telemetry import ALL_CHANNELS, ChannelId


class ModelConfig(BaseModel):
    # 입력 형태
    channels: List[str] = Field(default=[c.key for c in ALL_CHANNELS], min_length=1, description="사용할 채널")
    window_len: int = Field(120, gt=0, description="윈도우 길이 M (샘플)")
    frame_len: int = Field(30, gt=0, description="프레임 길이 (샘플)")
    frame_stride: int = Field(15, gt=0, description="프레임 이동 간격 (샘플)")
    n_frames: Optional[int] = Field(None, ge=1, description="앞쪽 k개 프레임만 사용 (None이면 전부)")

    # 전역 분기
    feature_width: int = Field(64, gt=0, description="F_Glo / F_Loc 공통 특징 폭")
    global_seq_len: int = Field(90, gt=0, description="전역 특징 행렬의 시퀀스 길이")
    resnet_blocks: int = Field(2, ge=1, description="채널별 ResNet 블록 수")

    # 어텐션
    n_heads: int = Field(4, ge=1, description="헤드 수")
    d_k: int = Field(16, gt=0, description="헤드당 query/key 차원")
    d_v: int = Field(16, gt=0, description="헤드당 value 차원 및 투영 출력 차원")

    # 지역 분기 (TCN)
    tcn_kernel: int = Field(3, ge=2, description="TCN 커널 크기")
    tcn_dilations: List[int] = Field(default=[1, 2, 4], min_length=1, description="층별 팽창 계수")
    tcn_width: int = Field(64, gt=0, description="TCN 채널 폭")

    # 정규화 / 헤드
    dropout: float = Field(0.3, ge=0, lt=1, description="헤드 앞 드롭아웃")
    leaky_slope: float = Field(0.01, ge=0, description="Leaky ReLU 음수 기울기")
    bn_eps: float = Field(1e-5, gt=0, description="BatchNorm epsilon")
    bn_momentum: float = Field(0.1, gt=0, le=1, description="BatchNorm momentum")
    head_hidden: int = Field(16, gt=0, description="탐지 헤드 은닉 차원")
    n_classes: int = Field(2, ge=2, description="출력 로짓 수")

    # 어블레이션 스위치
    use_attention: bool = Field(True, description="False면 균등 어텐션과 고정 α")
    use_global: bool = Field(True, description="전역 분기 사용")
    use_local: bool = Field(True, description="지역 분기 사용")

    @field_validator("channels")
    @classmethod
    def _check_channels(cls, value: List[str]) -> List[str]:
        keys = [ChannelId.from_key(key).key for key in value]
        if len(set(keys)) != len(keys):
            raise ValueError("채널이 중복되었습니다")
        return sorted(keys, key=lambda key: ChannelId.from_key(key))

    @field_validator("tcn_dilations")
    @classmethod
    def _check_dilations(cls, value: List[int]) -> List[int]:
        for dilation in value:
            if dilation < 1 or dilation & (dilation - 1):
                raise ValueError(f"팽창 계수는 2의 거듭제곱이어야 합니다 ({dilation})")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("팽창 계수는 순증가해야 합니다")
        return value

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.frame_len > self.window_len:
            raise ValueError("frame_len은 window_len 이하여야 합니다")
        if not (self.use_global or self.use_local):
            raise ValueError("전역/지역 분기 중 하나는 사용해야 합니다")
        if self.n_frames is not None and self.n_frames > self.total_frames:
            raise ValueError(f"n_frames({self.n_frames})가 가능한 프레임 수({self.total_frames})보다 큽니다")
        return self

    @property
    def channel_indices(self) -> Tuple[int, ...]:
        return tuple(int(ChannelId.from_key(key)) for key in self.channels)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def total_frames(self) -> int:
        return (self.window_len - self.frame_len) // self.frame_stride + 1

    @property
    def effective_frames(self) -> int:
        return self.n_frames or self.total_frames

    @property
    def receptive_field(self) -> int:
        """층마다 인과 팽창 합성곱 1개인 TCN의 수용 영역"""
        return 1 + (self.tcn_kernel - 1) * sum(self.tcn_dilations)
