"""
SAFE-D 탐지 네트워크 (torch)

- 전역 분기: 채널별 시간 투영 → 채널 혼합 → 채널별 ResNet-MLP → 채널 인지 멀티헤드 어텐션
- 지역 분기: 프레임 분할 → 인과 팽창 TCN → 프레임 인지 멀티헤드 어텐션
- 탐지 헤드: (F_Glo + F_Loc) → 16 → 2
"""

import math
from itertools import combinations
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from app.core.exceptions import ModelException
from app.models.network import ModelConfig


class MLPUnit(nn.Module):
    """Linear → BatchNorm → LeakyReLU (마지막 축이 특징 축)"""

    def __init__(self, in_features: int, out_features: int, slope: float, eps: float, momentum: float):
        super().__init__()
        self.linear = nn.Linear(in_features, out_features)
        self.norm = nn.BatchNorm1d(out_features, eps=eps, momentum=momentum)
        self.act = nn.LeakyReLU(slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.linear(x)
        shape = out.shape
        out = self.norm(out.reshape(-1, shape[-1])).reshape(shape)
        return self.act(out)


class ResNetBlock(nn.Module):
    """MLP 유닛 3개 + 스킵 연결"""

    def __init__(self, in_features: int, out_features: int, slope: float = 0.01, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.units = nn.Sequential(
            MLPUnit(in_features, out_features, slope, eps, momentum),
            MLPUnit(out_features, out_features, slope, eps, momentum),
            MLPUnit(out_features, out_features, slope, eps, momentum),
        )
        self.skip = nn.Identity() if in_features == out_features else nn.Linear(in_features, out_features, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.units(x) + self.skip(x)


class GlobalBranch(nn.Module):
    """윈도우 전체에서 채널별 L×W 특징 행렬 추출"""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        channels = cfg.n_channels
        width = cfg.feature_width
        self.width = width
        self.temporal = nn.ModuleList([nn.Linear(cfg.window_len, cfg.global_seq_len) for _ in range(channels)])
        # 같은 시점의 채널 값을 이어 붙여 채널별 W차원 특징으로 섞는다
        self.mixing = nn.Linear(channels, channels * width)
        self.stacks = nn.ModuleList([
            nn.Sequential(*[
                ResNetBlock(width, width, cfg.leaky_slope, cfg.bn_eps, cfg.bn_momentum)
                for _ in range(cfg.resnet_blocks)
            ])
            for _ in range(channels)
        ])

    def channel_paths(self, x: torch.Tensor) -> torch.Tensor:
        """혼합 이전 채널별 시간 투영 (B, L, C)"""
        return torch.stack([layer(x[:, c]) for c, layer in enumerate(self.temporal)], dim=-1)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        z = self.channel_paths(x)
        batch, length, channels = z.shape
        mixed = self.mixing(z).reshape(batch, length, channels, self.width)
        return [stack(mixed[:, :, c]) for c, stack in enumerate(self.stacks)]


class PairwiseAttention(nn.Module):
    """A의 query와 B의 key/value로 계산하는 scaled dot-product 멀티헤드 어텐션"""

    def __init__(self, width: int, n_heads: int, d_k: int, d_v: int, uniform: bool = False):
        super().__init__()
        self.n_heads = n_heads
        self.d_k = d_k
        self.d_v = d_v
        self.uniform = uniform
        self.w_q = nn.Linear(width, n_heads * d_k, bias=False)
        self.w_k = nn.Linear(width, n_heads * d_k, bias=False)
        self.w_v = nn.Linear(width, n_heads * d_v, bias=False)
        self.out = nn.Linear(n_heads * d_v, d_v)

    def _split(self, x: torch.Tensor, size: int) -> torch.Tensor:
        # (..., L, h*d) → (..., h, L, d)
        return x.reshape(*x.shape[:-1], self.n_heads, size).transpose(-2, -3)

    def logits(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        q = self._split(self.w_q(a), self.d_k)
        k = self._split(self.w_k(b), self.d_k)
        return q @ k.transpose(-1, -2) / math.sqrt(self.d_k)

    def values(self, b: torch.Tensor) -> torch.Tensor:
        return self._split(self.w_v(b), self.d_v)

    def weights(self, logits: torch.Tensor) -> torch.Tensor:
        if self.uniform:
            return torch.full_like(logits, 1.0 / logits.shape[-1])
        return torch.softmax(logits, dim=-1)

    def merge(self, heads: torch.Tensor) -> torch.Tensor:
        # (..., h, L, d_v) → (..., L, d_v)
        merged = heads.transpose(-2, -3)
        return self.out(merged.reshape(*merged.shape[:-2], self.n_heads * self.d_v))

    def combine(self, logits: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
        return self.merge(self.weights(logits) @ values)

    def project_values(self, b: torch.Tensor) -> torch.Tensor:
        """어텐션 없이 B 자신의 값 투영 (B와 같은 위치 수)"""
        return self.merge(self.values(b))

    def forward(self, a: torch.Tensor, b: torch.Tensor, return_weights: bool = False):
        logits = self.logits(a, b)
        h = self.combine(logits, self.values(b))
        if return_weights:
            return h, self.weights(logits)
        return h


def channel_pairs(n_channels: int) -> List[Tuple[int, int]]:
    """H_ij 계산 쌍 (query는 낮은 인덱스 채널); 채널이 하나면 자기 자신"""
    if n_channels == 1:
        return [(0, 0)]
    return list(combinations(range(n_channels), 2))


class ChannelFusion(nn.Module):
    """채널 쌍 어텐션 → ν_c 연결 → Σ α_c ν_c → GAP → W 투영"""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        channels = cfg.n_channels
        self.pairs = channel_pairs(channels)
        self.attention = PairwiseAttention(cfg.feature_width, cfg.n_heads, cfg.d_k, cfg.d_v, uniform=not cfg.use_attention)
        self.alpha = nn.Parameter(torch.full((channels,), 1.0 / channels), requires_grad=cfg.use_attention)
        self.project = nn.Linear(cfg.d_v * max(channels - 1, 1), cfg.feature_width)

    def interactions(self, features: List[torch.Tensor]) -> Dict[Tuple[int, int], torch.Tensor]:
        return {(i, j): self.attention(features[i], features[j]) for i, j in self.pairs}

    def nus(self, features: List[torch.Tensor]) -> List[torch.Tensor]:
        # 쌍 결과 H_ij를 두 채널 모두에 할당한다
        interactions = self.interactions(features)
        return [
            torch.cat([h for pair, h in interactions.items() if c in pair], dim=-1)
            for c in range(len(features))
        ]

    def pool(self, nus: List[torch.Tensor]) -> torch.Tensor:
        weighted = sum(self.alpha[c] * nu for c, nu in enumerate(nus))
        return weighted.mean(dim=-2)

    def forward(self, features: List[torch.Tensor]) -> torch.Tensor:
        return self.project(self.pool(self.nus(features)))


class CausalConv1d(nn.Conv1d):
    """왼쪽 0 패딩만 사용하는 팽창 합성곱"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, dilation: int = 1):
        super().__init__(in_channels, out_channels, kernel_size, dilation=dilation, padding=0)
        self.left_padding = (kernel_size - 1) * dilation

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return super().forward(F.pad(x, (self.left_padding, 0)))


class TemporalBlock(nn.Module):
    """인과 팽창 합성곱 1개 + 잔차 연결 (층당 수용 영역 증가 (k-1)·d)"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, dilation: int, slope: float, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            CausalConv1d(in_channels, out_channels, kernel_size, dilation),
            nn.LeakyReLU(slope),
            nn.Dropout(dropout),
        )
        self.residual = nn.Conv1d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()
        self.act = nn.LeakyReLU(slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.net(x) + self.residual(x))


class TCN(nn.Module):
    def __init__(self, cfg: ModelConfig, dropout: float = 0.0):
        super().__init__()
        layers = []
        in_channels = cfg.n_channels
        for dilation in cfg.tcn_dilations:
            layers.append(TemporalBlock(in_channels, cfg.tcn_width, cfg.tcn_kernel, dilation, cfg.leaky_slope, dropout))
            in_channels = cfg.tcn_width
        self.layers = nn.Sequential(*layers)
        self.project = nn.Conv1d(cfg.tcn_width, cfg.feature_width, 1) if cfg.tcn_width != cfg.feature_width else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # (N, C, F) → (N, W, F)
        return self.project(self.layers(x))


class LocalFusion(nn.Module):
    """프레임 r별 (자기 값 특징 + s 평균 쌍 어텐션) → 시간 GAP → 학습 가중 프레임 합 → W 투영"""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.use_attention = cfg.use_attention
        self.attention = PairwiseAttention(cfg.feature_width, cfg.n_heads, cfg.d_k, cfg.d_v, uniform=not cfg.use_attention)
        self.score = nn.Linear(cfg.d_v, 1)
        self.project = nn.Linear(cfg.d_v, cfg.feature_width)

    def frame_weights(self, pooled: torch.Tensor) -> torch.Tensor:
        if not self.use_attention:
            return torch.full(pooled.shape[:-1], 1.0 / pooled.shape[-2], dtype=pooled.dtype, device=pooled.device)
        return torch.softmax(self.score(pooled).squeeze(-1), dim=-1)

    def frame_summaries(self, frame_features: torch.Tensor) -> torch.Tensor:
        """(B, R, F, W) → (B, R, d_v): 프레임 r 자신의 값 특징 + s 평균 쌍 상호작용, 시간 GAP"""
        pairs = self.attention(frame_features.unsqueeze(2), frame_features.unsqueeze(1))  # (B, R, R, F, d_v)
        own = self.attention.project_values(frame_features)  # (B, R, F, d_v)
        return (own + pairs.mean(dim=2)).mean(dim=-2)

    def forward(self, frame_features: torch.Tensor) -> torch.Tensor:
        # frame_features: (B, R, F, W)
        if frame_features.shape[1] == 0:
            raise ModelException("프레임이 하나 이상 필요합니다 (R=0)")
        pooled = self.frame_summaries(frame_features)
        weights = self.frame_weights(pooled)
        return self.project((weights.unsqueeze(-1) * pooled).sum(dim=1))


class LocalBranch(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.frame_len = cfg.frame_len
        self.frame_stride = cfg.frame_stride
        self.n_frames = cfg.effective_frames
        self.tcn = TCN(cfg)

    def frames(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, M) → (B, R, C, F)"""
        frames = x.unfold(-1, self.frame_len, self.frame_stride)[:, :, : self.n_frames]
        return frames.permute(0, 2, 1, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        frames = self.frames(x)
        batch, count, channels, length = frames.shape
        features = self.tcn(frames.reshape(batch * count, channels, length))
        return features.reshape(batch, count, -1, length).transpose(-1, -2)  # (B, R, F, W)


class SafeDNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("channel_index", torch.tensor(cfg.channel_indices, dtype=torch.long), persistent=False)
        self.global_branch: Optional[GlobalBranch] = GlobalBranch(cfg) if cfg.use_global else None
        self.channel_fusion: Optional[ChannelFusion] = ChannelFusion(cfg) if cfg.use_global else None
        self.local_branch: Optional[LocalBranch] = LocalBranch(cfg) if cfg.use_local else None
        self.local_fusion: Optional[LocalFusion] = LocalFusion(cfg) if cfg.use_local else None
        self.head = nn.Sequential(
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.feature_width, cfg.head_hidden),
            nn.LeakyReLU(cfg.leaky_slope),
            nn.Linear(cfg.head_hidden, cfg.n_classes),
        )

    def select_channels(self, x: torch.Tensor) -> torch.Tensor:
        return x.index_select(1, self.channel_index)

    def features(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(F_Glo, F_Loc); 꺼진 분기는 0 벡터"""
        x = self.select_channels(x)
        zeros = x.new_zeros(x.shape[0], self.cfg.feature_width)
        f_glo = self.channel_fusion(self.global_branch(x)) if self.global_branch is not None else zeros
        f_loc = self.local_fusion(self.local_branch(x)) if self.local_branch is not None else zeros
        return f_glo, f_loc

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f_glo, f_loc = self.features(x)
        return self.head(f_glo + f_loc)
