from typing import List, Optional, Sequence

import numpy as np
import pytest

from app.models.network import ModelConfig
from app.models.synth import MAP_IDS
from app.models.telemetry import (
    ChannelId,
    ChannelSeries,
    DatasetManifest,
    ManifestEntry,
    RawTrace,
    Segment,
    SegmentKind,
    TraceLabel,
    WindowSample,
)


def make_trace(
    duration_s: float = 10.0,
    rates: Sequence[float] = (60.0, 25.0, 25.0),
    values: Sequence[float] = (0.0, 0.0, 0.0),
    segments: Optional[List[Segment]] = None,
    label: TraceLabel = TraceLabel.HEALTHY,
    trace_id: str = "trace-0",
    map_id: str = "urban",
) -> RawTrace:
    """채널별 상수 값 트레이스 (원시 단위)"""
    series = []
    for channel, rate, value in zip(ChannelId, rates, values):
        n = int(np.floor(duration_s * rate + 1e-9)) + 1
        times = np.arange(n) / rate
        series.append(
            ChannelSeries(
                channel=channel,
                timestamps=tuple(times.tolist()),
                values=tuple([float(value)] * n),
                nominal_rate=rate,
            )
        )
    return RawTrace(
        trace_id=trace_id,
        series=tuple(series),
        segments=tuple(segments or [Segment(start_s=0.0, end_s=duration_s, kind=SegmentKind.STRAIGHT)]),
        map_id=map_id,
        label=label,
    )


def make_window(matrix: np.ndarray, label: int, trace_id: str, map_id: str = "urban", start: float = 0.0) -> WindowSample:
    return WindowSample.from_array(matrix, label=label, window_start_s=start, map_id=map_id, trace_id=trace_id)


def toy_windows(count: int = 64, length: int = 120, seed: int = 0) -> List[WindowSample]:
    """클래스별 값 범위가 겹치지 않는 선형 분리 가능한 윈도우"""
    rng = np.random.default_rng(seed)
    windows = []
    for index in range(count):
        label = index % 2
        if label == 0:
            steering = rng.uniform(-0.3, -0.1, length)
            pedals = rng.uniform(0.0, 0.2, (2, length))
        else:
            steering = rng.uniform(0.4, 0.8, length)
            pedals = rng.uniform(0.6, 0.9, (2, length))
        matrix = np.vstack([steering, pedals])
        map_id = MAP_IDS[(index // 2) % len(MAP_IDS)]
        windows.append(make_window(matrix, label, f"toy-{index:03d}", map_id))
    return windows


def toy_manifest(windows: Sequence[WindowSample]) -> DatasetManifest:
    """윈도우 하나를 트레이스 하나로 보는 매니페스트"""
    entries = [
        ManifestEntry(
            trace_id=w.trace_id,
            path=f"traces/{w.trace_id}.jsonl",
            label=TraceLabel.ABNORMAL if w.label else TraceLabel.HEALTHY,
            map_id=w.map_id,
            duration_s=4.0,
            n_windows=1,
        )
        for w in windows
    ]
    counts = {label.value: sum(1 for e in entries if e.label is label) for label in TraceLabel}
    return DatasetManifest(entries=entries, trace_counts=counts, window_counts=counts, seed=0)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """기울기 검사용 축소 모델"""
    return ModelConfig(
        window_len=12,
        frame_len=4,
        frame_stride=2,
        feature_width=6,
        global_seq_len=5,
        resnet_blocks=1,
        n_heads=2,
        d_k=3,
        d_v=3,
        tcn_kernel=2,
        tcn_dilations=[1, 2],
        tcn_width=4,
        head_hidden=4,
        dropout=0.0,
    )


@pytest.fixture
def small_config() -> ModelConfig:
    """기본 입력 형태(3×120)를 유지한 작은 모델"""
    return ModelConfig(feature_width=16, global_seq_len=30, n_heads=2, d_k=4, d_v=4, tcn_width=16, head_hidden=8)


@pytest.fixture
def toy_set() -> List[WindowSample]:
    return toy_windows()
