import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from app.core.config import settings
from app.core.exceptions import PreprocessException, SafeDException
from app.models.telemetry import (
    ChannelId,
    ChannelSeries,
    DatasetManifest,
    Frame,
    PreprocessParams,
    RawTrace,
    TraceLabel,
    WindowSample,
)
from app.services.telemetry_service import TelemetryService
from app.utils.helpers import count_steps

logger = logging.getLogger(__name__)


class PreprocessService:
    """정규화 → 30Hz 최근접 정렬 → 윈도우 → 프레임 전처리 서비스"""

    def __init__(self, params: Optional[PreprocessParams] = None, telemetry_service: Optional[TelemetryService] = None):
        self.params = params or PreprocessParams()
        self.telemetry_service = telemetry_service or TelemetryService()

    def normalize(self, trace: RawTrace) -> RawTrace:
        """조향 [-range, range]° → [-1, 1], 페달 0~100% → [0, 1] (범위 밖은 클리핑 후 카운트)"""
        if trace.normalized:
            return trace

        clipped = 0
        series = []
        for item in trace.series:
            values = item.values_array
            if item.channel is ChannelId.STEERING:
                scaled = values / trace.steering_range_deg
                low, high = -1.0, 1.0
            else:
                scaled = values / settings.pedal_range_pct
                low, high = 0.0, 1.0
            outside = int(np.count_nonzero((scaled < low) | (scaled > high)))
            clipped += outside
            series.append(
                ChannelSeries(
                    channel=item.channel,
                    timestamps=item.timestamps,
                    values=tuple(np.clip(scaled, low, high).tolist()),
                    nominal_rate=item.nominal_rate,
                )
            )

        if clipped:
            logger.warning(f"정규화 중 범위 밖 샘플 {clipped}개를 클리핑했습니다 ({trace.trace_id})")
        return trace.replace(series=tuple(series), normalized=True, clipped_samples=trace.clipped_samples + clipped)

    def resample_nearest(self, trace: RawTrace, target_hz: Optional[int] = None) -> RawTrace:
        """모든 채널을 t_k = k / target_hz 격자에 최근접 이웃으로 정렬 (동률이면 앞 샘플)"""
        target_hz = target_hz or self.params.target_hz
        count = int(math.floor(trace.duration_s * target_hz + 1e-9)) + 1
        grid = np.arange(count) / target_hz

        series = []
        for item in trace.series:
            if len(item) == 0:
                raise PreprocessException(f"빈 채널은 정렬할 수 없습니다: {trace.trace_id}/{item.channel.key}")
            picked = item.values_array[self.nearest_indices(item.times_array, grid)]
            series.append(
                ChannelSeries(
                    channel=item.channel,
                    timestamps=tuple(grid.tolist()),
                    values=tuple(picked.tolist()),
                    nominal_rate=float(target_hz),
                )
            )
        return trace.replace(series=tuple(series))

    @staticmethod
    def nearest_indices(times: np.ndarray, grid: np.ndarray) -> np.ndarray:
        """grid 각 시각에 가장 가까운 times 인덱스 (동률은 앞 인덱스)"""
        right = np.clip(np.searchsorted(times, grid, side="left"), 0, times.size - 1)
        left = np.clip(right - 1, 0, times.size - 1)
        take_left = (grid - times[left]) <= (times[right] - grid)
        return np.where(take_left, left, right)

    def window(
        self,
        trace: RawTrace,
        window_s: Optional[float] = None,
        overlap_s: Optional[float] = None,
    ) -> List[WindowSample]:
        """stride = window_s − overlap_s 간격으로 3×M 윈도우 추출 (남는 꼬리는 버림)"""
        window_s = self.params.window_s if window_s is None else window_s
        overlap_s = self.params.overlap_s if overlap_s is None else overlap_s
        stride_s = window_s - overlap_s
        if stride_s <= 0:
            raise PreprocessException(f"overlap_s({overlap_s})는 window_s({window_s})보다 작아야 합니다")
        if not trace.normalized:
            raise PreprocessException(f"정규화되지 않은 트레이스입니다: {trace.trace_id}")

        rates = {item.nominal_rate for item in trace.series}
        lengths = {len(item) for item in trace.series}
        if len(rates) != 1 or len(lengths) != 1:
            raise PreprocessException(f"채널이 공통 격자로 정렬되지 않았습니다: {trace.trace_id}")
        hz = rates.pop()
        n_samples = lengths.pop()
        width = int(round(window_s * hz))

        n_windows = count_steps(trace.duration_s, window_s, stride_s)
        if n_windows == 0:
            logger.warning(f"트레이스가 윈도우보다 짧습니다 ({trace.trace_id}: {trace.duration_s:.2f}s < {window_s}s)")
            return []

        matrix = np.vstack([item.values_array for item in trace.series])
        windows = []
        for number in range(n_windows):
            start_s = number * stride_s
            first = int(round(start_s * hz))
            if first + width > n_samples:
                break
            end_s = start_s + window_s
            kinds = tuple(dict.fromkeys(
                segment.kind for segment in trace.segments
                if segment.start_s < end_s and segment.end_s > start_s
            ))
            windows.append(
                WindowSample.from_array(
                    matrix[:, first:first + width],
                    label=trace.label.as_int,
                    window_start_s=float(start_s),
                    map_id=trace.map_id,
                    trace_id=trace.trace_id,
                    segment_kinds=kinds,
                )
            )
        return windows

    def frame(
        self,
        sample: WindowSample,
        frame_s: Optional[float] = None,
        stride_s: Optional[float] = None,
    ) -> List[Frame]:
        """윈도우를 frame_s 길이, stride_s 간격의 프레임 R개로 분할"""
        frame_s = self.params.frame_s if frame_s is None else frame_s
        stride_s = self.params.frame_stride_s if stride_s is None else stride_s
        hz = self.params.target_hz
        window_s = sample.length / hz
        if frame_s > window_s + 1e-9:
            raise PreprocessException(f"frame_s({frame_s})가 윈도우 길이({window_s})보다 깁니다")

        width = int(round(frame_s * hz))
        matrix = sample.to_array()
        frames = []
        for number in range(count_steps(window_s, frame_s, stride_s)):
            first = int(round(number * stride_s * hz))
            frames.append(
                Frame(
                    data=tuple(tuple(row) for row in matrix[:, first:first + width].tolist()),
                    frame_index=number + 1,
                )
            )
        return frames

    def prepare_trace(self, trace: RawTrace) -> List[WindowSample]:
        """normalize → resample_nearest → window"""
        aligned = self.resample_nearest(self.normalize(trace), self.params.target_hz)
        return self.window(aligned, self.params.window_s, self.params.overlap_s)

    def build_windows(self, manifest: DatasetManifest, root: Union[str, Path], jobs: int = 1) -> List[WindowSample]:
        """매니페스트 순서대로 모든 트레이스를 윈도우로 변환"""
        root = Path(root)
        paths = [str(root / entry.path) for entry in manifest.entries]
        try:
            if jobs > 1:
                with ProcessPoolExecutor(max_workers=jobs) as executor:
                    chunks = list(executor.map(_prepare_path, paths, [self.params] * len(paths)))
            else:
                chunks = [_prepare_path(path, self.params) for path in paths]
        except SafeDException:
            raise
        except Exception as e:
            logger.error(f"윈도우 생성 실패: {e}")
            raise PreprocessException(f"윈도우 생성에 실패했습니다: {str(e)}")

        windows = [window for chunk in chunks for window in chunk]
        counts = {label.value: sum(1 for w in windows if w.label == label.as_int) for label in TraceLabel}
        logger.info(f"윈도우 {len(windows)}개 생성 ({counts})")
        return windows

    def save_windows(self, windows: List[WindowSample], path: Union[str, Path]) -> Path:
        """윈도우 캐시: .npz 배열 + JSON 인덱스"""
        path = Path(path).with_suffix(".npz")
        if not windows:
            raise PreprocessException("저장할 윈도우가 없습니다.")
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            data=np.stack([w.to_array() for w in windows]),
            label=np.array([w.label for w in windows], dtype=np.int64),
            window_start_s=np.array([w.window_start_s for w in windows], dtype=float),
        )
        index = {
            "count": len(windows),
            "shape": [len(windows), len(windows[0].data), windows[0].length],
            "records": [
                {
                    "trace_id": w.trace_id,
                    "map_id": w.map_id,
                    "segment_kinds": [kind.value for kind in w.segment_kinds],
                }
                for w in windows
            ],
        }
        path.with_suffix(".json").write_text(json.dumps(index, indent=2, ensure_ascii=False), encoding="utf-8")
        logger.info(f"윈도우 캐시 저장: {path} ({len(windows)}개)")
        return path

    def load_windows(self, path: Union[str, Path]) -> List[WindowSample]:
        path = Path(path).with_suffix(".npz")
        try:
            with np.load(path) as arrays:
                data, labels, starts = arrays["data"], arrays["label"], arrays["window_start_s"]
            index = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        except (OSError, KeyError, ValueError) as e:
            raise PreprocessException(f"윈도우 캐시를 읽을 수 없습니다: {path}: {e}")

        records = index["records"]
        if len(records) != data.shape[0]:
            raise PreprocessException(f"윈도우 캐시 인덱스 불일치: {len(records)} != {data.shape[0]}")
        return [
            WindowSample.from_array(
                matrix,
                label=int(label),
                window_start_s=float(start),
                map_id=record["map_id"],
                trace_id=record["trace_id"],
                segment_kinds=tuple(record["segment_kinds"]),
            )
            for matrix, label, start, record in zip(data, labels, starts, records)
        ]


def _prepare_path(path: str, params: PreprocessParams) -> List[WindowSample]:
    service = PreprocessService(params)
    return service.prepare_trace(service.telemetry_service.load_trace(path))
