import logging
import math
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import lfilter

from app.core.config import settings
from app.core.exceptions import SafeDException, SynthesisException
from app.models.synth import (
    BrownianConfig,
    ChannelRates,
    DatasetConfig,
    DriverProfile,
    RoutePlan,
    RouteSegment,
    SluggishConfig,
    SpikeConfig,
    SymptomConfig,
    TremorConfig,
)
from app.models.telemetry import (
    ChannelId,
    ChannelSeries,
    DatasetManifest,
    ManifestEntry,
    RawTrace,
    Segment,
    SegmentKind,
    TraceLabel,
)
from app.services.telemetry_service import TelemetryService
from app.utils.helpers import config_digest, count_steps, derive_seed, make_rng, smoothstep

logger = logging.getLogger(__name__)

# 맵 템플릿: (구간 종류, 상대 길이, 목표 조향각[도])
# urban은 회전 위주, rural은 직선 위주, mixed는 균형
MAP_TEMPLATES: Dict[str, List[Tuple[SegmentKind, float, float]]] = {
    "urban": [
        (SegmentKind.STRAIGHT, 1.0, 0.0),
        (SegmentKind.TURN_RIGHT, 1.3, 170.0),
        (SegmentKind.STRAIGHT, 0.8, 0.0),
        (SegmentKind.TURN_LEFT, 1.3, -170.0),
        (SegmentKind.U_TURN, 1.4, 400.0),
    ],
    "rural": [
        (SegmentKind.STRAIGHT, 3.0, 0.0),
        (SegmentKind.TURN_RIGHT, 1.0, 110.0),
        (SegmentKind.STRAIGHT, 2.5, 0.0),
        (SegmentKind.TURN_LEFT, 1.0, -110.0),
    ],
    "mixed": [
        (SegmentKind.STRAIGHT, 1.5, 0.0),
        (SegmentKind.TURN_RIGHT, 1.2, 160.0),
        (SegmentKind.STRAIGHT, 1.5, 0.0),
        (SegmentKind.TURN_LEFT, 1.2, -160.0),
        (SegmentKind.STRAIGHT, 1.0, 0.0),
        (SegmentKind.U_TURN, 1.2, -380.0),
    ],
}

DEFAULT_ROUTE_DURATION_S = 31.0
PEDAL_BLEND_S = 0.5

MapSpec = Union[str, Sequence[Union[RouteSegment, dict, tuple]]]


def channel_scale(channel: ChannelId, steering_range_deg: float) -> float:
    """정규화 단위 → 원시 단위 배율"""
    if channel is ChannelId.STEERING:
        return steering_range_deg
    return settings.pedal_range_pct


def channel_bounds(channel: ChannelId, steering_range_deg: float) -> Tuple[float, float]:
    """채널의 원시 물리 범위"""
    if channel is ChannelId.STEERING:
        return -steering_range_deg, steering_range_deg
    return 0.0, settings.pedal_range_pct


class SynthService:
    """정상 주행 합성 및 파킨슨 운동 증상 주입 서비스"""

    def __init__(self, telemetry_service: Optional[TelemetryService] = None):
        self.telemetry_service = telemetry_service or TelemetryService()

    # ------------------------------------------------------------------
    # 경로 / 정상 주행
    # ------------------------------------------------------------------
    def generate_route(
        self,
        map_spec: MapSpec,
        seed: int,
        total_duration_s: float = DEFAULT_ROUTE_DURATION_S,
    ) -> RoutePlan:
        """맵 템플릿(urban/rural/mixed) 또는 사용자 구간 목록으로 경로 생성"""
        if not isinstance(map_spec, str):
            segments = [self._coerce_segment(item) for item in map_spec]
            if not segments:
                raise SynthesisException("사용자 구간 목록이 비어 있습니다.")
            return RoutePlan(map_id="custom", segments=segments)

        template = MAP_TEMPLATES.get(map_spec)
        if template is None:
            raise SynthesisException(f"알 수 없는 맵입니다: {map_spec} (허용: {sorted(MAP_TEMPLATES)})")

        rng = make_rng(seed)
        weights = np.array([weight for _, weight, _ in template]) * rng.uniform(0.8, 1.2, len(template))
        targets = np.array([target for _, _, target in template]) * rng.uniform(0.85, 1.15, len(template))
        durations = weights / weights.sum() * total_duration_s

        segments = [
            RouteSegment(kind=kind, duration_s=float(duration), target_deg=float(target))
            for (kind, _, _), duration, target in zip(template, durations, targets)
        ]
        return RoutePlan(map_id=map_spec, segments=segments)

    def synthesize_healthy(
        self,
        route: RoutePlan,
        profile: DriverProfile,
        seed: int,
        rates: Optional[ChannelRates] = None,
        steering_range_deg: float = settings.steering_range_deg,
        trace_id: Optional[str] = None,
    ) -> RawTrace:
        """정상 운전자 주행 합성 (직선: 0 근처 조향, 회전: ramp-hold-ramp, 회전 진입 시 제동)"""
        rates = rates or ChannelRates()
        rng = make_rng(seed)
        segments = self._tile_segments(route)
        total = segments[-1].end_s
        targets = np.array([segment.target_deg for segment in route.segments]) / steering_range_deg

        series = []
        for channel in ChannelId:
            rate = rates.rate_for(channel)
            n = int(math.floor(total * rate + 1e-9)) + 1
            times = np.arange(n) / rate
            index = np.searchsorted([s.end_s for s in segments[:-1]], times, side="right")

            if channel is ChannelId.STEERING:
                base = self._steering_profile(times, index, segments, targets, profile.steering_tau_s)
            elif channel is ChannelId.THROTTLE:
                base = self._throttle_profile(times, index, segments, profile)
            else:
                base = self._brake_profile(times, index, segments, profile)

            jitter = self._jitter(rng, n, profile.jitter_for(channel), profile.jitter_tau_s, rate)
            low, high = channel_bounds(channel, steering_range_deg)
            values = np.clip((base + jitter) * channel_scale(channel, steering_range_deg), low, high)
            series.append(
                ChannelSeries(
                    channel=channel,
                    timestamps=tuple(times.tolist()),
                    values=tuple(values.tolist()),
                    nominal_rate=rate,
                )
            )

        return RawTrace(
            trace_id=trace_id or f"{route.map_id}-healthy-{seed}",
            series=tuple(series),
            segments=tuple(segments),
            map_id=route.map_id,
            label=TraceLabel.HEALTHY,
            provenance="healthy",
            seed=seed,
            steering_range_deg=steering_range_deg,
        )

    # ------------------------------------------------------------------
    # 증상 주입
    # ------------------------------------------------------------------
    def inject_tremor(self, trace: RawTrace, cfg: SymptomConfig, seed: int) -> RawTrace:
        """직선 구간에 4~6Hz 연속 떨림(사인파) 주입"""
        self._require_healthy(trace)
        tremor = cfg.tremor
        rng = make_rng(seed)
        updated = self._apply_tremor(trace, tremor, self._channels(tremor.channels), rng)
        return self._mark_abnormal(trace, updated, f"tremor:{config_digest(tremor.model_dump())}")

    def inject_sudden(self, trace: RawTrace, cfg: SymptomConfig, seed: int) -> RawTrace:
        """비직선 구간에 스파이크 + 브라운 노이즈(급격한 변화) 주입"""
        self._require_healthy(trace)
        rng = make_rng(seed)
        updated = self._apply_sudden(
            trace,
            cfg.spike,
            cfg.brownian,
            self._channels(cfg.spike.channels),
            self._channels(cfg.brownian.channels),
            rng,
        )
        digest = config_digest({"spike": cfg.spike.model_dump(), "brownian": cfg.brownian.model_dump()})
        return self._mark_abnormal(trace, updated, f"sudden:{digest}")

    def inject_sluggish(self, trace: RawTrace, cfg: SymptomConfig, seed: int) -> RawTrace:
        """비직선 구간 조작을 1차 지연시켜 느린 전이(서동/경직) 재현"""
        self._require_healthy(trace)
        rng = make_rng(seed)
        updated = self._apply_sluggish(trace, cfg.sluggish, self._channels(cfg.sluggish.channels), rng)
        return self._mark_abnormal(trace, updated, f"sluggish:{config_digest(cfg.sluggish.model_dump())}")

    def inject_symptoms(self, trace: RawTrace, cfg: SymptomConfig, seed: int) -> RawTrace:
        """떨림 → 급변 → (선택) 느린 전이를 독립 시드로 차례로 적용"""
        self._require_healthy(trace)
        choose = make_rng(seed, 0)
        tremor_channels = self._pick(cfg.tremor.channels, cfg.channels_per_trace, choose)
        spike_channels = self._pick(cfg.spike.channels, cfg.channels_per_trace, choose)
        brownian_channels = self._pick(cfg.brownian.channels, cfg.channels_per_trace, choose)

        updated = self._apply_tremor(trace, cfg.tremor, tremor_channels, make_rng(seed, 1))
        updated = self._apply_sudden(
            updated, cfg.spike, cfg.brownian, spike_channels, brownian_channels, make_rng(seed, 2)
        )
        if cfg.sluggish.enabled:
            sluggish_channels = self._pick(cfg.sluggish.channels, cfg.channels_per_trace, choose)
            updated = self._apply_sluggish(updated, cfg.sluggish, sluggish_channels, make_rng(seed, 3))

        return self._mark_abnormal(trace, updated, f"symptoms:{config_digest(cfg.model_dump())}")

    @staticmethod
    def draw_spike_onsets(duration_s: float, rate: float, rng: np.random.Generator) -> np.ndarray:
        """구간 [0, duration_s) 내 포아송 과정 발생 시각"""
        count = rng.poisson(rate * duration_s) if rate > 0 else 0
        return np.sort(rng.uniform(0.0, duration_s, size=count))

    # ------------------------------------------------------------------
    # 데이터셋
    # ------------------------------------------------------------------
    def build_dataset(
        self,
        config: DatasetConfig,
        seed: int,
        out_dir: Union[str, Path],
        jobs: int = 1,
    ) -> Tuple[DatasetManifest, Path]:
        """세 맵에 대해 정상/이상 트레이스와 매니페스트 생성"""
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            marker = out_dir / ".write_check"
            marker.write_text("", encoding="utf-8")
            marker.unlink()
        except OSError as e:
            logger.error(f"출력 디렉터리 쓰기 불가 ({out_dir}): {e}")
            raise SynthesisException(f"출력 디렉터리에 쓸 수 없습니다: {out_dir}: {e}")

        tasks = []
        for map_index, map_id in enumerate(config.maps):
            counts = config.counts[map_id]
            for label in TraceLabel:
                for index in range(getattr(counts, label.value)):
                    trace_seed = derive_seed(seed, map_index, label.as_int, index)
                    tasks.append((map_id, label.value, index, trace_seed))

        logger.info(f"데이터셋 생성 시작: 트레이스 {len(tasks)}개 (jobs={jobs})")
        try:
            if jobs > 1:
                with ProcessPoolExecutor(max_workers=jobs) as executor:
                    entries = list(executor.map(_build_trace_entry, tasks, [config] * len(tasks), [str(out_dir)] * len(tasks)))
            else:
                entries = [_build_trace_entry(task, config, str(out_dir)) for task in tasks]
        except SafeDException:
            raise
        except Exception as e:
            logger.error(f"데이터셋 생성 실패: {e}")
            raise SynthesisException(f"데이터셋 생성에 실패했습니다: {str(e)}")

        trace_counts = {label.value: 0 for label in TraceLabel}
        window_counts = {label.value: 0 for label in TraceLabel}
        for entry in entries:
            trace_counts[entry.label.value] += 1
            window_counts[entry.label.value] += entry.n_windows

        manifest = DatasetManifest(
            entries=entries,
            trace_counts=trace_counts,
            window_counts=window_counts,
            seed=seed,
            preprocessing=config.preprocessing,
            created_at=datetime.now().isoformat(timespec="seconds"),
        )
        path = self.telemetry_service.save_manifest(manifest, out_dir / "manifest.json")
        logger.info(f"데이터셋 생성 완료: 트레이스 {trace_counts}, 윈도우 {window_counts}")
        return manifest, path

    def generate_trace(self, map_id: str, label: TraceLabel, index: int, trace_seed: int, config: DatasetConfig) -> RawTrace:
        """데이터셋 한 칸(맵/라벨/번호)에 해당하는 트레이스 생성"""
        trace_id = f"{map_id}-{label.value}-{index:04d}"
        route = self.generate_route(map_id, derive_seed(trace_seed, 0), config.route_duration_s)
        trace = self.synthesize_healthy(
            route,
            config.profile,
            derive_seed(trace_seed, 1),
            rates=config.rates,
            steering_range_deg=config.steering_range_deg,
            trace_id=trace_id,
        )
        if label is TraceLabel.ABNORMAL:
            trace = self.inject_symptoms(trace, config.symptoms, derive_seed(trace_seed, 2))
        return trace

    # ------------------------------------------------------------------
    # 내부 구현
    # ------------------------------------------------------------------
    def _apply_tremor(
        self, trace: RawTrace, tremor: TremorConfig, channels: Iterable[ChannelId], rng: np.random.Generator
    ) -> RawTrace:
        freq = rng.uniform(tremor.freq_min_hz, tremor.freq_max_hz)
        changes = {}
        for channel in channels:
            series = trace.channel(channel)
            times = series.times_array
            scale = channel_scale(channel, trace.steering_range_deg)
            straight = trace.straight_mask(times)
            phase = rng.uniform(0.0, 2.0 * np.pi)

            peak_to_peak = self._straight_peak_to_peak(trace, series) / scale
            amplitude = tremor.amplitude_scale * max(peak_to_peak, tremor.min_peak_to_peak)
            delta = np.where(straight, amplitude * np.sin(2.0 * np.pi * freq * times + phase), 0.0)
            changes[channel] = series.values_array + delta * scale
        return self._with_values(trace, changes)

    def _apply_sudden(
        self,
        trace: RawTrace,
        spike: SpikeConfig,
        brownian: BrownianConfig,
        spike_channels: Iterable[ChannelId],
        brownian_channels: Iterable[ChannelId],
        rng: np.random.Generator,
    ) -> RawTrace:
        spike_channels = list(spike_channels)
        brownian_channels = list(brownian_channels)
        changes = {}
        for channel in sorted(set(spike_channels) | set(brownian_channels)):
            series = trace.channel(channel)
            times = series.times_array
            scale = channel_scale(channel, trace.steering_range_deg)
            segment_index = trace.segment_index(times)
            delta = np.zeros_like(times)

            for number, segment in enumerate(trace.segments):
                if segment.kind.is_straight:
                    continue
                positions = np.flatnonzero(segment_index == number)
                if positions.size == 0:
                    continue

                if channel in spike_channels:
                    for onset in self.draw_spike_onsets(segment.duration_s, spike.rate_per_s, rng):
                        magnitude = rng.uniform(spike.magnitude_min, spike.magnitude_max) * rng.choice((-1.0, 1.0))
                        width = int(rng.integers(spike.duration_min, spike.duration_max + 1))
                        first = int(np.searchsorted(times[positions], segment.start_s + onset, side="left"))
                        covered = positions[first:first + width]
                        ramp = 1.0 - np.abs(2.0 * (np.arange(width) + 0.5) / width - 1.0)
                        delta[covered] += magnitude * ramp[: covered.size]

                if channel in brownian_channels:
                    steps = rng.normal(0.0, brownian.step_std, size=positions.size)
                    delta[positions] += np.cumsum(steps)

            changes[channel] = series.values_array + delta * scale
        return self._with_values(trace, changes)

    def _apply_sluggish(
        self, trace: RawTrace, sluggish: SluggishConfig, channels: Iterable[ChannelId], rng: np.random.Generator
    ) -> RawTrace:
        changes = {}
        for channel in channels:
            series = trace.channel(channel)
            times = series.times_array
            values = series.values_array.copy()
            segment_index = trace.segment_index(times)
            dt = 1.0 / series.nominal_rate

            for number, segment in enumerate(trace.segments):
                if segment.kind.is_straight:
                    continue
                positions = np.flatnonzero(segment_index == number)
                if positions.size == 0:
                    continue
                tau = rng.uniform(sluggish.lag_min_s, sluggish.lag_max_s)
                alpha = dt / (tau + dt)
                segment_values = values[positions]
                values[positions], _ = lfilter(
                    [alpha], [1.0, alpha - 1.0], segment_values, zi=[(1.0 - alpha) * segment_values[0]]
                )
            changes[channel] = values
        return self._with_values(trace, changes)

    def _with_values(self, trace: RawTrace, changes: Dict[ChannelId, np.ndarray]) -> RawTrace:
        if not changes:
            return trace
        series = []
        for item in trace.series:
            if item.channel in changes:
                low, high = channel_bounds(item.channel, trace.steering_range_deg)
                values = np.clip(changes[item.channel], low, high)
                item = ChannelSeries(
                    channel=item.channel,
                    timestamps=item.timestamps,
                    values=tuple(values.tolist()),
                    nominal_rate=item.nominal_rate,
                )
            series.append(item)
        return trace.replace(series=tuple(series))

    def _mark_abnormal(self, original: RawTrace, updated: RawTrace, provenance: str) -> RawTrace:
        logger.debug(f"증상 주입: {original.trace_id} ({provenance})")
        return updated.replace(label=TraceLabel.ABNORMAL, provenance=provenance)

    @staticmethod
    def _straight_peak_to_peak(trace: RawTrace, series: ChannelSeries) -> float:
        """직선 구간별 peak-to-peak 중 최댓값 (원시 단위)"""
        times = series.times_array
        values = series.values_array
        segment_index = trace.segment_index(times)
        best = 0.0
        for number, segment in enumerate(trace.segments):
            if not segment.kind.is_straight:
                continue
            part = values[segment_index == number]
            if part.size:
                best = max(best, float(np.ptp(part)))
        return best

    @staticmethod
    def _require_healthy(trace: RawTrace) -> None:
        if trace.label is not TraceLabel.HEALTHY:
            raise SynthesisException(f"정상 라벨 트레이스에만 증상을 주입할 수 있습니다: {trace.trace_id}")
        if trace.normalized:
            raise SynthesisException(f"증상 주입은 원시 단위 트레이스에서만 가능합니다: {trace.trace_id}")

    @staticmethod
    def _channels(keys: Iterable[str]) -> List[ChannelId]:
        return sorted(ChannelId.from_key(key) for key in keys)

    def _pick(self, keys: List[str], count: Optional[int], rng: np.random.Generator) -> List[ChannelId]:
        channels = self._channels(keys)
        if count is None or count >= len(channels):
            return channels
        chosen = rng.choice(len(channels), size=count, replace=False)
        return sorted(channels[int(i)] for i in chosen)

    @staticmethod
    def _coerce_segment(item) -> RouteSegment:
        if isinstance(item, RouteSegment):
            return item
        if isinstance(item, dict):
            return RouteSegment(**item)
        kind, duration, *rest = item
        return RouteSegment(kind=kind, duration_s=duration, target_deg=rest[0] if rest else 0.0)

    @staticmethod
    def _tile_segments(route: RoutePlan) -> List[Segment]:
        segments = []
        start = 0.0
        for item in route.segments:
            end = start + item.duration_s
            segments.append(Segment(start_s=start, end_s=end, kind=item.kind))
            start = end
        return segments

    @staticmethod
    def _jitter(rng: np.random.Generator, n: int, std: float, tau_s: float, rate: float) -> np.ndarray:
        """정상 상태 분산이 std²인 AR(1) 흔들림"""
        noise = rng.standard_normal(n + 1)
        if std == 0:
            return np.zeros(n)
        a = math.exp(-1.0 / (tau_s * rate))
        path, _ = lfilter([math.sqrt(1.0 - a * a)], [1.0, -a], noise[1:], zi=[a * noise[0]])
        return std * path

    @staticmethod
    def _steering_profile(times, index, segments, targets, tau_s) -> np.ndarray:
        base = np.zeros_like(times)
        for number, segment in enumerate(segments):
            if segment.kind.is_straight:
                continue
            mask = index == number
            ramp = min(tau_s, segment.duration_s / 3.0)
            rise = smoothstep((times[mask] - segment.start_s) / ramp)
            fall = smoothstep((segment.end_s - times[mask]) / ramp)
            base[mask] = targets[number] * rise * fall
        return base

    @staticmethod
    def _throttle_profile(times, index, segments, profile: DriverProfile) -> np.ndarray:
        levels = np.array([
            (profile.cruise_throttle_pct if s.kind.is_straight else profile.turn_throttle_pct) / settings.pedal_range_pct
            for s in segments
        ])
        previous = np.concatenate([[levels[0]], levels[:-1]])
        starts = np.array([s.start_s for s in segments])
        blend = smoothstep((times - starts[index]) / PEDAL_BLEND_S)
        return previous[index] + (levels[index] - previous[index]) * blend

    @staticmethod
    def _brake_profile(times, index, segments, profile: DriverProfile) -> np.ndarray:
        base = np.zeros_like(times)
        peak = profile.brake_peak_pct / settings.pedal_range_pct
        for number, segment in enumerate(segments):
            if segment.kind.is_straight:
                continue
            mask = index == number
            width = min(profile.brake_duration_s, segment.duration_s)
            elapsed = times[mask] - segment.start_s
            half = width / 2.0
            bump = smoothstep(elapsed / half) * smoothstep((width - elapsed) / half)
            base[mask] = peak * bump
        return base


def _build_trace_entry(task: tuple, config: DatasetConfig, out_dir: str) -> ManifestEntry:
    """프로세스 풀 작업 단위: 트레이스 하나 생성 후 저장"""
    map_id, label_value, index, trace_seed = task
    label = TraceLabel(label_value)
    service = SynthService()
    trace = service.generate_trace(map_id, label, index, trace_seed, config)
    relative = Path("traces") / map_id / f"{trace.trace_id}.jsonl"
    service.telemetry_service.save_trace(trace, Path(out_dir) / relative)
    params = config.preprocessing
    return ManifestEntry(
        trace_id=trace.trace_id,
        path=relative.as_posix(),
        label=label,
        map_id=map_id,
        duration_s=trace.duration_s,
        n_windows=count_steps(trace.duration_s, params.window_s, params.stride_s),
    )
