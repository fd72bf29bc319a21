import json
import logging
from collections import Counter, defaultdict
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
from pydantic import ValidationError

from app.core.exceptions import (
    ConfigSchemaException,
    SafeDException,
    TraceParseException,
    TraceValidationException,
    describe_validation_error,
)
from app.models.telemetry import (
    ChannelId,
    ChannelSeries,
    DatasetManifest,
    RawTrace,
    TraceLabel,
    ValidationReport,
)
from app.utils.helpers import count_steps

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    """트레이스 파일의 JSON 사이드카 경로"""
    return Path(path).with_suffix(".meta.json")


class TelemetryService:
    """트레이스/매니페스트 파일 입출력 및 검증 서비스"""

    def save_trace(self, trace: RawTrace, path: PathLike) -> Path:
        """트레이스를 JSONL(샘플당 한 줄) + JSON 사이드카로 저장"""
        trace = self._revalidate(trace)
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", encoding="utf-8") as handle:
                for series in trace.series:
                    key = series.channel.key
                    for t, value in zip(series.timestamps, series.values):
                        handle.write(json.dumps({"t": t, "channel": key, "value": value}, allow_nan=False))
                        handle.write("\n")
            sidecar = {
                "trace_id": trace.trace_id,
                "segments": [segment.model_dump(mode="json") for segment in trace.segments],
                "label": trace.label.value,
                "map_id": trace.map_id,
                "provenance": trace.provenance,
                "seed": trace.seed,
                "nominal_rates": {series.channel.key: series.nominal_rate for series in trace.series},
                "steering_range_deg": trace.steering_range_deg,
                "normalized": trace.normalized,
                "clipped_samples": trace.clipped_samples,
            }
            sidecar_path(path).write_text(json.dumps(sidecar, indent=2, ensure_ascii=False), encoding="utf-8")
        except OSError as e:
            logger.error(f"트레이스 저장 실패 ({path}): {e}")
            raise TraceValidationException(f"트레이스를 저장할 수 없습니다: {path}: {e}")

        logger.debug(f"트레이스 저장 완료: {path} ({sum(len(s) for s in trace.series)} samples)")
        return path

    def load_trace(self, path: PathLike) -> RawTrace:
        """JSONL + 사이드카에서 트레이스 복원 (불변식 검증 포함)"""
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            logger.error(f"트레이스 읽기 실패 ({path}): {e}")
            raise TraceParseException(f"트레이스 파일을 읽을 수 없습니다: {path}: {e}")

        if not any(line.strip() for line in lines):
            raise TraceParseException(f"빈 트레이스 파일입니다: {path}", line=1)

        samples: Dict[ChannelId, List[tuple]] = defaultdict(list)
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                channel = ChannelId.from_key(record["channel"])
                samples[channel].append((float(record["t"]), float(record["value"])))
            except (ValueError, KeyError, TypeError) as e:
                logger.error(f"트레이스 레코드 파싱 실패 ({path}:{number}): {e}")
                raise TraceParseException(f"잘못된 레코드입니다: {path}: {e}", line=number)

        try:
            meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            logger.error(f"사이드카 읽기 실패 ({path}): {e}")
            raise TraceParseException(f"사이드카 파일을 읽을 수 없습니다: {sidecar_path(path)}: {e}")

        try:
            rates = meta["nominal_rates"]
            series = tuple(
                ChannelSeries(
                    channel=channel,
                    timestamps=tuple(t for t, _ in samples.get(channel, [])),
                    values=tuple(v for _, v in samples.get(channel, [])),
                    nominal_rate=rates[channel.key],
                )
                for channel in ChannelId
            )
            return RawTrace(
                trace_id=meta["trace_id"],
                series=series,
                segments=tuple(meta["segments"]),
                map_id=meta["map_id"],
                label=meta["label"],
                provenance=meta.get("provenance", "healthy"),
                seed=meta.get("seed", 0),
                steering_range_deg=meta.get("steering_range_deg", 450.0),
                normalized=meta.get("normalized", False),
                clipped_samples=meta.get("clipped_samples", 0),
            )
        except ValidationError as e:
            logger.error(f"트레이스 검증 실패 ({path}): {e}")
            raise TraceValidationException(f"{path}: {describe_validation_error(e)}")
        except KeyError as e:
            raise TraceParseException(f"사이드카에 필수 키가 없습니다: {e}")

    def save_manifest(self, manifest: DatasetManifest, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"매니페스트 저장: {path}")
        return path

    def load_manifest(self, path: PathLike) -> DatasetManifest:
        path = Path(path)
        try:
            return DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigSchemaException(f"매니페스트를 읽을 수 없습니다: {path}: {e}")
        except ValidationError as e:
            raise ConfigSchemaException(f"매니페스트 스키마 위반: {describe_validation_error(e)}")

    def validate_dataset(self, manifest: DatasetManifest, root: PathLike = ".") -> ValidationReport:
        """매니페스트의 모든 트레이스를 검증 (위반 사항은 예외가 아닌 리포트 내용)"""
        root = Path(root)
        violations: List[str] = []
        rates: Dict[str, List[float]] = defaultdict(list)
        params = manifest.preprocessing

        listed_traces = Counter(entry.label.value for entry in manifest.entries)
        listed_windows: Counter = Counter()
        for entry in manifest.entries:
            listed_windows[entry.label.value] += entry.n_windows

        for entry in manifest.entries:
            try:
                trace = self.load_trace(root / entry.path)
            except SafeDException as e:
                violations.append(f"{entry.trace_id}: {e.message}")
                continue

            if trace.label != entry.label:
                violations.append(f"{entry.trace_id}: 라벨 불일치 ({trace.label.value} != {entry.label.value})")
            if trace.map_id != entry.map_id:
                violations.append(f"{entry.trace_id}: 맵 불일치 ({trace.map_id} != {entry.map_id})")
            expected = count_steps(trace.duration_s, params.window_s, params.stride_s)
            if expected != entry.n_windows:
                violations.append(f"{entry.trace_id}: 윈도우 수 불일치 (manifest {entry.n_windows}, 계산 {expected})")

            for series in trace.series:
                times = series.times_array
                if times.size > 1:
                    rates[series.channel.key].append(float((times.size - 1) / (times[-1] - times[0])))

        for label in TraceLabel:
            claimed = manifest.trace_counts.get(label.value, 0)
            if claimed != listed_traces.get(label.value, 0):
                violations.append(
                    f"트레이스 수 불일치 ({label.value}: 선언 {claimed}, 목록 {listed_traces.get(label.value, 0)})"
                )
            if manifest.window_counts:
                claimed_windows = manifest.window_counts.get(label.value, 0)
                if claimed_windows != listed_windows.get(label.value, 0):
                    violations.append(
                        f"윈도우 수 불일치 ({label.value}: 선언 {claimed_windows}, 목록 {listed_windows.get(label.value, 0)})"
                    )

        violations.extend(self._split_violations(manifest))

        rate_stats = {
            key: {"min": float(np.min(values)), "max": float(np.max(values)), "mean": float(np.mean(values))}
            for key, values in sorted(rates.items())
        }
        report = ValidationReport(
            ok=not violations,
            trace_counts={label.value: listed_traces.get(label.value, 0) for label in TraceLabel},
            window_counts={label.value: listed_windows.get(label.value, 0) for label in TraceLabel},
            rate_stats=rate_stats,
            violations=violations,
        )
        if violations:
            logger.warning(f"데이터셋 검증 위반 {len(violations)}건")
        else:
            logger.info(f"데이터셋 검증 통과: {report.trace_counts}")
        return report

    @staticmethod
    def _split_violations(manifest: DatasetManifest) -> List[str]:
        """기록된 분할: 모든 트레이스가 한쪽에만 속하고 학습 트레이스 수가 ratio·n과 1 이내"""
        if not manifest.split:
            return []
        listed = [entry.trace_id for entry in manifest.entries]
        violations = []
        unassigned = [tid for tid in listed if tid not in manifest.split]
        unknown = sorted(set(manifest.split) - set(listed))
        if unassigned:
            violations.append(f"분할에 없는 트레이스: {unassigned[:5]}")
        if unknown:
            violations.append(f"목록에 없는 분할 트레이스: {unknown[:5]}")
        if manifest.split_ratio is not None and listed:
            n_train = sum(1 for tid in listed if manifest.split.get(tid) == "train")
            expected = manifest.split_ratio * len(listed)
            if abs(n_train - expected) > 1:
                violations.append(
                    f"분할 비율 불일치 (학습 {n_train}/{len(listed)}, 기대 {expected:.2f} ± 1)"
                )
        return violations

    def _revalidate(self, trace: RawTrace) -> RawTrace:
        try:
            return RawTrace.model_validate(trace.model_dump())
        except ValidationError as e:
            logger.error(f"트레이스 검증 실패 ({getattr(trace, 'trace_id', '?')}): {e}")
            raise TraceValidationException(describe_validation_error(e))
