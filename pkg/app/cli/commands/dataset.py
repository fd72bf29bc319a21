import argparse
import logging
from pathlib import Path
from typing import Any, Dict

from app.cli.common import load_config, resolve_jobs, resolve_out, resolve_seed
from app.core.exceptions import TraceValidationException
from app.models.synth import DatasetConfig
from app.services.preprocess_service import PreprocessService
from app.services.synth_service import SynthService
from app.services.telemetry_service import TelemetryService

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    generate = subparsers.add_parser("generate", parents=parents, help="합성 주행 데이터셋 생성")
    generate.add_argument("--config", default=None, help="데이터셋 설정 JSON")
    generate.set_defaults(handler=cmd_generate)

    preprocess = subparsers.add_parser("preprocess", parents=parents, help="데이터셋 검증 후 윈도우 캐시 생성")
    preprocess.add_argument("--manifest", required=True, help="manifest.json 경로")
    preprocess.set_defaults(handler=cmd_preprocess)


def cmd_generate(args: argparse.Namespace) -> Dict[str, Any]:
    config = load_config(args.config, DatasetConfig)
    seed = resolve_seed(args, config.seed)
    out_dir = resolve_out(args, "dataset")
    manifest, path = SynthService().build_dataset(config, seed, out_dir, resolve_jobs(args))
    return {
        "manifest": str(path),
        "seed": seed,
        "trace_counts": manifest.trace_counts,
        "window_counts": manifest.window_counts,
    }


def cmd_preprocess(args: argparse.Namespace) -> Dict[str, Any]:
    telemetry = TelemetryService()
    manifest_path = Path(args.manifest)
    manifest = telemetry.load_manifest(manifest_path)

    report = telemetry.validate_dataset(manifest, manifest_path.parent)
    if not report.ok:
        for violation in report.violations:
            logger.error(f"검증 위반: {violation}")
        raise TraceValidationException(f"데이터셋 검증 실패: 위반 {len(report.violations)}건 ({report.violations[0]})")

    service = PreprocessService(manifest.preprocessing, telemetry)
    windows = service.build_windows(manifest, manifest_path.parent, resolve_jobs(args))
    out_dir = Path(args.out) if args.out else manifest_path.parent
    path = service.save_windows(windows, out_dir / "windows.npz")
    return {
        "windows": str(path),
        "count": len(windows),
        "window_counts": report.window_counts,
        "rate_stats": report.rate_stats,
    }
