import argparse
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, ValidationError

from app.core.config import settings
from app.core.exceptions import ConfigSchemaException, describe_validation_error
from app.models.telemetry import DatasetManifest, WindowSample
from app.services.preprocess_service import PreprocessService
from app.services.telemetry_service import TelemetryService

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def common_options() -> argparse.ArgumentParser:
    """모든 하위 명령 공통 플래그"""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--out", default=None, help="출력 디렉터리 (없으면 생성)")
    parent.add_argument("--seed", type=int, default=None, help="전역 시드 (설정 파일보다 우선)")
    parent.add_argument("--jobs", type=int, default=None, help="병렬 작업 수")
    parent.add_argument("--json", action="store_true", help="요약을 JSON으로 출력")
    return parent


def read_json(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigSchemaException(f"설정 파일을 읽을 수 없습니다: {path}: {e}")
    except ValueError as e:
        raise ConfigSchemaException(f"설정 파일이 JSON이 아닙니다: {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigSchemaException(f"설정 파일 최상위는 객체여야 합니다: {path}")
    return data


def load_config(path: Optional[str], model: Type[ConfigT], **overrides) -> ConfigT:
    """JSON 설정 파일을 pydantic 모델로 검증 (오류 메시지에 키 경로 포함)"""
    data = read_json(path)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigSchemaException(f"{path or model.__name__}: {describe_validation_error(e)}")


def resolve_seed(args: argparse.Namespace, config_seed: Optional[int] = None) -> int:
    if args.seed is not None:
        return args.seed
    if config_seed is not None:
        return config_seed
    return settings.default_seed


def resolve_jobs(args: argparse.Namespace) -> int:
    return max(1, args.jobs if args.jobs is not None else settings.jobs)


def resolve_out(args: argparse.Namespace, default: str) -> Path:
    out = Path(args.out or Path(settings.output_dir) / default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_dataset(
    manifest_path: str,
    windows_path: Optional[str] = None,
    jobs: int = 1,
) -> Tuple[DatasetManifest, List[WindowSample]]:
    """매니페스트와 윈도우 (캐시가 있으면 캐시, 없으면 트레이스에서 생성)"""
    telemetry = TelemetryService()
    manifest = telemetry.load_manifest(manifest_path)
    preprocess = PreprocessService(manifest.preprocessing, telemetry)
    if windows_path:
        return manifest, preprocess.load_windows(windows_path)
    return manifest, preprocess.build_windows(manifest, Path(manifest_path).parent, jobs)
