import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict

from app.cli.common import load_config, load_dataset, resolve_jobs, resolve_out, resolve_seed
from app.models.network import ModelConfig
from app.models.training import TrainConfig
from app.services.evaluation_service import EvaluationService
from app.services.model_service import ModelService
from app.services.report_service import ReportService
from app.services.telemetry_service import TelemetryService
from app.services.train_service import TrainService
from app.utils.helpers import config_digest

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    train = subparsers.add_parser("train", parents=parents, help="SAFE-D 학습 (분할 → 학습 → 체크포인트)")
    train.add_argument("--manifest", required=True, help="manifest.json 경로")
    train.add_argument("--config", default=None, help="학습 설정 JSON")
    train.add_argument("--model-config", default=None, help="모델 설정 JSON")
    train.add_argument("--windows", default=None, help="윈도우 캐시 (.npz)")
    train.set_defaults(handler=cmd_train)

    evaluate = subparsers.add_parser("eval", parents=parents, help="체크포인트로 테스트 분할 평가")
    evaluate.add_argument("--checkpoint", required=True, help="체크포인트 파일")
    evaluate.add_argument("--manifest", required=True, help="manifest.json 경로")
    evaluate.add_argument("--windows", default=None, help="윈도우 캐시 (.npz)")
    evaluate.set_defaults(handler=cmd_eval)


def cmd_train(args: argparse.Namespace) -> Dict[str, Any]:
    train_cfg = load_config(args.config, TrainConfig)
    model_cfg = load_config(args.model_config, ModelConfig)
    seed = resolve_seed(args, train_cfg.seed)
    train_cfg = train_cfg.model_copy(update={"seed": seed})
    jobs = resolve_jobs(args)
    out_dir = resolve_out(args, "train")

    service = TrainService()
    manifest, windows = load_dataset(args.manifest, args.windows, jobs)
    train_ids, test_ids = service.split_dataset(manifest, train_cfg.split_ratio, seed, train_cfg.stratify_by_map)
    train_windows, test_windows = service.split_windows(windows, train_ids, test_ids)
    TelemetryService().save_manifest(service.record_split(manifest, train_ids, test_ids, train_cfg.split_ratio), args.manifest)
    (out_dir / "split.json").write_text(
        json.dumps({"seed": seed, "train": train_ids, "test": test_ids}, indent=2, ensure_ascii=False),
        encoding="utf-8",
    )

    summary: Dict[str, Any] = {}
    if train_cfg.grid:
        grid = service.grid_search(model_cfg, train_cfg, train_windows, test_windows, jobs=jobs)
        (out_dir / "grid.json").write_text(grid.model_dump_json(indent=2), encoding="utf-8")
        model_cfg = ModelConfig.model_validate(grid.model_config_best)
        train_cfg = train_cfg.model_copy(update={k: v for k, v in grid.best_params.items() if k in TrainConfig.model_fields})
        summary["grid_best"] = grid.best_params

    checkpoint = out_dir / "checkpoint.safed"
    _, history = service.train_model(model_cfg, train_cfg, train_windows, test_windows, checkpoint)
    (out_dir / "history.json").write_text(history.model_dump_json(indent=2), encoding="utf-8")
    metrics = {
        "test_accuracy": history.best_test_accuracy,
        "best_epoch": history.best_epoch,
        "train_windows": len(train_windows),
        "test_windows": len(test_windows),
        "config_digest": config_digest({"model": model_cfg.model_dump(mode="json"), "train": train_cfg.model_dump(mode="json")}),
    }
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True), encoding="utf-8")
    summary.update({"checkpoint": str(checkpoint), **metrics})
    return summary


def cmd_eval(args: argparse.Namespace) -> Dict[str, Any]:
    model, header = ModelService().load_checkpoint(args.checkpoint)
    stored = header.get("extra", {}).get("train_config", {})
    train_cfg = TrainConfig.model_validate(stored) if stored else TrainConfig()
    seed = resolve_seed(args, header.get("seed"))
    out_dir = resolve_out(args, "eval")

    service = TrainService()
    manifest, windows = load_dataset(args.manifest, args.windows, resolve_jobs(args))
    if manifest.split and args.seed is None:
        # 학습 때 기록된 분할을 그대로 사용
        train_ids, test_ids = service.stored_split(manifest)
    else:
        train_ids, test_ids = service.split_dataset(manifest, train_cfg.split_ratio, seed, train_cfg.stratify_by_map)
    _, test_windows = service.split_windows(windows, train_ids, test_ids)

    preds = service.evaluate(model, test_windows)
    digests = {"checkpoint": config_digest(header.get("config", {}))}
    report = EvaluationService(service).evaluate_overall(preds, test_windows, seed, digests)
    files = ReportService().emit_report(report, out_dir)
    return {
        "average_accuracy": report.average_accuracy,
        "per_map_accuracy": report.per_map_accuracy,
        "report": str(files[0]),
    }
