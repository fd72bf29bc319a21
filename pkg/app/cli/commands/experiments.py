import argparse
from pathlib import Path
from typing import Any, Dict

from app.cli.common import load_config, load_dataset, read_json, resolve_jobs, resolve_out
from app.models.evaluation import AblationSpec
from app.services.acceptance_service import AcceptanceService
from app.services.evaluation_service import EvaluationService
from app.services.report_service import ReportService


def register(subparsers, parents) -> None:
    ablate = subparsers.add_parser("ablate", parents=parents, help="어블레이션 실험 실행 및 리포트 출력")
    ablate.add_argument("--config", required=True, help="어블레이션 설정 JSON")
    ablate.add_argument("--manifest", required=True, help="manifest.json 경로")
    ablate.add_argument("--windows", default=None, help="윈도우 캐시 (.npz)")
    ablate.add_argument("--model-config", default=None, help="모델 설정 JSON")
    ablate.add_argument("--train-config", default=None, help="학습 설정 JSON")
    ablate.set_defaults(handler=cmd_ablate)

    report = subparsers.add_parser("report", parents=parents, help="기존 report.json 다시 출력")
    report.add_argument("--report", required=True, help="report.json 경로")
    report.set_defaults(handler=cmd_report)

    acceptance = subparsers.add_parser("acceptance", parents=parents, help="합성 데이터 수용 기준 실행")
    acceptance.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="반복 시드")
    acceptance.add_argument("--determinism", action="store_true", help="재실행 후 리포트 바이트 비교")
    acceptance.set_defaults(handler=cmd_acceptance)


def cmd_ablate(args: argparse.Namespace) -> Dict[str, Any]:
    spec = load_config(args.config, AblationSpec)
    if args.seed is not None:
        spec = spec.model_copy(update={"seeds": [args.seed]})
    jobs = resolve_jobs(args)
    out_dir = resolve_out(args, f"ablate/{spec.experiment.value}")

    manifest, windows = load_dataset(args.manifest, args.windows, jobs)
    report = EvaluationService().run_ablation(
        spec,
        manifest,
        windows,
        read_json(args.model_config),
        read_json(args.train_config),
        jobs,
    )
    ReportService().emit_report(report, out_dir)
    table = report.tables[0] if report.tables else None
    return {
        "report_dir": str(out_dir),
        "experiment": spec.experiment.value,
        "levels": {s.level: s.mean_accuracy for s in table.summaries} if table else {},
    }


def cmd_report(args: argparse.Namespace) -> Dict[str, Any]:
    service = ReportService()
    report = service.load_report(args.report)
    out_dir = Path(args.out) if args.out else Path(args.report).parent
    files = service.emit_report(report, out_dir)
    return {"report_dir": str(out_dir), "files": [path.name for path in files]}


def cmd_acceptance(args: argparse.Namespace) -> Dict[str, Any]:
    out_dir = resolve_out(args, "acceptance")
    seeds = [args.seed] if args.seed is not None else args.seeds
    result = AcceptanceService().run(out_dir, seeds=seeds, jobs=resolve_jobs(args), check_determinism=args.determinism)
    return {
        "passed": result.passed,
        "criteria": {str(item.criterion): item.passed for item in result.criteria},
        "report": str(out_dir / "acceptance.json"),
    }
