import json
import logging
import sys
from typing import List, Optional

from app.cli.router import build_parser
from app.core.config import settings
from app.core.exceptions import SafeDException, create_error_payload

logger = logging.getLogger(__name__)


def setup_logging(level: Optional[str] = None) -> None:
    # 로그는 stderr, 요약은 stdout
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


def print_summary(summary: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(summary, sort_keys=True, ensure_ascii=False, default=str))
        return
    for key, value in summary.items():
        print(f"{key}: {value}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    logger.info(f"🚀 {settings.app_name} v{settings.app_version}: {args.command}")
    try:
        summary = args.handler(args)
    except SafeDException as e:
        logger.error(f"{e.__class__.__name__}: {e.message}")
        if args.json:
            print(json.dumps(create_error_payload(e), ensure_ascii=False))
        else:
            print(f"오류: {e.message}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"예상치 못한 오류: {e}")
        if args.json:
            print(json.dumps({"error": e.__class__.__name__, "message": str(e), "exit_code": 1}, ensure_ascii=False))
        return 1

    print_summary(summary, args.json)
    logger.info(f"✅ {args.command} 완료")
    return 0
