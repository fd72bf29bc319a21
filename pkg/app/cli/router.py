import argparse

from app.cli.common import common_options
from app.cli.commands import dataset, experiments, training
from app.core.config import settings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safed",
        description=f"{settings.app_name} - 합성 데이터 생성부터 어블레이션까지",
    )
    parser.add_argument("--log-level", default=None, help="로그 레벨 (기본: SAFED_LOG_LEVEL)")
    subparsers = parser.add_subparsers(dest="command", required=True)
    parents = [common_options()]

    dataset.register(subparsers, parents)
    training.register(subparsers, parents)
    experiments.register(subparsers, parents)
    return parser
