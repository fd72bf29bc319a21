"""
유틸리티 함수들
"""

import hashlib
import json
import math
from typing import Any, Iterable, List

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """전역 시드와 인덱스로부터 독립 시드 유도"""
    sequence = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """유도 시드 기반 난수 생성기"""
    return np.random.default_rng(derive_seed(seed, *keys))


def canonical_json(data: Any) -> str:
    """키 정렬된 결정적 JSON 문자열"""
    return json.dumps(data, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def config_digest(data: Any) -> str:
    """설정 딕셔너리의 sha256 요약 (앞 16자리)"""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()[:16]


def smoothstep(u: np.ndarray) -> np.ndarray:
    """0→1 사이 3차 smoothstep"""
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def count_steps(span: float, length: float, stride: float) -> int:
    """길이 span 구간에 들어가는 슬라이딩 구간 개수"""
    if span + 1e-9 < length:
        return 0
    return int(math.floor((span - length) / stride + 1e-9)) + 1


def distribute(total: int, buckets: int) -> List[int]:
    """정수 total을 buckets개로 분배 (나머지는 앞쪽부터)"""
    base, remainder = divmod(int(total), int(buckets))
    return [base + (1 if index < remainder else 0) for index in range(buckets)]


def mean(values: Iterable[float]) -> float:
    """빈 입력이면 nan"""
    values = list(values)
    if not values:
        return float("nan")
    return float(math.fsum(values) / len(values))
