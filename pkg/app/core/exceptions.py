from typing import Optional

from pydantic import ValidationError


class SafeDException(Exception):
    """SAFE-D 벤치 공통 예외"""
    def __init__(self, message: str, exit_code: int = 1):
        self.message = message
        self.exit_code = exit_code
        super().__init__(self.message)


class ConfigSchemaException(SafeDException):
    """설정 파일 스키마 위반 예외"""
    def __init__(self, message: str = "설정 파일이 스키마와 맞지 않습니다."):
        super().__init__(message, 2)


class TraceParseException(SafeDException):
    """트레이스 파일 파싱 실패 예외"""
    def __init__(self, message: str = "트레이스 파일을 해석할 수 없습니다.", line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message, 3)


class TraceValidationException(SafeDException):
    """트레이스 불변식 위반 예외"""
    def __init__(self, message: str = "트레이스 검증에 실패했습니다."):
        super().__init__(message, 3)


class SynthesisException(SafeDException):
    """합성 데이터 생성 실패 예외"""
    def __init__(self, message: str = "주행 데이터 합성에 실패했습니다."):
        super().__init__(message, 4)


class PreprocessException(SafeDException):
    """전처리 실패 예외"""
    def __init__(self, message: str = "전처리에 실패했습니다."):
        super().__init__(message, 5)


class ModelException(SafeDException):
    """모델 구성/추론 오류 예외"""
    def __init__(self, message: str = "모델 처리에 실패했습니다."):
        super().__init__(message, 6)


class TrainingException(SafeDException):
    """학습 실패 예외"""
    def __init__(self, message: str = "학습에 실패했습니다."):
        super().__init__(message, 7)


class BaselineException(SafeDException):
    """베이스라인 모델 오류 예외"""
    def __init__(self, message: str = "베이스라인 처리에 실패했습니다."):
        super().__init__(message, 8)


class EvaluationException(SafeDException):
    """평가 실패 예외"""
    def __init__(self, message: str = "평가에 실패했습니다."):
        super().__init__(message, 9)


class ReportException(SafeDException):
    """리포트 출력 실패 예외"""
    def __init__(self, message: str = "리포트 생성에 실패했습니다."):
        super().__init__(message, 10)


def describe_validation_error(error: ValidationError) -> str:
    """pydantic 오류를 '키 경로: 메시지' 형태로 요약"""
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item.get("loc", ())) or "<root>"
        parts.append(f"{location}: {item.get('msg', '')}")
    return "; ".join(parts)


def create_error_payload(exception: SafeDException) -> dict:
    """SafeDException을 CLI JSON 출력용 딕셔너리로 변환"""
    return {
        "error": exception.__class__.__name__,
        "message": exception.message,
        "exit_code": exception.exit_code,
    }
