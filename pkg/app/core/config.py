from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # 앱 설정
    app_name: str = "SAFE-D 이상 운전 탐지 벤치"
    app_version: str = "1.0.0"
    debug: bool = False
    log_level: str = "INFO"

    # 경로 설정
    data_dir: str = "./data"
    output_dir: str = "./outputs"

    # 재현성 / 병렬 처리
    default_seed: int = 42
    jobs: int = 1

    # 전처리 설정
    target_hz: int = 30
    window_s: float = 4.0
    overlap_s: float = 1.0
    frame_s: float = 1.0
    frame_stride_s: float = 0.5

    # 채널 물리 범위
    steering_range_deg: float = 450.0
    pedal_range_pct: float = 100.0

    # 학습 예산
    grid_search_epochs: int = 30
    ct_epochs: int = 40

    # 리포트 설정
    plot_dpi: int = 120

    class Config:
        env_file = ".env"
        env_prefix = "SAFED_"
        case_sensitive = False


# 전역 설정 인스턴스
settings = Settings()
