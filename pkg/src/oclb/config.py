"""Configuration settings for the testbed."""

from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings, overridable through ``OCLB_*`` environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="OCLB_",
        env_file=str(Path(__file__).parent / ".env"),
        env_file_encoding="utf-8",
    )

    app_name: str = "oclb"
    log_level: str = "INFO"

    # Worker threads for experiment grids; ``--jobs`` wins when given
    jobs: int = 1

    # Numerical tolerances
    zero_tolerance: float = 1e-10
    frame_tolerance: float = 1e-10
    divergence_ratio: float = 1e6

    # Size caps
    dense_limit: int = 2000
    block_dimension_cap: int = 2000
    exhaustive_budget: int = 10_000_000

    # Hidden universal constants in the call thresholds (advisory only)
    threshold_c: float = 1.0
    threshold_c_prime: float = 1.0

    # Ledger keeps full query points instead of hashes
    record_points: bool = False


settings = Settings()
