"""Process-level configuration using Pydantic Settings."""

from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Settings loaded from environment variables (prefix ``HYBRID_MEMORY_``)."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="HYBRID_MEMORY_",
        extra="ignore",
    )

    # Seed fallback when neither --seed nor the config document sets one
    SEED: Optional[int] = None

    # Logging
    LOG_LEVEL: str = "INFO"

    # Sweeps
    SWEEP_WORKERS: int = 1

    # Output
    OUTPUT_DIR: str = "runs"
    FLOAT_FORMAT: str = "%.17g"

    # Space-time field records keep every N-th time step
    FIELD_RECORD_EVERY: int = 25


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


settings = get_settings()
