"""
Configuration settings for ThieleKit using Pydantic Settings.

Supports environment variables and .env file loading with validation.
"""

from functools import lru_cache

import psutil
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


def _default_workers() -> int:
    """Physical core count, falling back to 1 when psutil cannot tell."""
    return psutil.cpu_count(logical=False) or 1


class Settings(BaseSettings):
    """
    Application settings with validation and environment variable support.

    All settings can be overridden via environment variables with THIELEKIT_ prefix.
    Example: THIELEKIT_DEFAULT_STEP=0.001 THIELEKIT_WORKERS=8
    """

    model_config = SettingsConfigDict(
        env_prefix="THIELEKIT_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application info
    APP_NAME: str = Field(default="ThieleKit", description="Application name")
    APP_VERSION: str = Field(default="1.0.0", description="Application version")
    APP_DESCRIPTION: str = Field(
        default="Canonical multi-state insurance engine", description="Application description"
    )
    DEBUG: bool = Field(default=False, description="Echo log records to stderr")

    # Backward solvers
    DEFAULT_STEP: float = Field(default=0.01, gt=0, description="Default maximal grid step h")
    SOLVER_SCHEME: str = Field(
        default="exact",
        description="Continuous stepping scheme: 'exact' (matrix exponential) or 'implicit_euler'",
    )
    QUADRATURE_NODES: int = Field(
        default=16, ge=2, le=128, description="Gauss-Legendre nodes per smooth piece"
    )
    POLE_CAP: float = Field(
        default=40.0, gt=0, description="Cap on a pole's integrated hazard inside one solver cell"
    )

    # Kernels and simulation
    INVERSION_XTOL: float = Field(
        default=1e-12, gt=0, description="Absolute tolerance of jump-time root finding"
    )
    SURVIVAL_FLOOR: float = Field(
        default=1e-300, ge=0, description="Survival probabilities below this are clamped to 0"
    )
    MAX_JUMPS_PER_PATH: int = Field(
        default=1_000_000, ge=1, description="Explosion guard for a single simulated path"
    )
    WORKERS: int = Field(
        default_factory=_default_workers, ge=1, description="Threads used by Monte Carlo runs"
    )
    CHUNK_SIZE: int = Field(default=256, ge=1, description="Paths per worker task")

    # Comparisons and validation
    COMPARISON_TOLERANCE: float = Field(
        default=1e-8, gt=0, description="Per-cell tolerance of Cantelli and sign checks"
    )
    NORMALIZATION_TOLERANCE: float = Field(
        default=1e-9, gt=0, description="Tolerance on the initial distribution summing to 1"
    )

    # Reports
    SIGNIFICANT_DIGITS: int = Field(
        default=17, ge=6, le=17, description="Significant digits of numbers in reports"
    )

    # Logging
    LOG_FILE: str = Field(default="logs/thielekit.log", description="Path to log file")
    LOG_MAX_SIZE: int = Field(
        default=10 * 1024 * 1024, description="Maximum log file size in bytes"  # 10 MB
    )
    LOG_BACKUP_COUNT: int = Field(
        default=5, ge=1, le=10, description="Number of log backup files to keep"
    )

    @field_validator("SOLVER_SCHEME")
    @classmethod
    def validate_scheme(cls, v: str) -> str:
        """Validate the stepping scheme name."""
        v = v.strip().lower()
        if v not in {"exact", "implicit_euler"}:
            raise ValueError("SOLVER_SCHEME must be 'exact' or 'implicit_euler'")
        return v

    @field_validator("LOG_FILE")
    @classmethod
    def validate_log_file(cls, v: str) -> str:
        """Validate log file path."""
        if not v or v.isspace():
            raise ValueError("Log file path cannot be empty")
        return v.strip()


@lru_cache
def get_settings() -> Settings:
    """
    Get cached settings instance.

    Uses lru_cache to ensure settings are only loaded once.
    """
    return Settings()


# Default settings instance used when services are built without injection
settings = get_settings()
