"""
Configuration module for the spadsim toolkit.

This module manages process-level settings and environment variables.
Uses Pydantic Settings for validation and type safety. Run-specific
parameters (scenario, compensator, sweep, ...) live in JSON run configs
validated by ``spadsim.schemas``.
"""

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process settings with validation and environment variable support.

    All settings can be overridden via ``SPADSIM_``-prefixed environment
    variables or a .env file.

    Attributes:
        THREADS: Worker threads used when no --threads flag is given.
        LOG_LEVEL: Root logging level.
        OUTPUT_DIR: Default directory for output files.
    """

    THREADS: int = Field(default=1, ge=1)
    LOG_LEVEL: str = "INFO"
    OUTPUT_DIR: str = "out"

    model_config = SettingsConfigDict(
        env_prefix="SPADSIM_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )

