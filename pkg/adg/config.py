"""
Configuration settings for the ADG framework
"""
from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Settings(BaseSettings):
    """Process-level settings, read from the environment and .env"""

    # Application
    APP_NAME: str = "ADG Distributed Optimization"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Output
    ADG_OUTPUT_DIR: str = "runs"

    # Threaded backend
    QUEUE_CAPACITY: int = 4
    THREAD_JOIN_TIMEOUT: float = 60.0

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def validate_log_level(cls, v):
        level = str(v).upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"LOG_LEVEL must be a logging level name, got {v!r}")
        return level

    @field_validator("QUEUE_CAPACITY")
    @classmethod
    def validate_queue_capacity(cls, v):
        if v < 1:
            raise ValueError("QUEUE_CAPACITY must be at least 1")
        return v

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")


# Global settings instance
settings = Settings()
