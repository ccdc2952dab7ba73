"""
Pydantic schemas for experiment configuration and emitted metrics
"""
from adg.schemas.experiment import ExperimentConfig, build_config, load_config
from adg.schemas.metrics import SCHEMA_VERSION, MetricsRow, SpeedupRow

__all__ = ["ExperimentConfig", "MetricsRow", "SCHEMA_VERSION", "SpeedupRow", "build_config", "load_config"]
