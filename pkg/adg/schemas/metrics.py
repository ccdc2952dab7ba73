"""
Metrics row schema emitted once per epoch plus one summary row per run
"""
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict

SCHEMA_VERSION = 1


class MetricsRow(BaseModel):
    """One CSV row; column order is field order"""
    model_config = ConfigDict(extra="forbid")

    wall_seconds: float
    logical_tick: int
    epoch: int
    train_objective: float
    validation_objective: Optional[float] = None
    test_rmse_or_accuracy: Optional[float] = None
    comm_sends: int = 0
    comm_time: float = 0.0
    train_objective_mean: float = 0.0
    comm_receives: int = 0
    comm_broadcasts: int = 0
    comm_gathers: int = 0
    row_kind: Literal["epoch", "summary"] = "epoch"
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def columns(cls):
        return list(cls.model_fields)

    def csv_record(self):
        """Values as CSV strings; None becomes an empty cell"""
        return {k: "" if v is None else repr(v) if isinstance(v, float) else str(v)
                for k, v in self.model_dump().items()}

    @classmethod
    def from_csv_record(cls, record):
        return cls.model_validate({k: (None if v == "" else v) for k, v in record.items()})


class SpeedupRow(BaseModel):
    """Time to reach the objective target at one machine count"""
    model_config = ConfigDict(extra="forbid")

    workers: int
    censored: bool
    time_to_target: Optional[float] = None
    epochs_to_target: Optional[int] = None
    time_per_epoch: Optional[float] = None
    speedup: Optional[float] = None
    time_unit: Literal["ticks", "seconds"] = "ticks"

    @classmethod
    def columns(cls):
        return list(cls.model_fields)

    def csv_record(self):
        return {k: "" if v is None else repr(v) if isinstance(v, float) else str(v)
                for k, v in self.model_dump().items()}
