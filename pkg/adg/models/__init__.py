"""
Domain types shared across services
"""
from adg.models.dataset import ClassificationDataset, LabeledExample, Partition, Rating, RatingMatrix
from adg.models.factors import FactorState, RngState, SvrgEpochConfig
from adg.models.protocol import (
    CommStats,
    MasterBroadcast,
    MasterTable,
    RunTrace,
    TraceEvent,
    WorkerMessage,
)
from adg.models.schedule import DelaySchedule, ErrorEnvelope, MachineModel
from adg.models.specs import LogisticLossSpec, MfLossSpec, SmoothnessEstimate

__all__ = [
    "ClassificationDataset",
    "CommStats",
    "DelaySchedule",
    "ErrorEnvelope",
    "FactorState",
    "LabeledExample",
    "LogisticLossSpec",
    "MachineModel",
    "MasterBroadcast",
    "MasterTable",
    "MfLossSpec",
    "Partition",
    "Rating",
    "RatingMatrix",
    "RngState",
    "RunTrace",
    "SmoothnessEstimate",
    "SvrgEpochConfig",
    "TraceEvent",
    "WorkerMessage",
]
