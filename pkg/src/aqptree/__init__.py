"""Dynamic partition-tree synopsis engine for approximate aggregate queries
over insert/delete streams."""

from .archive import Archive, event_from_json, event_to_json, read_events, write_events
from .engine import Engine, Phase, ThreadedEngine
from .estimator import QueryAnswer, answer, phi
from .maxvar import MaxVarIndex, MaxVarResult, RectStore
from .model import (
    AggKind,
    DimensionMismatch,
    EngineConfig,
    EngineError,
    Query,
    Rectangle,
    Relation,
    Tuple,
    Unanswerable,
    contains,
    relation,
)
from .partitioner import ErrorGrid, PartitionPlan, partition_1d, partition_kd
from .reservoir import Reservoir
from .synopsis import NodeStats, PartitionTree
from .kernels import IMPL_NAME as KERNEL_IMPL

__version__ = "0.1.0"

__all__ = [
    "AggKind",
    "Archive",
    "DimensionMismatch",
    "Engine",
    "EngineConfig",
    "EngineError",
    "ErrorGrid",
    "KERNEL_IMPL",
    "MaxVarIndex",
    "MaxVarResult",
    "NodeStats",
    "PartitionPlan",
    "PartitionTree",
    "Phase",
    "Query",
    "QueryAnswer",
    "Rectangle",
    "RectStore",
    "Relation",
    "Reservoir",
    "ThreadedEngine",
    "Tuple",
    "Unanswerable",
    "answer",
    "contains",
    "event_from_json",
    "event_to_json",
    "partition_1d",
    "partition_kd",
    "phi",
    "read_events",
    "relation",
    "write_events",
]
