"""
Wire envelopes, master bookkeeping and run traces of the parameter-exchange protocol
"""
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import TypeAdapter

from adg.core.exceptions import ContractViolation

# Event kinds written to the trace log
SEND = "send"
INGEST = "ingest"
STALE = "stale"
AGGREGATE = "aggregate"
BROADCAST = "broadcast"
EPOCH = "epoch"
EVENT_KINDS = (SEND, INGEST, STALE, AGGREGATE, BROADCAST, EPOCH)


@dataclass(frozen=True)
class WorkerMessage:
    """Parameters (or a gradient, for the per-minibatch baselines) sent toward the master"""

    worker_id: int
    payload: np.ndarray
    local_epoch: int
    wall_tick: int = 0
    local_rows: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    basis_round: Optional[int] = None


@dataclass(frozen=True)
class MasterBroadcast:
    payload: np.ndarray
    master_round: int
    wall_tick: int = 0


@dataclass
class MasterTable:
    """Latest payload per worker plus the local epoch it came from"""

    latest: List[np.ndarray]
    rounds_seen: List[int]
    local_rows: List[Optional[np.ndarray]] = field(default_factory=list)

    @classmethod
    def initial(cls, m: int, w0: np.ndarray) -> "MasterTable":
        if m < 1:
            raise ContractViolation("the master table needs at least one slot")
        w0 = np.asarray(w0, dtype=np.float64)
        return cls(latest=[w0.copy() for _ in range(m)], rounds_seen=[0] * m, local_rows=[None] * m)

    @property
    def m(self) -> int:
        return len(self.latest)


@dataclass
class CommStats:
    """Communication call counters shared by every machine of a run"""

    sends: int = 0
    receives: int = 0
    broadcasts: int = 0
    gathers: int = 0
    stale_dropped: int = 0
    time_in_calls: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def record_send(self, seconds: float = 0.0, count: int = 1) -> None:
        with self._lock:
            self.sends += count
            self.time_in_calls += seconds

    def record_receive(self, seconds: float = 0.0, count: int = 1) -> None:
        with self._lock:
            self.receives += count
            self.time_in_calls += seconds

    def record_broadcast(self, seconds: float = 0.0) -> None:
        with self._lock:
            self.broadcasts += 1
            self.time_in_calls += seconds

    def record_gather(self, seconds: float = 0.0) -> None:
        with self._lock:
            self.gathers += 1
            self.time_in_calls += seconds

    def record_stale(self) -> None:
        with self._lock:
            self.stale_dropped += 1

    @property
    def total_calls(self) -> int:
        return self.sends + self.receives + self.broadcasts + self.gathers

    def as_dict(self) -> Dict[str, Union[int, float]]:
        with self._lock:
            return {
                "sends": self.sends,
                "receives": self.receives,
                "broadcasts": self.broadcasts,
                "gathers": self.gathers,
                "stale_dropped": self.stale_dropped,
                "time_in_calls": self.time_in_calls,
            }


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    kind: str
    worker: int
    epoch: int
    objective: Optional[float] = None
    basis_round: Optional[int] = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ContractViolation(f"unknown trace event kind {self.kind!r}")


_event_adapter = TypeAdapter(TraceEvent)


@dataclass
class RunTrace:
    """Everything a run produced: events, broadcasts, counters and the final model

    The simulated backend logs every protocol event; the threaded backend
    logs one EPOCH event per completed worker epoch and per master round.
    """

    algorithm: str = ""
    backend: str = "simulated"
    events: List[TraceEvent] = field(default_factory=list)
    broadcasts: List[MasterBroadcast] = field(default_factory=list)
    stats: CommStats = field(default_factory=CommStats)
    final_model: Dict[str, np.ndarray] = field(default_factory=dict)
    rows: List[Any] = field(default_factory=list)
    epochs_completed: int = 0
    final_tick: int = 0
    target_tick: Optional[int] = None
    keep_payloads: bool = True
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def record(self, event: TraceEvent) -> None:
        with self._lock:
            self.events.append(event)

    def record_broadcast(self, broadcast: MasterBroadcast) -> None:
        if not self.keep_payloads:
            return
        with self._lock:
            self.broadcasts.append(broadcast)

    def events_of(self, kind: str) -> List[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def to_jsonl(self) -> str:
        return "".join(_event_adapter.dump_json(e).decode() + "\n" for e in self.events)

    def write_jsonl(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    @staticmethod
    def read_jsonl(path: Union[str, Path]) -> List[TraceEvent]:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return [_event_adapter.validate_json(line) for line in lines if line.strip()]
