"""
Master-side protocol primitives shared by every backend

The master keeps the newest payload per machine (latest wins), averages the
slots and broadcasts the average.
"""
from typing import Optional

import numpy as np

from adg.core.exceptions import ProtocolViolation
from adg.models import CommStats, MasterBroadcast, MasterTable, RunTrace, TraceEvent, WorkerMessage
from adg.models.protocol import AGGREGATE, BROADCAST, INGEST, SEND, STALE


def master_aggregate(table: MasterTable) -> np.ndarray:
    """Elementwise mean of the latest payload of every machine"""
    shapes = {np.shape(slot) for slot in table.latest}
    if len(shapes) != 1:
        raise ProtocolViolation(f"slots disagree on payload shape: {sorted(shapes)}")
    return np.mean(np.stack(table.latest), axis=0)


def master_ingest(table: MasterTable, msg: WorkerMessage, stats: Optional[CommStats] = None) -> MasterTable:
    """Keep the message iff it is newer than what the master holds for that worker"""
    if not 0 <= msg.worker_id < table.m:
        raise ProtocolViolation(f"worker id {msg.worker_id} outside 0..{table.m - 1}")
    payload = np.asarray(msg.payload)
    if payload.shape != np.shape(table.latest[msg.worker_id]):
        raise ProtocolViolation(
            f"worker {msg.worker_id} sent shape {payload.shape}, expected {np.shape(table.latest[msg.worker_id])}"
        )
    if msg.local_epoch <= table.rounds_seen[msg.worker_id]:
        if stats is not None:
            stats.record_stale()
        return table
    if not np.all(np.isfinite(payload)):
        raise ProtocolViolation(f"worker {msg.worker_id} sent a non-finite payload")
    table.latest[msg.worker_id] = payload
    table.rounds_seen[msg.worker_id] = msg.local_epoch
    if msg.local_rows is not None:
        table.local_rows[msg.worker_id] = msg.local_rows
    return table


def worker_select_basis(last_broadcast: Optional[MasterBroadcast], last_local: np.ndarray) -> np.ndarray:
    """Payload of a broadcast received since the last epoch start, else the worker's own last iterate"""
    if last_broadcast is not None:
        return last_broadcast.payload
    return last_local


def initial_table(program, w0: np.ndarray) -> MasterTable:
    table = MasterTable.initial(program.m, w0)
    table.local_rows = [program.local_rows(i) for i in range(program.m)]
    return table


def send_and_ingest(table: MasterTable, msg: WorkerMessage, trace: RunTrace, tick: Optional[int] = None) -> bool:
    """Record the send, hand the message to the master, and log whether it was kept"""
    tick = msg.wall_tick if tick is None else tick
    trace.stats.record_send()
    trace.record(TraceEvent(msg.wall_tick, SEND, msg.worker_id, msg.local_epoch, basis_round=msg.basis_round))
    return ingest(table, msg, trace, tick)


def ingest(table: MasterTable, msg: WorkerMessage, trace: RunTrace, tick: int) -> bool:
    fresh = msg.local_epoch > table.rounds_seen[msg.worker_id] if 0 <= msg.worker_id < table.m else True
    master_ingest(table, msg, trace.stats)
    if fresh:
        trace.stats.record_receive()
        trace.record(TraceEvent(tick, INGEST, msg.worker_id, msg.local_epoch))
    else:
        trace.record(TraceEvent(tick, STALE, msg.worker_id, msg.local_epoch))
    return fresh


def aggregate_and_broadcast(table: MasterTable, master_round: int, tick: int, trace: RunTrace) -> MasterBroadcast:
    shared = master_aggregate(table)
    trace.record(TraceEvent(tick, AGGREGATE, 0, master_round))
    broadcast = MasterBroadcast(shared, master_round, tick)
    trace.stats.record_broadcast()
    trace.record(TraceEvent(tick, BROADCAST, 0, master_round))
    trace.record_broadcast(broadcast)
    return broadcast

