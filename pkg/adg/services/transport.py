"""
Threaded backend: one thread per machine exchanging messages through bounded queues

Machine 0 also plays the master. Each worker owns one uplink queue to the
master and one downlink queue from it. Parameter queues keep only the newest
`capacity` messages, so a slow reader sees fresh payloads; gradient queues
keep every message.
"""
import logging
import threading
import time
from collections import deque
from typing import List, Optional, Tuple

import numpy as np

from adg.config import settings
from adg.core.exceptions import ContractViolation, DivergedError
from adg.models import MasterBroadcast, MasterTable, RunTrace, TraceEvent, WorkerMessage
from adg.models.protocol import EPOCH
from adg.services.master import initial_table, master_aggregate, master_ingest, worker_select_basis
from adg.services.metrics import Monitor

logger = logging.getLogger(__name__)


class LatestWinsQueue:
    """Bounded FIFO; putting into a full queue discards the oldest unread message

    A capacity of None keeps every message.
    """

    def __init__(self, capacity: Optional[int]):
        if capacity is not None and capacity < 1:
            raise ContractViolation("queue capacity must be at least 1")
        self._items = deque(maxlen=capacity)
        self._cond = threading.Condition()
        self.dropped = 0

    def put(self, item) -> None:
        with self._cond:
            if self._items.maxlen is not None and len(self._items) == self._items.maxlen:
                self.dropped += 1
            self._items.append(item)
            self._cond.notify_all()

    def get(self, timeout: Optional[float] = None):
        """Oldest message, or None when nothing arrives within timeout"""
        with self._cond:
            if not self._items:
                self._cond.wait(timeout)
            return self._items.popleft() if self._items else None

    def drain(self) -> list:
        with self._cond:
            items = list(self._items)
            self._items.clear()
            return items

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


def _newest(broadcasts: List[MasterBroadcast]) -> Optional[MasterBroadcast]:
    return max(broadcasts, key=lambda b: b.master_round) if broadcasts else None


def run_threaded(program, w0: np.ndarray, trace: RunTrace, monitor: Optional[Monitor] = None,
                 max_rounds: int = 100, broadcast_on_ingest: bool = False,
                 queue_capacity: Optional[int] = None,
                 join_timeout: Optional[float] = None) -> Tuple[np.ndarray, MasterTable]:
    """Run the protocol on real threads until the monitor or max_rounds stops the master

    The trace gets one EPOCH event per completed local epoch; its tick is the
    master round for the master and the worker's epoch count otherwise.
    """
    m = program.m
    capacity = queue_capacity or settings.QUEUE_CAPACITY
    join_timeout = settings.THREAD_JOIN_TIMEOUT if join_timeout is None else join_timeout
    w0 = np.asarray(w0, dtype=np.float64)
    stats = trace.stats
    uplinks = [LatestWinsQueue(capacity) for _ in range(m)]
    downlinks = [LatestWinsQueue(capacity) for _ in range(m)]
    stop = threading.Event()
    errors: List[BaseException] = []
    table = initial_table(program, w0)
    first = MasterBroadcast(w0.copy(), 0, 0)
    trace.record_broadcast(first)
    result = {"shared": w0}

    def receive(queue: LatestWinsQueue) -> list:
        started = time.perf_counter()
        items = queue.drain()
        if items:
            stats.record_receive(time.perf_counter() - started, count=len(items))
        return items

    def worker(i: int) -> None:
        last_local = w0
        received: Optional[MasterBroadcast] = first
        epoch = 0
        try:
            while not stop.is_set():
                newest = _newest(downlinks[i].drain())
                if newest is not None:
                    received = newest
                basis_round = received.master_round if received is not None else None
                basis = worker_select_basis(received, last_local)
                received = None
                payload, rows = program.local_step(i, basis)
                epoch += 1
                last_local = payload
                started = time.perf_counter()
                uplinks[i].put(WorkerMessage(i, payload, epoch, epoch, rows, basis_round))
                stats.record_send(time.perf_counter() - started)
                trace.record(TraceEvent(epoch, EPOCH, i, epoch, basis_round=basis_round))
        except BaseException as e:
            logger.error(f"Machine {i} failed: {e}")
            errors.append(e)
            stop.set()

    def master_round_step(master_round: int) -> MasterBroadcast:
        shared = master_aggregate(table)
        broadcast = MasterBroadcast(shared, master_round, master_round)
        started = time.perf_counter()
        for j in range(1, m):
            downlinks[j].put(broadcast)
        stats.record_broadcast(time.perf_counter() - started)
        trace.record_broadcast(broadcast)
        result["shared"] = shared
        return broadcast

    def master() -> None:
        master_round = 0
        own: Optional[MasterBroadcast] = first
        last_local = w0
        epoch = 0
        try:
            while not stop.is_set():
                basis_round = own.master_round if own is not None else None
                basis = worker_select_basis(own, last_local)
                payload, rows = program.local_step(0, basis)
                epoch += 1
                last_local = payload
                stats.record_send()
                master_ingest(table, WorkerMessage(0, payload, epoch, master_round, rows, basis_round), stats)
                stats.record_receive()
                for j in range(1, m):
                    for msg in receive(uplinks[j]):
                        master_ingest(table, msg, stats)
                        if broadcast_on_ingest:
                            master_round += 1
                            master_round_step(master_round)
                master_round += 1
                own = master_round_step(master_round)
                trace.record(TraceEvent(master_round, EPOCH, 0, epoch, basis_round=basis_round))
                trace.epochs_completed = epoch
                trace.final_tick = master_round
                done = monitor is not None and monitor.observe(epoch, master_round, own.payload,
                                                               table.local_rows, stats)
                if done or epoch >= max_rounds:
                    break
        except BaseException as e:
            logger.error(f"Master failed: {e}")
            errors.append(e)
        finally:
            stop.set()

    threads = [threading.Thread(target=master, name="machine-0", daemon=True)]
    threads += [threading.Thread(target=worker, args=(i,), name=f"machine-{i}", daemon=True) for i in range(1, m)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(join_timeout)
        if t.is_alive():
            logger.warning(f"{t.name} did not stop within {join_timeout}s")
    if errors:
        raise errors[0]
    dropped = sum(q.dropped for q in uplinks + downlinks)
    if dropped:
        logger.debug(f"Bounded queues overwrote {dropped} unread messages")
    return result["shared"], table


def run_threaded_gradients(program, w0: np.ndarray, trace: RunTrace, monitor: Optional[Monitor] = None,
                           max_epochs: int = 100, join_timeout: Optional[float] = None) -> np.ndarray:
    """Per-minibatch gradient exchange on real threads

    Gradient queues keep every message. The master (machine 0) applies each
    gradient it takes in with step gamma / M and broadcasts after every
    application; workers step from the newest parameter they hold. An epoch
    is steps_per_epoch mini-batches of the master.
    """
    m, steps = program.m, program.steps_per_epoch()
    join_timeout = settings.THREAD_JOIN_TIMEOUT if join_timeout is None else join_timeout
    stats = trace.stats
    step_size = program.gamma / m
    uplinks = [LatestWinsQueue(None) for _ in range(m)]
    downlinks = [LatestWinsQueue(settings.QUEUE_CAPACITY) for _ in range(m)]
    stop = threading.Event()
    errors: List[BaseException] = []
    first = MasterBroadcast(np.asarray(w0, dtype=np.float64).copy(), 0, 0)
    trace.record_broadcast(first)
    result = {"w": first.payload}

    def worker(i: int) -> None:
        w = first.payload
        t = 0
        try:
            while not stop.is_set():
                newest = _newest(downlinks[i].drain())
                if newest is not None:
                    w = newest.payload
                if t % steps == 0:
                    program.begin_epoch(i, w)
                g = program.batch_gradient(i, w)
                t += 1
                started = time.perf_counter()
                uplinks[i].put(WorkerMessage(i, g, t))
                stats.record_send(time.perf_counter() - started)
                if t % steps == 0:
                    trace.record(TraceEvent(t // steps, EPOCH, i, t // steps))
        except BaseException as e:
            logger.error(f"Machine {i} failed: {e}")
            errors.append(e)
            stop.set()

    def master() -> None:
        w = first.payload.copy()
        applied = 0
        t = 0

        def apply(g: np.ndarray) -> None:
            nonlocal w, applied
            w = w - step_size * g
            applied += 1
            broadcast = MasterBroadcast(w, applied, applied)
            started = time.perf_counter()
            for j in range(1, m):
                downlinks[j].put(broadcast)
            stats.record_broadcast(time.perf_counter() - started)

        try:
            while not stop.is_set():
                if t % steps == 0:
                    program.begin_epoch(0, w)
                stats.record_send()
                stats.record_receive()
                apply(program.batch_gradient(0, w))
                for j in range(1, m):
                    started = time.perf_counter()
                    messages = uplinks[j].drain()
                    if messages:
                        stats.record_receive(time.perf_counter() - started, count=len(messages))
                    for msg in messages:
                        apply(msg.payload)
                if not np.all(np.isfinite(w)):
                    raise DivergedError(f"parameter became non-finite after {applied} updates", step=applied)
                t += 1
                result["w"] = w
                if t % steps == 0:
                    epoch = t // steps
                    trace.record(TraceEvent(applied, EPOCH, 0, epoch))
                    trace.record_broadcast(MasterBroadcast(w.copy(), applied, applied))
                    trace.epochs_completed = epoch
                    trace.final_tick = applied
                    done = monitor is not None and monitor.observe(epoch, applied, w, None, stats)
                    if done or epoch >= max_epochs:
                        break
        except BaseException as e:
            logger.error(f"Master failed: {e}")
            errors.append(e)
        finally:
            stop.set()

    threads = [threading.Thread(target=master, name="machine-0", daemon=True)]
    threads += [threading.Thread(target=worker, args=(i,), name=f"machine-{i}", daemon=True) for i in range(1, m)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(join_timeout)
        if t.is_alive():
            logger.warning(f"{t.name} did not stop within {join_timeout}s")
    if errors:
        raise errors[0]
    return result["w"]
