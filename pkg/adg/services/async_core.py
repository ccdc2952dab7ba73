"""
Asynchronous parameter-exchange protocol

Every machine, the master included as machine 0, runs a local epoch from the
latest averaged parameter it has, then sends the result. The master keeps
the newest payload per machine, averages them and broadcasts the average.

Two deterministic simulated clocks drive the protocol:
- delay: one master round per tick; machine i at round k starts from the
  broadcast of round k - d(i, k) given by a DelaySchedule
- timing: an event queue over integer ticks where MachineModel costs make
  machines finish at different times
The threaded backend lives in transport.
"""
import heapq
import itertools
import logging
from collections import deque
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from adg.core.exceptions import ConfigError, ContractViolation, DivergedError
from adg.models import DelaySchedule, MachineModel, MasterBroadcast, MasterTable, RunTrace, TraceEvent, WorkerMessage
from adg.models.protocol import BROADCAST, SEND
from adg.schemas.experiment import ExperimentConfig
from adg.services.master import (
    aggregate_and_broadcast,
    ingest,
    initial_table,
    master_aggregate,
    master_ingest,
    send_and_ingest,
    worker_select_basis,
)
from adg.services.metrics import Monitor
from adg.services.programs import MfProgram, SvrgProgram
from adg.services.transport import run_threaded
from adg.services.workloads import Workload, build_workload, compute_ticks_for

logger = logging.getLogger(__name__)

__all__ = [
    "master_aggregate",
    "master_ingest",
    "worker_select_basis",
    "run_async",
    "run_async_mf",
    "run_delay_rounds",
    "run_timing",
    "warm_start_pass",
]

# Called after every delay-mode round with (round, delays, machine iterates, average)
RoundHook = Callable[[int, List[int], List[np.ndarray], np.ndarray], None]

# Timing-mode event priorities within one tick
_DELIVER, _ARRIVE, _COMPLETE, _START = 0, 1, 2, 4


def warm_start_pass(program: SvrgProgram, w0: np.ndarray, trace: RunTrace) -> np.ndarray:
    """One synchronised pass of averaged mini-batch gradient steps before asynchrony starts"""
    w = np.array(w0, dtype=np.float64)
    m = program.m
    for t in range(program.warm_steps()):
        grads = []
        for i in range(m):
            grads.append(program.warm_gradient(i, w, t))
            trace.stats.record_send()
            trace.stats.record_receive()
            trace.record(TraceEvent(0, SEND, i, 0))
        trace.stats.record_gather()
        w_next = w - program.gamma * np.mean(np.stack(grads), axis=0)
        if not np.all(np.isfinite(w_next)):
            raise DivergedError(f"warm start diverged at mini-batch {t}", iterate=w, step=t)
        w = w_next
        trace.stats.record_broadcast()
        trace.record(TraceEvent(0, BROADCAST, 0, 0))
    logger.info(f"Warm start finished after {program.warm_steps()} synchronised mini-batches")
    return w


def run_delay_rounds(program, w0: np.ndarray, schedule: DelaySchedule, trace: RunTrace,
                     monitor: Optional[Monitor] = None, max_rounds: int = 100,
                     hooks: Sequence[RoundHook] = ()) -> Tuple[np.ndarray, MasterTable]:
    """Delay-clocked protocol: every machine completes once per master round

    Machine i at round k starts from the broadcast of round k - d(i, k),
    sends its result, and the master then averages and broadcasts round k + 1.
    """
    if schedule.m != program.m and schedule.kind == "adversarial_cycle":
        raise ContractViolation(f"schedule built for {schedule.m} machines, program has {program.m}")
    w0 = np.asarray(w0, dtype=np.float64)
    table = initial_table(program, w0)
    first = MasterBroadcast(w0.copy(), 0, 0)
    trace.record_broadcast(first)
    recent = deque([first], maxlen=schedule.d_max + 1)
    shared = w0
    for k in range(max_rounds):
        tick = k + 1
        delays = [schedule.delay(i, k) for i in range(program.m)]
        iterates = []
        for i in range(program.m):
            basis_round = k - delays[i]
            basis = recent[basis_round - recent[0].master_round].payload
            payload, rows = program.local_step(i, basis)
            msg = WorkerMessage(i, payload, k + 1, tick, rows, basis_round)
            send_and_ingest(table, msg, trace)
            iterates.append(payload)
        broadcast = aggregate_and_broadcast(table, k + 1, tick, trace)
        recent.append(broadcast)
        shared = broadcast.payload
        trace.final_tick = tick
        trace.epochs_completed = k + 1
        for hook in hooks:
            hook(k, delays, iterates, shared)
        if monitor is not None and monitor.observe(k + 1, tick, shared, table.local_rows, trace.stats):
            break
    return shared, table


def run_timing(program, w0: np.ndarray, machines: Sequence[MachineModel], trace: RunTrace,
               monitor: Optional[Monitor] = None, max_rounds: int = 100,
               broadcast_on_ingest: bool = False) -> Tuple[np.ndarray, MasterTable]:
    """Event-queue protocol with per-machine epoch and message costs

    Within a tick: deliveries, then arrivals, then completions (workers before
    the master), then epoch starts; so a broadcast arriving at tick t is the
    basis of an epoch starting at tick t. The master broadcasts after each of
    its own epochs, and after every ingest when broadcast_on_ingest is set.
    `max_rounds` bounds the master's local epochs.
    """
    m = program.m
    if len(machines) != m:
        raise ContractViolation(f"need one MachineModel per machine, got {len(machines)} for {m}")
    w0 = np.asarray(w0, dtype=np.float64)
    table = initial_table(program, w0)
    first = MasterBroadcast(w0.copy(), 0, 0)
    trace.record_broadcast(first)

    inbox: List[Optional[MasterBroadcast]] = [first] * m
    last_local = [w0] * m
    pending: List[Optional[Tuple[np.ndarray, Optional[int]]]] = [None] * m
    epoch = [0] * m
    master_round = 0
    shared = w0
    seq = itertools.count()
    queue: list = []

    def order(i: int) -> int:
        return m if i == 0 else i

    def push(tick: int, prio: int, i: int, kind: str, data=None) -> None:
        heapq.heappush(queue, (tick, prio, order(i), next(seq), kind, i, data))

    def master_step(tick: int) -> None:
        nonlocal master_round, shared
        master_round += 1
        broadcast = aggregate_and_broadcast(table, master_round, tick, trace)
        shared = broadcast.payload
        inbox[0] = broadcast
        for j in range(1, m):
            push(tick + machines[j].comm_ticks, _DELIVER, j, "deliver", broadcast)

    for i in range(m):
        push(0, _START, i, "start")

    while queue:
        tick, _, _, _, kind, i, data = heapq.heappop(queue)
        trace.final_tick = tick
        if kind == "start":
            received = inbox[i]
            basis = worker_select_basis(received, last_local[i])
            pending[i] = (basis, received.master_round if received is not None else None)
            inbox[i] = None
            push(tick + machines[i].compute_ticks_per_epoch, _COMPLETE, i, "complete")
        elif kind == "complete":
            basis, basis_round = pending[i]
            payload, rows = program.local_step(i, basis)
            epoch[i] += 1
            last_local[i] = payload
            msg = WorkerMessage(i, payload, epoch[i], tick, rows, basis_round)
            trace.stats.record_send()
            trace.record(TraceEvent(tick, SEND, i, epoch[i], basis_round=basis_round))
            if i == 0:
                ingest(table, msg, trace, tick)
                master_step(tick)
                trace.epochs_completed = epoch[0]
                if monitor is not None and monitor.observe(epoch[0], tick, shared, table.local_rows, trace.stats):
                    break
                if epoch[0] >= max_rounds:
                    break
            else:
                push(tick + machines[i].comm_ticks, _ARRIVE, i, "arrive", msg)
            push(tick, _START, i, "start")
        elif kind == "arrive":
            if ingest(table, data, trace, tick) and broadcast_on_ingest:
                master_step(tick)
        elif kind == "deliver":
            if inbox[i] is None or data.master_round > inbox[i].master_round:
                inbox[i] = data
    return shared, table


def attach_trace(error: DivergedError, trace: RunTrace) -> DivergedError:
    error.stats = trace.stats
    error.trace = trace
    return error


def finalize_trace(trace: RunTrace, program, shared: np.ndarray, monitor: Optional[Monitor]) -> RunTrace:
    if isinstance(program, MfProgram):
        trace.final_model = {"p": program.full_p(), "q": np.array(shared)}
    else:
        trace.final_model = {"w": np.array(shared)}
    if monitor is not None:
        trace.rows = list(monitor.rows)
        trace.target_tick = monitor.target_tick
    return trace


def delay_schedule_for(config: ExperimentConfig) -> DelaySchedule:
    sim = config.simulation
    return DelaySchedule(kind=sim.delay_kind, d_max=sim.d_max, seed=config.experiment.seed, m=config.m)


def machine_models_for(config: ExperimentConfig, program) -> List[MachineModel]:
    ticks = compute_ticks_for(config, program)
    return [MachineModel(t, config.simulation.comm_ticks) for t in ticks]


def run_async(config: ExperimentConfig, backend: Optional[str] = None, workload: Optional[Workload] = None,
              monitor: Optional[Monitor] = None) -> RunTrace:
    """Run the asynchronous protocol for a classification or factorization config"""
    backend = backend or config.experiment.backend
    if backend not in ("simulated", "threaded"):
        raise ConfigError(f"unknown backend {backend!r}")
    workload = workload or build_workload(config)
    monitor = monitor or Monitor.from_config(config, workload.evaluator)
    program = workload.program
    trace = RunTrace(algorithm=config.algorithm, backend=backend)
    logger.info(f"🚀 Starting {config.algorithm} on {program.m} machines ({backend} backend)")
    monitor.restart_clock()
    try:
        w0 = program.initial_payload()
        if config.warm_start:
            if not isinstance(program, SvrgProgram):
                raise ConfigError("warm start needs a mini-batch program")
            w0 = warm_start_pass(program, w0, trace)
        max_rounds = config.stopping.max_epochs
        if backend == "threaded":
            shared, _ = run_threaded(program, w0, trace, monitor, max_rounds,
                                     broadcast_on_ingest=config.protocol.broadcast_on_ingest,
                                     queue_capacity=config.protocol.queue_capacity)
        elif config.simulation.schedule == "timing":
            shared, _ = run_timing(program, w0, machine_models_for(config, program), trace, monitor, max_rounds,
                                   broadcast_on_ingest=config.protocol.broadcast_on_ingest)
        else:
            if config.protocol.broadcast_on_ingest:
                logger.debug("broadcast_on_ingest has no effect under the delay schedule")
            shared, _ = run_delay_rounds(program, w0, delay_schedule_for(config), trace, monitor, max_rounds)
    except DivergedError as e:
        logger.error(f"❌ {config.algorithm} diverged: {e}")
        raise attach_trace(e, trace)
    finalize_trace(trace, program, shared, monitor)
    logger.info(f"✅ {config.algorithm} finished after {trace.epochs_completed} epochs, "
                f"{trace.stats.sends} sends")
    return trace


def run_async_mf(config: ExperimentConfig, backend: Optional[str] = None, workload: Optional[Workload] = None,
                 monitor: Optional[Monitor] = None) -> RunTrace:
    """Asynchronous factorization: Q is exchanged, each machine's P rows stay local"""
    if not config.is_mf:
        raise ConfigError(f"{config.algorithm} is not a factorization algorithm")
    return run_async(config, backend, workload, monitor)
