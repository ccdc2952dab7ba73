"""
Comparison strategies

- run_sync: barriered parameter averaging (plain gradient or any program)
- run_asgd: barriered factorization, Q copies averaged once per epoch
- run_dsgd: stratum-scheduled factorization, one barrier per sub-epoch
- run_sync_svrg: variance-reduced gradients averaged after every mini-batch
- run_async_svrg: mini-batch gradients applied by the master as they arrive
"""
import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from adg.core.exceptions import ConfigError, ContractViolation, DivergedError, ProtocolViolation
from adg.models import FactorState, MachineModel, MasterBroadcast, RatingMatrix, RunTrace, TraceEvent, WorkerMessage
from adg.models.protocol import AGGREGATE, BROADCAST, INGEST, SEND
from adg.schemas.experiment import ExperimentConfig
from adg.services.async_core import (
    attach_trace,
    delay_schedule_for,
    finalize_trace,
    machine_models_for,
    run_async,
)
from adg.services.local_solvers import mf_local_epoch
from adg.services.master import aggregate_and_broadcast, initial_table, send_and_ingest
from adg.services.metrics import Monitor
from adg.services.programs import MfProgram, SvrgProgram
from adg.services.transport import run_threaded_gradients
from adg.services.workloads import Workload, build_workload

logger = logging.getLogger(__name__)

# Stream id of the stratum-order shuffle
SHUFFLE_STREAM = 2 ** 31 - 3

Block = Tuple[int, int]


# ---------------------------------------------------------------------------
# Strata
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stratum:
    """Rating-matrix blocks with pairwise-disjoint row and column blocks"""

    blocks: Tuple[Block, ...]

    def __post_init__(self):
        rows = [r for r, _ in self.blocks]
        cols = [c for _, c in self.blocks]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ContractViolation(f"stratum blocks overlap: {self.blocks}")


@dataclass(frozen=True)
class StratumSchedule:
    """m strata covering the m x m block grid exactly once"""

    strata: Tuple[Stratum, ...]
    m: int

    def __post_init__(self):
        seen = [b for s in self.strata for b in s.blocks]
        grid = {(r, c) for r in range(self.m) for c in range(self.m)}
        if len(seen) != len(set(seen)) or set(seen) != grid:
            raise ContractViolation("strata must cover every block exactly once")

    def __len__(self) -> int:
        return len(self.strata)

    def __getitem__(self, s: int) -> Stratum:
        return self.strata[s]


def make_strata(m: int) -> StratumSchedule:
    """Cyclic shifts: stratum s holds blocks (r, (r + s) mod m)"""
    if m < 1:
        raise ContractViolation("need at least one machine")
    strata = tuple(Stratum(tuple((r, (r + s) % m) for r in range(m))) for s in range(m))
    return StratumSchedule(strata, m)


def item_block_bounds(n_items: int, m: int) -> List[int]:
    """Boundaries of m contiguous item ranges of near-equal width"""
    sizes = [len(a) for a in np.array_split(np.arange(n_items), m)]
    return [0] + list(np.cumsum(sizes).astype(int))


def split_blocks(blocks: Sequence[RatingMatrix], item_bounds: Sequence[int]) -> List[List[RatingMatrix]]:
    """sub[r][c]: ratings of user block r whose item lies in item block c"""
    sub = []
    for block in blocks:
        row = []
        for lo, hi in zip(item_bounds, item_bounds[1:]):
            row.append(block.subset((block.items >= lo) & (block.items < hi)))
        sub.append(row)
    return sub


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _mapper(backend: str, m: int):
    """map(fn, items) sequentially on the simulator, on a thread pool otherwise"""
    if backend == "threaded" and m > 1:
        pool = ThreadPoolExecutor(max_workers=m, thread_name_prefix="machine")
        return pool, lambda fn, items: list(pool.map(fn, items))
    return None, lambda fn, items: [fn(x) for x in items]


def _barrier_ticks(models: Optional[Sequence[MachineModel]], share: float = 1.0) -> int:
    """Ticks of one barriered step: slowest compute plus upload, then the broadcast hop"""
    if models is None:
        return 1
    compute = max(math.ceil(mm.compute_ticks_per_epoch * share) + mm.comm_ticks for mm in models)
    return max(1, compute + max(mm.comm_ticks for mm in models))


def _setup(config: ExperimentConfig, backend: Optional[str], workload: Optional[Workload],
           monitor: Optional[Monitor]):
    backend = backend or config.experiment.backend
    if backend not in ("simulated", "threaded"):
        raise ConfigError(f"unknown backend {backend!r}")
    workload = workload or build_workload(config)
    monitor = monitor or Monitor.from_config(config, workload.evaluator)
    trace = RunTrace(algorithm=config.algorithm, backend=backend)
    return backend, workload, monitor, trace


def _timing(config: ExperimentConfig, backend: str, program) -> Optional[List[MachineModel]]:
    if backend == "simulated" and config.simulation.schedule == "timing":
        return machine_models_for(config, program)
    return None


# ---------------------------------------------------------------------------
# Barriered parameter averaging
# ---------------------------------------------------------------------------

def run_barrier_rounds(program, w0: np.ndarray, trace: RunTrace, monitor: Optional[Monitor] = None,
                       max_rounds: int = 100, backend: str = "simulated",
                       machines: Optional[Sequence[MachineModel]] = None) -> np.ndarray:
    """Every machine steps from the same average, then all wait and the master averages

    Emits the same SEND / INGEST / AGGREGATE / BROADCAST events as the delay
    engine with zero delays; the barrier shows up only in the gather count.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    table = initial_table(program, w0)
    trace.record_broadcast(MasterBroadcast(w0.copy(), 0, 0))
    shared = w0
    tick = 0
    pool, mapper = _mapper(backend, program.m)
    try:
        for k in range(max_rounds):
            basis = shared
            results = mapper(lambda i: program.local_step(i, basis), range(program.m))
            tick = k + 1 if machines is None else tick + _barrier_ticks(machines)
            for i, (payload, rows) in enumerate(results):
                send_and_ingest(table, WorkerMessage(i, payload, k + 1, tick, rows, k), trace)
            trace.stats.record_gather()
            shared = aggregate_and_broadcast(table, k + 1, tick, trace).payload
            trace.final_tick = tick
            trace.epochs_completed = k + 1
            if monitor is not None and monitor.observe(k + 1, tick, shared, table.local_rows, trace.stats):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return shared


def run_sync(config: ExperimentConfig, backend: Optional[str] = None, workload: Optional[Workload] = None,
             monitor: Optional[Monitor] = None) -> RunTrace:
    """Synchronous distributed gradient: the barriered counterpart of run_async"""
    backend, workload, monitor, trace = _setup(config, backend, workload, monitor)
    program = workload.program
    logger.info(f"🚀 Starting synchronous {config.algorithm} on {program.m} machines ({backend} backend)")
    monitor.restart_clock()
    try:
        shared = run_barrier_rounds(program, program.initial_payload(), trace, monitor,
                                    config.stopping.max_epochs, backend, _timing(config, backend, program))
    except DivergedError as e:
        logger.error(f"❌ synchronous {config.algorithm} diverged: {e}")
        raise attach_trace(e, trace)
    finalize_trace(trace, program, shared, monitor)
    logger.info(f"✅ Synchronous run finished after {trace.epochs_completed} epochs, {trace.stats.gathers} barriers")
    return trace


def run_asgd(config: ExperimentConfig, backend: Optional[str] = None, workload: Optional[Workload] = None,
             monitor: Optional[Monitor] = None) -> RunTrace:
    """Factorization epochs on every row block, then Q copies averaged at a barrier"""
    if not config.is_mf:
        raise ConfigError("ASGD needs a rating dataset")
    return run_sync(config, backend, workload, monitor)


# ---------------------------------------------------------------------------
# DSGD
# ---------------------------------------------------------------------------

def process_stratum(program: MfProgram, q: np.ndarray, stratum: Stratum, sub_blocks: List[List[RatingMatrix]],
                    item_bounds: Sequence[int], mapper=None, block_order: Optional[Sequence[int]] = None) -> np.ndarray:
    """One sub-epoch: every block of the stratum runs from the same Q, then rows are merged

    Machine r owns user block r; it updates its P rows and the Q rows of its
    item block. Updates to the program's P blocks happen in place; the merged
    Q is returned.
    """
    mapper = mapper or (lambda fn, items: [fn(x) for x in items])
    blocks = list(stratum.blocks)
    if block_order is not None:
        blocks = [blocks[j] for j in block_order]

    def work(block: Block) -> Optional[FactorState]:
        r, c = block
        ratings = sub_blocks[r][c]
        if len(ratings) == 0:
            return None
        state = FactorState(program.p_blocks[r], q, row_offset=program.row_offset(r))
        return mf_local_epoch(state, ratings, program.gamma, program.spec, program.rngs[r], n_steps=len(ratings))

    results = mapper(work, blocks)
    merged = q.copy()
    for (r, c), state in zip(blocks, results):
        if state is None:
            continue
        program.p_blocks[r] = state.p_block
        lo, hi = item_bounds[c], item_bounds[c + 1]
        merged[lo:hi] = state.q_shared[lo:hi]
    return merged


def run_dsgd(config: ExperimentConfig, backend: Optional[str] = None, workload: Optional[Workload] = None,
             monitor: Optional[Monitor] = None) -> RunTrace:
    """Stratified SGD: M sub-epochs per epoch, each followed by a barrier"""
    if not config.is_mf:
        raise ConfigError("DSGD needs a rating dataset")
    backend, workload, monitor, trace = _setup(config, backend, workload, monitor)
    program: MfProgram = workload.program
    m = program.m
    schedule = make_strata(m)
    bounds = item_block_bounds(program.n_items, m)
    sub_blocks = split_blocks(program.blocks, bounds)
    machines = _timing(config, backend, program)
    order_rng = np.random.default_rng([config.experiment.seed, SHUFFLE_STREAM])
    stats = trace.stats
    q = program.initial_payload()
    trace.record_broadcast(MasterBroadcast(q.copy(), 0, 0))
    tick = 0
    pool, mapper = _mapper(backend, m)
    logger.info(f"🚀 Starting dsgd on {m} machines ({backend} backend, {len(schedule)} strata)")
    monitor.restart_clock()
    try:
        for epoch in range(1, config.stopping.max_epochs + 1):
            order = order_rng.permutation(m) if config.protocol.shuffle_strata else range(m)
            for s in order:
                stratum = schedule[int(s)]
                q = process_stratum(program, q, stratum, sub_blocks, bounds, mapper)
                if machines is None:
                    tick += 1
                else:
                    share = max(len(sub_blocks[r][c]) / max(1, len(program.blocks[r])) for r, c in stratum.blocks)
                    tick += _barrier_ticks(machines, share)
                for r, c in stratum.blocks:
                    stats.record_send()
                    stats.record_receive()
                    trace.record(TraceEvent(tick, SEND, r, epoch))
                    trace.record(TraceEvent(tick, INGEST, r, epoch))
                stats.record_gather()
                stats.record_broadcast()
                trace.record(TraceEvent(tick, AGGREGATE, 0, epoch))
                trace.record(TraceEvent(tick, BROADCAST, 0, epoch))
            trace.record_broadcast(MasterBroadcast(q.copy(), epoch, tick))
            trace.final_tick = tick
            trace.epochs_completed = epoch
            if monitor.observe(epoch, tick, q, program.p_blocks, stats):
                break
    except DivergedError as e:
        logger.error(f"❌ dsgd diverged: {e}")
        raise attach_trace(e, trace)
    finally:
        if pool is not None:
            pool.shutdown()
    finalize_trace(trace, program, q, monitor)
    logger.info(f"✅ dsgd finished after {trace.epochs_completed} epochs, {stats.gathers} barriers")
    return trace


# ---------------------------------------------------------------------------
# Gradient-exchanging SVRG baselines
# ---------------------------------------------------------------------------

def _svrg_program(workload: Workload) -> SvrgProgram:
    if not isinstance(workload.program, SvrgProgram):
        raise ConfigError("this baseline needs a mini-batch classification program")
    return workload.program


def run_sync_svrg(config: ExperimentConfig, backend: Optional[str] = None, workload: Optional[Workload] = None,
                  monitor: Optional[Monitor] = None) -> RunTrace:
    """Variance-reduced mini-batch gradients all-gathered and averaged after every step

    Every worker keeps its own parameter copy and applies the same averaged
    update, so the copies stay bit-identical.
    """
    backend, workload, monitor, trace = _setup(config, backend, workload, monitor)
    program = _svrg_program(workload)
    m, steps = program.m, program.steps_per_epoch()
    machines = _timing(config, backend, program)
    stats = trace.stats
    w0 = program.initial_payload()
    copies = [w0.copy() for _ in range(m)]
    trace.record_broadcast(MasterBroadcast(w0.copy(), 0, 0))
    tick = 0
    pool, mapper = _mapper(backend, m)
    logger.info(f"🚀 Starting sync_svrg on {m} machines, {steps} mini-batches per epoch")
    monitor.restart_clock()
    try:
        for epoch in range(1, config.stopping.max_epochs + 1):
            for i in range(m):
                program.begin_epoch(i, copies[i])
            for t in range(steps):
                step = (epoch - 1) * steps + t + 1
                grads = mapper(lambda i: program.batch_gradient(i, copies[i]), range(m))
                tick = step if machines is None else tick + _barrier_ticks(machines, 1.0 / steps)
                for i in range(m):
                    stats.record_send()
                    stats.record_receive()
                    trace.record(TraceEvent(tick, SEND, i, epoch, basis_round=step - 1))
                    trace.record(TraceEvent(tick, INGEST, i, epoch))
                stats.record_gather()
                update = program.gamma * np.mean(np.stack(grads), axis=0)
                copies = [c - update for c in copies]
                if any(not np.array_equal(c, copies[0]) for c in copies[1:]):
                    raise ProtocolViolation(f"worker parameters diverged from each other at step {step}")
                if not np.all(np.isfinite(copies[0])):
                    raise DivergedError(f"sync_svrg diverged at step {step}", iterate=copies[0] + update, step=step)
                stats.record_broadcast()
                trace.record(TraceEvent(tick, AGGREGATE, 0, step))
                trace.record(TraceEvent(tick, BROADCAST, 0, step))
                trace.record_broadcast(MasterBroadcast(copies[0].copy(), step, tick))
            trace.final_tick = tick
            trace.epochs_completed = epoch
            if monitor.observe(epoch, tick, copies[0], None, stats):
                break
    except DivergedError as e:
        logger.error(f"❌ sync_svrg diverged: {e}")
        raise attach_trace(e, trace)
    finally:
        if pool is not None:
            pool.shutdown()
    finalize_trace(trace, program, copies[0], monitor)
    logger.info(f"✅ sync_svrg finished after {trace.epochs_completed} epochs, {stats.sends} sends")
    return trace


def run_async_svrg_delay(program: SvrgProgram, w0: np.ndarray, schedule, trace: RunTrace,
                         monitor: Optional[Monitor] = None, max_epochs: int = 100) -> np.ndarray:
    """Mini-batch gradient exchange on the delay clock

    Round r is one mini-batch per machine. Machine i computes its gradient at
    the parameter of round r - d(i, r); the master applies each gradient with
    step gamma / M in machine order and broadcasts after every application.
    Anchors are refreshed from the basis at each worker's epoch start.
    """
    m, steps = program.m, program.steps_per_epoch()
    stats = trace.stats
    w = np.asarray(w0, dtype=np.float64).copy()
    first = MasterBroadcast(w.copy(), 0, 0)
    trace.record_broadcast(first)
    recent = deque([first], maxlen=schedule.d_max + 1)
    step_size = program.gamma / m
    for epoch in range(1, max_epochs + 1):
        for t in range(steps):
            r = (epoch - 1) * steps + t
            tick = r + 1
            for i in range(m):
                basis_round = r - schedule.delay(i, r)
                basis = recent[basis_round - recent[0].master_round].payload
                if t == 0:
                    program.begin_epoch(i, basis)
                g = program.batch_gradient(i, basis)
                stats.record_send()
                stats.record_receive()
                trace.record(TraceEvent(tick, SEND, i, epoch, basis_round=basis_round))
                trace.record(TraceEvent(tick, INGEST, i, epoch))
                w = w - step_size * g
                if not np.all(np.isfinite(w)):
                    raise DivergedError(f"async_svrg diverged at mini-batch round {r}", iterate=w + step_size * g,
                                        step=r)
                stats.record_broadcast()
                trace.record(TraceEvent(tick, BROADCAST, 0, r + 1))
            broadcast = MasterBroadcast(w.copy(), r + 1, tick)
            trace.record_broadcast(broadcast)
            recent.append(broadcast)
            trace.final_tick = tick
        trace.epochs_completed = epoch
        if monitor is not None and monitor.observe(epoch, trace.final_tick, w, None, stats):
            break
    return w


def run_async_svrg(config: ExperimentConfig, backend: Optional[str] = None, workload: Optional[Workload] = None,
                   monitor: Optional[Monitor] = None) -> RunTrace:
    """Workers send mini-batch gradients; the master applies them on arrival and broadcasts"""
    backend, workload, monitor, trace = _setup(config, backend, workload, monitor)
    program = _svrg_program(workload)
    logger.info(f"🚀 Starting async_svrg on {program.m} machines ({backend} backend)")
    monitor.restart_clock()
    try:
        w0 = program.initial_payload()
        if backend == "threaded":
            w = run_threaded_gradients(program, w0, trace, monitor, config.stopping.max_epochs)
        else:
            w = run_async_svrg_delay(program, w0, delay_schedule_for(config), trace, monitor,
                                     config.stopping.max_epochs)
    except DivergedError as e:
        logger.error(f"❌ async_svrg diverged: {e}")
        raise attach_trace(e, trace)
    finalize_trace(trace, program, w, monitor)
    logger.info(f"✅ async_svrg finished after {trace.epochs_completed} epochs, {trace.stats.sends} sends")
    return trace


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

RUNNERS: Dict[str, Callable[..., RunTrace]] = {
    "adg_bc": run_async,
    "adg_mf": run_async,
    "plain_gradient": run_async,
    "sync_svrg": run_sync_svrg,
    "async_svrg": run_async_svrg,
    "asgd": run_asgd,
    "dsgd": run_dsgd,
}


def run_algorithm(config: ExperimentConfig, backend: Optional[str] = None, workload: Optional[Workload] = None,
                  monitor: Optional[Monitor] = None) -> RunTrace:
    return RUNNERS[config.algorithm](config, backend, workload, monitor)
