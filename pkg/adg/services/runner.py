"""
Experiment runner: one config in, metrics CSV, event trace and model file out
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from adg.config import settings
from adg.core.exceptions import ConfigError, DivergedError
from adg.models import RunTrace
from adg.schemas.experiment import ExperimentConfig
from adg.schemas.metrics import MetricsRow, SpeedupRow
from adg.services.baselines import run_algorithm
from adg.services.metrics import Monitor, write_metrics_csv
from adg.services.workloads import build_workload

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
TRACE_FILE = "trace.jsonl"
MODEL_FILE = "model.npz"
SPEEDUP_FILE = "speedup.csv"


@dataclass
class ExperimentResult:
    trace: RunTrace
    rows: List[MetricsRow]
    output_dir: Optional[Path] = None
    files: List[Path] = field(default_factory=list)

    @property
    def summary(self) -> MetricsRow:
        return self.rows[-1]

    @property
    def epoch_rows(self) -> List[MetricsRow]:
        return [r for r in self.rows if r.row_kind == "epoch"]


def output_dir_for(config: ExperimentConfig, output_dir: Union[str, Path, None] = None) -> Path:
    return Path(output_dir or settings.ADG_OUTPUT_DIR) / config.experiment.name


def write_outputs(trace: RunTrace, rows: Sequence[MetricsRow], directory: Path) -> List[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    files = [write_metrics_csv(rows, directory / METRICS_FILE), trace.write_jsonl(directory / TRACE_FILE)]
    if trace.final_model:
        model_path = directory / MODEL_FILE
        np.savez(model_path, **trace.final_model)
        files.append(model_path)
    return files


def run_experiment(config: ExperimentConfig, output_dir: Union[str, Path, None] = None,
                   backend: Optional[str] = None, write: bool = True) -> ExperimentResult:
    """Run one configured algorithm and emit its per-epoch rows plus a summary row

    On divergence the rows gathered so far are still written before the
    error propagates.
    """
    logger.info(f"Starting run {config.experiment.name!r}: {config.algorithm}, m={config.m}")
    workload = build_workload(config)
    monitor = Monitor.from_config(config, workload.evaluator)
    directory = output_dir_for(config, output_dir) if write else None
    try:
        trace = run_algorithm(config, backend, workload, monitor)
    except DivergedError as e:
        if directory is not None and e.trace is not None:
            rows = list(monitor.rows) + [monitor.summary_row(e.trace.final_tick, e.trace.stats)]
            write_outputs(e.trace, rows, directory)
            logger.error(f"❌ Partial results of the diverged run written to {directory}")
        raise
    rows = list(monitor.rows) + [monitor.summary_row(trace.final_tick, trace.stats)]
    files = write_outputs(trace, rows, directory) if directory is not None else []
    if directory is not None:
        logger.info(f"Run complete: {len(rows) - 1} epoch rows written to {directory}")
    return ExperimentResult(trace, rows, directory, files)


def _for_workers(config: ExperimentConfig, m: int) -> ExperimentConfig:
    # per-machine lists only make sense for the machine count they were written for
    simulation = {}
    if config.simulation.compute_ticks and m != config.m:
        simulation["compute_ticks"] = []
    if config.simulation.slowdown and m != config.m:
        simulation["slowdown"] = []
    return config.with_updates(experiment={"m": m}, simulation=simulation)


def measure_speedup(config: ExperimentConfig, worker_counts: Sequence[int], target: Optional[float] = None,
                    backend: Optional[str] = None) -> List[SpeedupRow]:
    """Time to reach a training-objective target at each worker count

    The simulated backend measures logical ticks, the threaded one wall
    seconds. Speedup is relative to the smallest worker count; runs that
    never reach the target within max_epochs are reported as censored.
    """
    if not worker_counts:
        raise ConfigError("at least one worker count is required")
    target = config.stopping.target_objective if target is None else target
    if target is None:
        raise ConfigError("speedup needs stopping.target_objective or an explicit target")
    backend = backend or config.experiment.backend
    unit = "seconds" if backend == "threaded" else "ticks"
    rows = []
    for m in sorted(set(worker_counts)):
        run_config = _for_workers(config, m)
        workload = build_workload(run_config)
        monitor = Monitor.from_config(run_config, workload.evaluator, target=target,
                                      stop_at_target=True, stop_on_plateau=False)
        run_algorithm(run_config, backend, workload, monitor)
        if monitor.target_epoch is None:
            logger.warning(f"Target {target} not reached with {m} workers within "
                           f"{run_config.stopping.max_epochs} epochs; censored")
            rows.append(SpeedupRow(workers=m, censored=True, time_unit=unit))
            continue
        elapsed = float(monitor.target_seconds if unit == "seconds" else monitor.target_tick)
        rows.append(SpeedupRow(workers=m, censored=False, time_to_target=elapsed,
                               epochs_to_target=monitor.target_epoch,
                               time_per_epoch=elapsed / monitor.target_epoch, time_unit=unit))
    base = rows[0]
    for row in rows:
        if not (row.censored or base.censored) and row.time_to_target > 0:
            row.speedup = base.time_to_target / row.time_to_target
    logger.info("Speedup: " + ", ".join(f"{r.workers}->{r.speedup}" for r in rows))
    return rows


def write_speedup_csv(rows: Sequence[SpeedupRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SpeedupRow.columns())
        writer.writeheader()
        for row in rows:
            writer.writerow(row.csv_record())
    return path
