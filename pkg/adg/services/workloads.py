"""
Workload assembly: data, splits, partition, per-machine program and evaluator for one config
"""
import logging
from dataclasses import dataclass
from typing import Any, List

from adg.core.exceptions import ConfigError, ContractViolation, DataError
from adg.models import LogisticLossSpec, MfLossSpec, Partition
from adg.schemas.experiment import ExperimentConfig
from adg.services.data_io import (
    load_ratings,
    load_sparse_classification,
    partition,
    shards_of,
    split_dataset,
    synth_classification,
    synth_ratings,
)
from adg.services.losses import LogisticShard
from adg.services.metrics import ModelEvaluator
from adg.services.programs import GradientProgram, MfProgram, SvrgProgram

logger = logging.getLogger(__name__)


@dataclass
class Workload:
    program: Any
    evaluator: ModelEvaluator
    partition: Partition
    shards: List[Any]
    train: Any
    validation: Any
    test: Any
    spec: Any

    @property
    def m(self) -> int:
        return self.partition.m


def load_source(config: ExperimentConfig):
    data = config.data
    seed = config.experiment.seed
    if data.source == "synthetic_classification":
        return synth_classification(data.n, data.d, data.separation, data.noise, seed)
    if data.source == "synthetic_ratings":
        return synth_ratings(data.n_users, data.n_items, data.k_true, data.noise, data.density, seed)
    if data.source == "sparse_file":
        return load_sparse_classification(data.path, data.dim)
    return load_ratings(data.path, data.format)


def build_workload(config: ExperimentConfig) -> Workload:
    """Load or generate the data, split it and set up each machine's program"""
    full = load_source(config)
    if len(full) == 0:
        raise DataError("dataset is empty")
    train, validation, test = split_dataset(full, config.data.split, config.experiment.seed)
    if len(train) == 0:
        raise DataError("training split is empty")
    m = config.m
    opt = config.optimizer
    seed = config.experiment.seed

    if config.is_mf:
        spec = MfLossSpec(lam=opt.lam, k_latent=opt.k_latent)
        part = partition(train, m, "user_row_blocks")
        shards = shards_of(train, part)
        program = MfProgram(shards, part.boundaries, train.n_users, train.n_items, spec, opt.gamma, seed)
    else:
        spec = LogisticLossSpec(lam=opt.lam, n_total=train.n)
        part = partition(train, m, "example_round_robin")
        shards = shards_of(train, part)
        if min(len(s) for s in shards) == 0:
            raise DataError(f"{train.n} training examples cannot fill {m} machines")
        if config.algorithm == "plain_gradient":
            program = GradientProgram([LogisticShard(s, spec) for s in shards], opt.gamma)
        else:
            try:
                program = SvrgProgram(shards, spec, opt.gamma, opt.batch_size, opt.t_max, seed)
            except ContractViolation as e:
                raise ConfigError(str(e)) from e

    evaluator = ModelEvaluator(train, validation, test, spec, config.evaluation.unseen_policy)
    logger.info(
        f"Workload ready: {config.algorithm} on {len(train)} training records "
        f"({len(validation)} validation, {len(test)} test) over {m} machines"
    )
    return Workload(program, evaluator, part, shards, train, validation, test, spec)


def compute_ticks_for(config: ExperimentConfig, program) -> List[int]:
    """Per-machine ticks of one local epoch in timing mode"""
    sim = config.simulation
    ticks = list(sim.compute_ticks) if sim.compute_ticks else [program.work_units(i) for i in range(program.m)]
    if sim.slowdown:
        ticks = [t * s for t, s in zip(ticks, sim.slowdown)]
    return ticks
