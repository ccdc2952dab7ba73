"""
Per-machine programs run between parameter exchanges

A program owns everything machine-local (shard, random stream, local factor
rows) and turns a basis payload into the payload the machine sends next.
Engines in async_core, transport and baselines drive programs without
knowing which algorithm they run.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from adg.core.exceptions import ContractViolation, DivergedError
from adg.models import (
    ClassificationDataset,
    FactorState,
    LogisticLossSpec,
    MfLossSpec,
    RatingMatrix,
    RngState,
    SvrgEpochConfig,
)
from adg.services.local_solvers import gradient_local_step, init_factors, mf_local_epoch, svrg_local_epoch
from adg.services.losses import logistic_rows_gradient

logger = logging.getLogger(__name__)

# Stream id of the shared factor initialisation; machine streams use their index
INIT_STREAM = 2 ** 31 - 1

StepResult = Tuple[np.ndarray, Optional[np.ndarray]]


class GradientProgram:
    """Full-shard gradient step on each machine"""

    def __init__(self, shards: Sequence, gamma: float, w0: Optional[np.ndarray] = None):
        if not shards:
            raise ContractViolation("at least one shard is required")
        self.shards = list(shards)
        self.gamma = gamma
        dim = self.shards[0].dim
        self.w0 = np.zeros(dim) if w0 is None else np.asarray(w0, dtype=np.float64)

    @property
    def m(self) -> int:
        return len(self.shards)

    def initial_payload(self) -> np.ndarray:
        return self.w0.copy()

    def local_step(self, machine: int, basis: np.ndarray) -> StepResult:
        return gradient_local_step(basis, self.shards[machine], self.gamma), None

    def local_rows(self, machine: int) -> Optional[np.ndarray]:
        return None

    def work_units(self, machine: int) -> int:
        data = getattr(self.shards[machine], "data", None)
        return max(1, len(data)) if data is not None else 1


class SvrgProgram:
    """Variance-reduced epochs on example shards

    Also exposes the per-minibatch pieces used by the gradient-exchanging
    baselines and the synchronous warm-start pass.
    """

    def __init__(self, shards: Sequence[ClassificationDataset], spec: LogisticLossSpec, gamma: float,
                 batch_size: int, t_max: Optional[int] = None, seed: int = 0):
        if not shards:
            raise ContractViolation("at least one shard is required")
        self.shards = list(shards)
        self.spec = spec
        self.gamma = gamma
        self.batch_size = batch_size
        for j, shard in enumerate(self.shards):
            if shard.n < batch_size:
                raise ContractViolation(f"shard {j} has {shard.n} examples, fewer than batch size {batch_size}")
        # one pass over the smallest shard unless configured
        self.t_max = t_max if t_max is not None else min(s.n for s in self.shards) // batch_size
        self.cfg = SvrgEpochConfig(t_max=self.t_max, batch_size=batch_size, gamma=gamma)
        self.rngs = [RngState(seed, j) for j in range(len(self.shards))]
        self.dim = self.shards[0].dim
        self._anchors: List[Optional[Tuple[np.ndarray, np.ndarray]]] = [None] * len(self.shards)

    @property
    def m(self) -> int:
        return len(self.shards)

    def initial_payload(self) -> np.ndarray:
        return np.zeros(self.dim)

    def local_step(self, machine: int, basis: np.ndarray) -> StepResult:
        return svrg_local_epoch(basis, self.shards[machine], self.cfg, self.spec, self.rngs[machine]), None

    def local_rows(self, machine: int) -> Optional[np.ndarray]:
        return None

    def work_units(self, machine: int) -> int:
        return self.shards[machine].n

    def steps_per_epoch(self) -> int:
        return self.t_max

    # -- per-minibatch pieces ------------------------------------------------

    def begin_epoch(self, machine: int, anchor: np.ndarray) -> None:
        shard = self.shards[machine]
        anchor = np.array(anchor, dtype=np.float64)
        mu = logistic_rows_gradient(anchor, shard.features, shard.labels, self.spec)
        self._anchors[machine] = (anchor, mu)

    def batch_gradient(self, machine: int, w: np.ndarray) -> np.ndarray:
        """Variance-reduced gradient of one random mini-batch at w"""
        anchor = self._anchors[machine]
        if anchor is None:
            raise ContractViolation(f"machine {machine} has no anchor; call begin_epoch first")
        w_tilde, mu = anchor
        shard = self.shards[machine]
        batch = self.rngs[machine].generator.choice(shard.n, size=self.batch_size, replace=False)
        x_b, y_b = shard.features[batch], shard.labels[batch]
        g = logistic_rows_gradient(w, x_b, y_b, self.spec) - logistic_rows_gradient(w_tilde, x_b, y_b, self.spec) + mu
        if not np.all(np.isfinite(g)):
            raise DivergedError(f"machine {machine} produced a non-finite gradient", iterate=w)
        return g

    def warm_gradient(self, machine: int, w: np.ndarray, t: int) -> np.ndarray:
        """Plain gradient of the t-th sequential mini-batch of the shard"""
        shard = self.shards[machine]
        n_batches = shard.n // self.batch_size
        start = (t % n_batches) * self.batch_size
        rows = slice(start, start + self.batch_size)
        return logistic_rows_gradient(w, shard.features[rows], shard.labels[rows], self.spec)

    def warm_steps(self) -> int:
        return min(s.n for s in self.shards) // self.batch_size


class MfProgram:
    """SGD epochs over contiguous user-row blocks; Q is the exchanged payload

    Factors are initialised once over all users from a dedicated stream and
    sliced per block, so every machine count starts from the same model.
    """

    def __init__(self, blocks: Sequence[RatingMatrix], boundaries: Sequence[int], n_users: int, n_items: int,
                 spec: MfLossSpec, gamma: float, seed: int = 0):
        if len(boundaries) != len(blocks) + 1:
            raise ContractViolation("need m + 1 row boundaries for m blocks")
        self.blocks = list(blocks)
        self.boundaries = [int(b) for b in boundaries]
        self.spec = spec
        self.gamma = gamma
        self.n_users = n_users
        self.n_items = n_items
        init = init_factors(n_users, n_items, spec, RngState(seed, INIT_STREAM))
        self.q0 = init.q_shared
        self.p_blocks = [init.p_block[a:b].copy() for a, b in zip(self.boundaries, self.boundaries[1:])]
        self.rngs = [RngState(seed, j) for j in range(len(self.blocks))]

    @property
    def m(self) -> int:
        return len(self.blocks)

    def initial_payload(self) -> np.ndarray:
        return self.q0.copy()

    def row_offset(self, machine: int) -> int:
        return self.boundaries[machine]

    def local_step(self, machine: int, basis: np.ndarray) -> StepResult:
        block = self.blocks[machine]
        if len(block) == 0:
            return np.array(basis, copy=True), self.p_blocks[machine]
        state = FactorState(self.p_blocks[machine], basis, row_offset=self.boundaries[machine])
        updated = mf_local_epoch(state, block, self.gamma, self.spec, self.rngs[machine])
        self.p_blocks[machine] = updated.p_block
        return updated.q_shared, updated.p_block

    def local_rows(self, machine: int) -> np.ndarray:
        return self.p_blocks[machine]

    def work_units(self, machine: int) -> int:
        return max(1, len(self.blocks[machine]))

    def full_p(self) -> np.ndarray:
        return np.vstack(self.p_blocks)
