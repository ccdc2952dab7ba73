"""
Local solver state: factor blocks, solver configuration and seeded random streams
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from adg.core.exceptions import ContractViolation


@dataclass
class FactorState:
    """Local user rows P_b plus the shared item matrix Q

    `row_offset` is the global index of the first user in `p_block`.
    """

    p_block: np.ndarray
    q_shared: np.ndarray
    row_offset: int = 0

    def __post_init__(self):
        self.p_block = np.asarray(self.p_block, dtype=np.float64)
        self.q_shared = np.asarray(self.q_shared, dtype=np.float64)
        if self.p_block.ndim != 2 or self.q_shared.ndim != 2:
            raise ContractViolation("factor blocks must be matrices")
        if self.p_block.shape[1] != self.q_shared.shape[1]:
            raise ContractViolation(
                f"latent dimension mismatch: P has {self.p_block.shape[1]}, Q has {self.q_shared.shape[1]}"
            )

    @property
    def k_latent(self) -> int:
        return self.q_shared.shape[1]

    def copy(self) -> "FactorState":
        return FactorState(self.p_block.copy(), self.q_shared.copy(), self.row_offset)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.p_block)) and np.all(np.isfinite(self.q_shared)))


@dataclass
class RngState:
    """Reproducible random stream keyed by (seed, stream)

    The generator is created lazily and kept, so successive epochs on the
    same machine continue one stream instead of replaying it.
    """

    seed: int
    stream: int = 0
    _generator: Optional[np.random.Generator] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream < 0:
            raise ContractViolation("seed and stream must be non-negative")

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            self._generator = np.random.default_rng([self.seed, self.stream])
        return self._generator

    def spawn(self, stream: int) -> "RngState":
        return RngState(self.seed, stream)


@dataclass(frozen=True)
class SvrgEpochConfig:
    t_max: int
    batch_size: int
    gamma: float

    def __post_init__(self):
        if self.t_max < 1:
            raise ContractViolation("t_max must be at least 1")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be at least 1")
        if not (self.gamma >= 0 and np.isfinite(self.gamma)):
            raise ContractViolation(f"gamma must be a finite non-negative number, got {self.gamma}")
