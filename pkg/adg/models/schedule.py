"""
Delay schedules, machine cost models and the error envelope of the delayed-averaging analysis
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional

import numpy as np

from adg.core.exceptions import ContractViolation

DELAY_KINDS = ("constant", "uniform_random", "adversarial_cycle")

# Machines per uniform_random row; worker indices must stay below this.
_ROW_WIDTH = 1024


@lru_cache(maxsize=65536)
def _uniform_row(seed: int, d_max: int, k: int) -> np.ndarray:
    row = np.random.default_rng([seed, d_max, k]).integers(0, d_max + 1, size=_ROW_WIDTH)
    row.setflags(write=False)
    return row


@dataclass(frozen=True)
class DelaySchedule:
    """Delay d(i, k), in master rounds, of the basis machine i steps from at round k"""

    kind: str
    d_max: int
    seed: int = 0
    m: int = 1

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise ContractViolation(f"unknown delay schedule kind {self.kind!r}")
        if self.d_max < 0:
            raise ContractViolation("d_max must be non-negative")
        if self.m < 1:
            raise ContractViolation("a delay schedule needs at least one machine")

    def raw_delay(self, i: int, k: int) -> int:
        if self.kind == "constant":
            return self.d_max
        if self.kind == "uniform_random":
            if i >= _ROW_WIDTH:
                raise ContractViolation(f"uniform_random schedules support at most {_ROW_WIDTH} machines")
            return int(_uniform_row(self.seed, self.d_max, k)[i])
        return self.d_max if i == k % self.m else 0

    def delay(self, i: int, k: int) -> int:
        if i < 0 or k < 0:
            raise ContractViolation("machine and round indices must be non-negative")
        # a basis cannot predate round 0
        return min(self.raw_delay(i, k), k)

    def table(self, rounds: int) -> np.ndarray:
        """rounds x m matrix of delays, for inspection"""
        return np.array([[self.delay(i, k) for i in range(self.m)] for k in range(rounds)], dtype=np.int64)


@dataclass(frozen=True)
class MachineModel:
    """Cost of one local epoch and one message hop on a machine, in logical ticks"""

    compute_ticks_per_epoch: int
    comm_ticks: int = 0

    def __post_init__(self):
        if self.compute_ticks_per_epoch < 1:
            raise ContractViolation("compute_ticks_per_epoch must be at least 1")
        if self.comm_ticks < 0:
            raise ContractViolation("comm_ticks must be non-negative")


def machine_models(compute_ticks: List[int], comm_ticks: int = 0) -> List[MachineModel]:
    return [MachineModel(int(c), comm_ticks) for c in compute_ticks]


@dataclass(frozen=True)
class ErrorEnvelope:
    """(D+1) x M squared distances of recent iterates to the shifted fixed points

    Row d holds ||w_i^{k-d} - w_i*||^2 for every machine i.
    """

    y: np.ndarray
    w_star: np.ndarray
    w_star_shifted: List[np.ndarray]

    def __post_init__(self):
        if self.y.ndim != 2 or self.y.shape[1] != len(self.w_star_shifted):
            raise ContractViolation("envelope must have one column per machine")
        if np.any(self.y < 0):
            raise ContractViolation("squared errors cannot be negative")

    @property
    def d_max(self) -> int:
        return self.y.shape[0] - 1

    @property
    def m(self) -> int:
        return self.y.shape[1]

    def linf_norm(self) -> float:
        return float(self.y.max()) if self.y.size else 0.0

    def delayed_mean(self, d: int) -> float:
        return float(self.y[d].mean())

    @staticmethod
    def column_errors(iterates: List[np.ndarray], shifted: List[np.ndarray]) -> np.ndarray:
        return np.array([float(np.sum((w - s) ** 2)) for w, s in zip(iterates, shifted)])

    def replace_rows(self, y: np.ndarray, w_star: Optional[np.ndarray] = None) -> "ErrorEnvelope":
        return ErrorEnvelope(y=y, w_star=self.w_star if w_star is None else w_star,
                             w_star_shifted=self.w_star_shifted)
