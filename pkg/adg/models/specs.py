"""
Loss specifications and smoothness bounds
"""
from dataclasses import dataclass

from adg.core.exceptions import ContractViolation


@dataclass(frozen=True)
class LogisticLossSpec:
    """l2-regularized logistic loss; `n_total` is the global training size in lambda/(2n)"""

    lam: float
    n_total: int

    def __post_init__(self):
        if self.lam < 0:
            raise ContractViolation(f"lambda must be non-negative, got {self.lam}")
        if self.n_total < 1:
            raise ContractViolation(f"n_total must be positive, got {self.n_total}")

    @property
    def reg(self) -> float:
        """Coefficient of w in the per-example gradient"""
        return self.lam / self.n_total


@dataclass(frozen=True)
class MfLossSpec:
    """Squared rating error with per-rating l2 penalty on both factors"""

    lam: float
    k_latent: int

    def __post_init__(self):
        if self.lam < 0:
            raise ContractViolation(f"lambda must be non-negative, got {self.lam}")
        if self.k_latent < 1:
            raise ContractViolation(f"k_latent must be positive, got {self.k_latent}")


@dataclass(frozen=True)
class SmoothnessEstimate:
    """Upper bound on the gradient Lipschitz constant L"""

    l_bound: float

    def __post_init__(self):
        if not self.l_bound > 0:
            raise ContractViolation(f"smoothness bound must be positive, got {self.l_bound}")

    @property
    def safe_gamma(self) -> float:
        """Step size 1/L, always inside the convergent range (0, 2/L)"""
        return 1.0 / self.l_bound
