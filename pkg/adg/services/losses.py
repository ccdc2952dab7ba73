"""
Loss service: objectives, instantaneous losses and exact gradients

Classification uses the l2-regularized logistic loss
    log(1 + exp(-y <w, x>)) + lam / (2 n) ||w||^2
and matrix factorization the per-rating squared error
    (r - <q_i, p_u>)^2 + lam (||p_u||^2 + ||q_i||^2).
All functions are pure.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, sparse
from scipy.special import expit

from adg.core.exceptions import ContractViolation
from adg.models import (
    ClassificationDataset,
    LabeledExample,
    LogisticLossSpec,
    MfLossSpec,
    Rating,
    RatingMatrix,
    SmoothnessEstimate,
)

Batch = Union[ClassificationDataset, Sequence[LabeledExample]]


def as_dataset(batch: Batch) -> ClassificationDataset:
    if isinstance(batch, ClassificationDataset):
        return batch
    return ClassificationDataset.from_examples(batch)


def _check_dim(w: np.ndarray, dim: int) -> None:
    if w.ndim != 1 or w.shape[0] != dim:
        raise ContractViolation(f"parameter has shape {w.shape}, expected ({dim},)")


# ---------------------------------------------------------------------------
# Logistic loss
# ---------------------------------------------------------------------------

def logistic_loss(w, ex: LabeledExample, spec: LogisticLossSpec) -> float:
    w = np.asarray(w, dtype=np.float64)
    _check_dim(w, ex.dim)
    margin = ex.label * float(ex.values @ w[ex.indices])
    return float(np.logaddexp(0.0, -margin) + 0.5 * spec.reg * (w @ w))


def logistic_rows_objective(w: np.ndarray, features: sparse.csr_matrix, labels: np.ndarray,
                            spec: LogisticLossSpec) -> float:
    """Mean logistic loss over the rows of a feature matrix"""
    margins = labels * (features @ w)
    return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * spec.reg * (w @ w))


def logistic_rows_gradient(w: np.ndarray, features: sparse.csr_matrix, labels: np.ndarray,
                           spec: LogisticLossSpec) -> np.ndarray:
    """Mean logistic gradient over the rows of a feature matrix, unchecked"""
    margins = labels * (features @ w)
    coef = -labels * expit(-margins)
    return np.asarray(features.T @ coef).ravel() / labels.shape[0] + spec.reg * w


def logistic_grad(w, batch: Batch, spec: LogisticLossSpec) -> np.ndarray:
    data = as_dataset(batch)
    if data.n == 0:
        raise ContractViolation("gradient of an empty batch is undefined")
    w = np.asarray(w, dtype=np.float64)
    _check_dim(w, data.dim)
    return logistic_rows_gradient(w, data.features, data.labels, spec)


def shard_mean_gradient(w, shard: Batch, spec: LogisticLossSpec) -> np.ndarray:
    data = as_dataset(shard)
    if data.n == 0:
        raise ContractViolation("shard is empty")
    return logistic_grad(w, data, spec)


# ---------------------------------------------------------------------------
# Matrix factorization loss
# ---------------------------------------------------------------------------

def _check_factor_pair(p: np.ndarray, q: np.ndarray, spec: MfLossSpec) -> None:
    if p.shape != q.shape or p.ndim != 1:
        raise ContractViolation(f"factor shapes differ: {p.shape} vs {q.shape}")
    if p.shape[0] != spec.k_latent:
        raise ContractViolation(f"factor length {p.shape[0]} does not match K={spec.k_latent}")


def mf_loss(p_u, q_i, r: float, spec: MfLossSpec) -> float:
    p = np.asarray(p_u, dtype=np.float64)
    q = np.asarray(q_i, dtype=np.float64)
    _check_factor_pair(p, q, spec)
    err = r - float(q @ p)
    return err * err + spec.lam * (float(p @ p) + float(q @ q))


def mf_residual_grads(p: np.ndarray, q: np.ndarray, err, lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients for given residuals; works on single rows and on stacked rows alike"""
    if np.ndim(p) > 1:
        err = np.asarray(err)[:, None]
    grad_p = -2.0 * err * q + 2.0 * lam * p
    grad_q = -2.0 * err * p + 2.0 * lam * q
    return grad_p, grad_q


def mf_grad(p_u, q_i, r: float, spec: MfLossSpec) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p_u, dtype=np.float64)
    q = np.asarray(q_i, dtype=np.float64)
    _check_factor_pair(p, q, spec)
    return mf_residual_grads(p, q, r - float(q @ p), spec.lam)


def mf_objective(p: np.ndarray, q: np.ndarray, ratings: RatingMatrix, spec: MfLossSpec,
                 row_offset: int = 0) -> float:
    """Sum of the per-rating loss over observed ratings

    `p` holds user rows starting at global index `row_offset`.
    """
    if len(ratings) == 0:
        return 0.0
    pu = p[ratings.users - row_offset]
    qi = q[ratings.items]
    err = ratings.values - np.einsum("ij,ij->i", pu, qi)
    reg = np.einsum("ij,ij->i", pu, pu) + np.einsum("ij,ij->i", qi, qi)
    return float(np.sum(err * err) + spec.lam * np.sum(reg))


# ---------------------------------------------------------------------------
# Global objectives
# ---------------------------------------------------------------------------

def global_objective(model, dataset, spec) -> float:
    """Full objective: mean logistic loss, or summed MF loss over observed ratings"""
    if isinstance(dataset, RatingMatrix) or (
        isinstance(dataset, (list, tuple)) and dataset and isinstance(dataset[0], Rating)
    ):
        ratings = dataset if isinstance(dataset, RatingMatrix) else RatingMatrix.from_ratings(dataset)
        if len(ratings) == 0:
            raise ContractViolation("objective of an empty rating set is undefined")
        p, q = model
        p = np.asarray(p, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        if p.shape[1] != spec.k_latent or q.shape[1] != spec.k_latent:
            raise ContractViolation("factor matrices do not match K")
        if ratings.users.max() >= p.shape[0] or ratings.items.max() >= q.shape[0]:
            raise ContractViolation("factor matrices are smaller than the rating index range")
        return mf_objective(p, q, ratings, spec)
    data = as_dataset(dataset)
    if data.n == 0:
        raise ContractViolation("objective of an empty dataset is undefined")
    w = np.asarray(model, dtype=np.float64)
    _check_dim(w, data.dim)
    return logistic_rows_objective(w, data.features, data.labels, spec)


def global_objective_mean(model, dataset, spec) -> float:
    """Objective normalised per record; equals global_objective for classification"""
    value = global_objective(model, dataset, spec)
    if isinstance(dataset, RatingMatrix):
        return value / len(dataset)
    return value


def estimate_smoothness(dataset: Batch, spec: LogisticLossSpec) -> SmoothnessEstimate:
    """Upper bound on the smoothness constant of any shard's mean logistic objective

    The sigmoid curvature never exceeds 1/4, so every per-example Hessian is
    bounded by ||x||^2 / 4; the regularizer adds lam / n_total.
    """
    data = as_dataset(dataset)
    if data.n == 0:
        raise ContractViolation("cannot estimate smoothness of an empty dataset")
    row_norms = np.asarray(data.features.multiply(data.features).sum(axis=1)).ravel()
    l_bound = 0.25 * float(row_norms.max()) + spec.reg
    if l_bound <= 0:
        raise ContractViolation("smoothness bound is zero: all features vanish and lam = 0")
    return SmoothnessEstimate(l_bound)


# ---------------------------------------------------------------------------
# Shard objectives used by the plain-gradient local step
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticShard:
    """L_i(w) = 1/2 ||A w - b||^2"""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        if a.shape[0] != b.shape[0]:
            raise ContractViolation("A and b have incompatible shapes")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def centered(cls, center) -> "QuadraticShard":
        """1/2 ||w - c||^2"""
        c = np.atleast_1d(np.asarray(center, dtype=np.float64))
        return cls(np.eye(c.shape[0]), c)

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    def value(self, w: np.ndarray) -> float:
        r = self.a @ w - self.b
        return 0.5 * float(r @ r)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.a.T @ (self.a @ w - self.b)

    def hessian(self) -> np.ndarray:
        return self.a.T @ self.a

    def smoothness(self) -> float:
        return float(linalg.norm(self.a, 2) ** 2)


@dataclass(frozen=True)
class LogisticShard:
    """Mean logistic objective of one machine's examples"""

    data: ClassificationDataset
    spec: LogisticLossSpec

    @property
    def dim(self) -> int:
        return self.data.dim

    def value(self, w: np.ndarray) -> float:
        return logistic_rows_objective(w, self.data.features, self.data.labels, self.spec)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        if self.data.n == 0:
            raise ContractViolation("shard is empty")
        return logistic_rows_gradient(w, self.data.features, self.data.labels, self.spec)

    def smoothness(self) -> float:
        return estimate_smoothness(self.data, self.spec).l_bound


def as_shard_objective(shard, spec=None):
    """Wrap examples into a shard objective; objects with a gradient pass through"""
    if hasattr(shard, "gradient") and hasattr(shard, "dim"):
        return shard
    if spec is None:
        raise ContractViolation("a loss spec is required for example shards")
    return LogisticShard(as_dataset(shard), spec)


def quadratic_suite_objective(shards: List[QuadraticShard], w: np.ndarray) -> float:
    return float(sum(s.value(w) for s in shards))
