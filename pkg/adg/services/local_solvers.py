"""
Local solver service: the per-machine work done between two exchanges

- gradient_local_step: one full-shard gradient step from the (possibly stale) average
- svrg_local_epoch: variance-reduced mini-batch epoch anchored at the received parameter
- mf_local_epoch: SGD epoch over a machine's row block of the rating matrix
"""
import logging
from typing import Optional, Sequence, Union

import numpy as np

from adg.core.exceptions import ContractViolation, DivergedError
from adg.models import FactorState, LogisticLossSpec, MfLossSpec, Rating, RatingMatrix, RngState, SvrgEpochConfig
from adg.services.losses import as_dataset, as_shard_objective, logistic_rows_gradient

logger = logging.getLogger(__name__)


def _check_gamma(gamma: float) -> None:
    if not (gamma >= 0 and np.isfinite(gamma)):
        raise ContractViolation(f"gamma must be a finite non-negative number, got {gamma}")


def gradient_local_step(w_bar_delayed, shard, gamma: float, spec: Optional[LogisticLossSpec] = None) -> np.ndarray:
    """w - gamma * grad L_i(w), with L_i the shard's mean objective"""
    _check_gamma(gamma)
    objective = as_shard_objective(shard, spec)
    w = np.asarray(w_bar_delayed, dtype=np.float64)
    if w.shape != (objective.dim,):
        raise ContractViolation(f"parameter has shape {w.shape}, expected ({objective.dim},)")
    w_next = w - gamma * objective.gradient(w)
    if not np.all(np.isfinite(w_next)):
        raise DivergedError("gradient step produced a non-finite iterate", iterate=w.copy(), step=0)
    return w_next


def svrg_local_epoch(w_tilde, shard, cfg: SvrgEpochConfig, spec: LogisticLossSpec, rng: RngState) -> np.ndarray:
    """Variance-reduced epoch anchored at w_tilde

    Each of the t_max iterations draws a mini-batch of batch_size distinct
    examples and applies w <- w - gamma (g_I(w) - g_I(w_tilde) + mu), where mu
    is the full-shard gradient at w_tilde.
    """
    data = as_dataset(shard)
    if data.n < cfg.batch_size:
        raise ContractViolation(f"shard of {data.n} examples is smaller than batch size {cfg.batch_size}")
    w_tilde = np.asarray(w_tilde, dtype=np.float64)
    if w_tilde.shape != (data.dim,):
        raise ContractViolation(f"parameter has shape {w_tilde.shape}, expected ({data.dim},)")

    features, labels = data.features, data.labels
    mu = logistic_rows_gradient(w_tilde, features, labels, spec)
    gen = rng.generator
    w = w_tilde.copy()
    for t in range(cfg.t_max):
        batch = gen.choice(data.n, size=cfg.batch_size, replace=False)
        x_b, y_b = features[batch], labels[batch]
        g = logistic_rows_gradient(w, x_b, y_b, spec) - logistic_rows_gradient(w_tilde, x_b, y_b, spec) + mu
        w_next = w - cfg.gamma * g
        if not np.all(np.isfinite(w_next)):
            raise DivergedError(f"variance-reduced step {t} produced a non-finite iterate", iterate=w, step=t)
        w = w_next
    return w


def _as_rating_matrix(block_ratings: Union[RatingMatrix, Sequence[Rating]], state: FactorState) -> RatingMatrix:
    if isinstance(block_ratings, RatingMatrix):
        return block_ratings
    return RatingMatrix.from_ratings(
        block_ratings,
        n_users=state.row_offset + state.p_block.shape[0],
        n_items=state.q_shared.shape[0],
    )


def mf_local_epoch(state: FactorState, block_ratings, gamma: float, spec: MfLossSpec, rng: RngState,
                   n_steps: Optional[int] = None) -> FactorState:
    """n_steps SGD steps on ratings drawn uniformly with replacement from the block

    Both gradients of a step are taken at the pre-step rows, then applied
    together. The input state is left untouched.
    """
    _check_gamma(gamma)
    ratings = _as_rating_matrix(block_ratings, state)
    if len(ratings) == 0:
        raise ContractViolation("block has no ratings")
    if state.k_latent != spec.k_latent:
        raise ContractViolation(f"factor width {state.k_latent} does not match K={spec.k_latent}")
    rows = ratings.users - state.row_offset
    if rows.min() < 0 or rows.max() >= state.p_block.shape[0]:
        raise ContractViolation("block contains ratings of users outside the local row range")
    if ratings.items.max() >= state.q_shared.shape[0]:
        raise ContractViolation("block contains items outside the shared item matrix")
    if n_steps is None:
        n_steps = len(ratings)
    if n_steps < 1:
        raise ContractViolation("n_steps must be positive")

    p_mat = state.p_block.copy()
    q_mat = state.q_shared.copy()
    picks = rng.generator.integers(0, len(ratings), size=n_steps)
    lam = spec.lam
    for step, j in enumerate(picks):
        u, i, r = rows[j], ratings.items[j], ratings.values[j]
        p = p_mat[u].copy()
        q = q_mat[i].copy()
        err = r - q @ p
        if not np.isfinite(err):
            raise DivergedError(f"factor update diverged at step {step}",
                                iterate=(p_mat, q_mat), step=step)
        p_mat[u] = p - gamma * (-2.0 * err * q + 2.0 * lam * p)
        q_mat[i] = q - gamma * (-2.0 * err * p + 2.0 * lam * q)

    result = FactorState(p_mat, q_mat, state.row_offset)
    if not result.is_finite():
        raise DivergedError("factor update produced non-finite entries", iterate=(p_mat, q_mat), step=n_steps)
    return result


def init_factors(n_users_block: int, n_items: int, spec: MfLossSpec, rng: RngState, row_offset: int = 0) -> FactorState:
    """Entries drawn i.i.d. uniform on [0, 1/sqrt(K)]"""
    if n_users_block < 1 or n_items < 1:
        raise ContractViolation("factor matrices need positive dimensions")
    gen = rng.generator
    high = 1.0 / np.sqrt(spec.k_latent)
    p_block = gen.uniform(0.0, high, size=(n_users_block, spec.k_latent))
    q_shared = gen.uniform(0.0, high, size=(n_items, spec.k_latent))
    return FactorState(p_block, q_shared, row_offset)
