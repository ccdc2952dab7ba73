"""
Tests for losses: closed-form values, finite-difference gradient checks, smoothness bounds
"""
import math

import numpy as np
import pytest
from scipy import linalg, sparse

from adg.core.exceptions import ContractViolation
from adg.models import ClassificationDataset, LabeledExample, LogisticLossSpec, MfLossSpec, RatingMatrix
from adg.services.losses import (
    QuadraticShard,
    estimate_smoothness,
    global_objective,
    global_objective_mean,
    logistic_grad,
    logistic_loss,
    mf_grad,
    mf_loss,
    mf_objective,
    shard_mean_gradient,
)

H = 1e-6


def _example(x, label):
    return LabeledExample.from_dense(np.asarray(x, dtype=float), label)


def _close(numeric, analytic, rtol=1e-5):
    return abs(numeric - analytic) <= rtol * max(abs(analytic), 1.0)


def test_logistic_loss_at_zero_is_log_two():
    spec = LogisticLossSpec(lam=3.0, n_total=10)
    assert logistic_loss(np.zeros(3), _example([1.0, -2.0, 0.5], 1), spec) == pytest.approx(math.log(2.0))


def test_logistic_loss_saturates():
    spec = LogisticLossSpec(lam=0.0, n_total=1)
    ex = _example([1.0, 0.0], 1)
    value = logistic_loss(np.array([50.0, 0.0]), ex, spec)
    assert 0.0 <= value <= 2e-22


def test_logistic_loss_matches_direct_formula():
    spec = LogisticLossSpec(lam=0.5, n_total=1)
    w = np.array([1.0, 1.0])
    value = logistic_loss(w, _example([1.0, 0.0], -1), spec)
    expected = math.log(1.0 + math.exp(1.0)) + 0.5 / 2.0 * 2.0
    assert value == pytest.approx(expected, abs=1e-12)


def test_logistic_loss_rejects_wrong_dimension():
    with pytest.raises(ContractViolation):
        logistic_loss(np.zeros(3), _example([1.0, 0.0], 1), LogisticLossSpec(0.0, 1))


def test_logistic_loss_sign_flip_symmetry():
    rng = np.random.default_rng(0)
    spec = LogisticLossSpec(lam=0.0, n_total=1)
    for _ in range(20):
        x, w = rng.standard_normal(4), rng.standard_normal(4)
        assert logistic_loss(w, _example(x, 1), spec) == pytest.approx(logistic_loss(-w, _example(x, -1), spec))


def test_logistic_grad_at_zero():
    grad = logistic_grad(np.zeros(2), [_example([1.0, 0.0], 1)], LogisticLossSpec(0.0, 1))
    np.testing.assert_allclose(grad, [-0.5, 0.0], atol=1e-12)


def test_logistic_grad_saturated_data_term_vanishes():
    grad = logistic_grad(np.array([1000.0, 0.0]), [_example([1.0, 0.0], 1)], LogisticLossSpec(0.0, 1))
    np.testing.assert_allclose(grad, 0.0, atol=1e-300)


def test_logistic_grad_rejects_empty_batch():
    with pytest.raises(ContractViolation):
        logistic_grad(np.zeros(2), [], LogisticLossSpec(0.0, 1))


def test_logistic_gradient_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = int(rng.integers(1, 8))
        spec = LogisticLossSpec(lam=float(rng.uniform(0, 2)), n_total=int(rng.integers(1, 50)))
        ex = _example(rng.standard_normal(d), int(rng.choice([-1, 1])))
        w = rng.standard_normal(d) * 2.0
        grad = logistic_grad(w, [ex], spec)
        direction = rng.standard_normal(d)
        numeric = (logistic_loss(w + H * direction, ex, spec) - logistic_loss(w - H * direction, ex, spec)) / (2 * H)
        assert _close(numeric, float(grad @ direction))


def test_mf_loss_values():
    assert mf_loss([1.0, 0.0], [1.0, 0.0], 2.0, MfLossSpec(0.0, 2)) == 1.0
    assert mf_loss([0.0, 0.0], [0.0, 0.0], 0.0, MfLossSpec(0.7, 2)) == 0.0
    expected = (5.0 - 11.0) ** 2 + 0.05 * (5.0 + 25.0)
    assert mf_loss([1.0, 2.0], [3.0, 4.0], 5.0, MfLossSpec(0.05, 2)) == pytest.approx(expected)


def test_mf_loss_rejects_length_mismatch():
    with pytest.raises(ContractViolation):
        mf_loss([1.0, 0.0], [1.0], 1.0, MfLossSpec(0.0, 2))


def test_mf_loss_is_symmetric_in_factors():
    rng = np.random.default_rng(2)
    spec = MfLossSpec(0.3, 4)
    for _ in range(20):
        p, q, r = rng.standard_normal(4), rng.standard_normal(4), float(rng.standard_normal())
        assert mf_loss(p, q, r, spec) == pytest.approx(mf_loss(q, p, r, spec))
        assert mf_loss(p, q, r, spec) >= 0.0


def test_mf_grad_values():
    grad_p, grad_q = mf_grad([1.0, 0.0], [1.0, 0.0], 2.0, MfLossSpec(0.0, 2))
    np.testing.assert_allclose(grad_p, [-2.0, 0.0])
    np.testing.assert_allclose(grad_q, [-2.0, 0.0])
    grad_p, grad_q = mf_grad([1.0, 1.0], [1.0, 2.0], 3.0, MfLossSpec(0.0, 2))
    np.testing.assert_allclose(grad_p, 0.0)
    np.testing.assert_allclose(grad_q, 0.0)
    grad_p, grad_q = mf_grad([0.0, 0.0], [0.0, 0.0], 1.0, MfLossSpec(0.4, 2))
    np.testing.assert_allclose(grad_p, 0.0)
    np.testing.assert_allclose(grad_q, 0.0)


def test_mf_gradient_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(100):
        k = int(rng.integers(1, 6))
        spec = MfLossSpec(float(rng.uniform(0, 1)), k)
        p, q, r = rng.standard_normal(k), rng.standard_normal(k), float(rng.normal(0, 2))
        grad_p, grad_q = mf_grad(p, q, r, spec)
        dp, dq = rng.standard_normal(k), rng.standard_normal(k)
        numeric = (mf_loss(p + H * dp, q + H * dq, r, spec) - mf_loss(p - H * dp, q - H * dq, r, spec)) / (2 * H)
        assert _close(numeric, float(grad_p @ dp + grad_q @ dq))


def test_shard_mean_gradient_single_and_duplicated():
    rng = np.random.default_rng(4)
    spec = LogisticLossSpec(0.2, 30)
    examples = [_example(rng.standard_normal(5), int(rng.choice([-1, 1]))) for _ in range(6)]
    w = rng.standard_normal(5)
    np.testing.assert_allclose(shard_mean_gradient(w, examples[:1], spec), logistic_grad(w, examples[:1], spec))
    np.testing.assert_allclose(shard_mean_gradient(w, examples + examples, spec),
                               shard_mean_gradient(w, examples, spec), rtol=1e-12)


def test_shard_mean_gradient_matches_brute_force_sum():
    rng = np.random.default_rng(5)
    spec = LogisticLossSpec(0.5, 20)
    examples = [_example(rng.standard_normal(4), int(rng.choice([-1, 1]))) for _ in range(20)]
    w = rng.standard_normal(4)
    total = np.zeros(4)
    for ex in examples:
        x = ex.dense()
        total += -ex.label * x / (1.0 + math.exp(ex.label * float(x @ w))) + spec.reg * w
    np.testing.assert_allclose(shard_mean_gradient(w, examples, spec), total / 20, rtol=1e-12, atol=1e-15)


def test_shard_mean_gradient_is_weighted_average_over_parts():
    rng = np.random.default_rng(6)
    spec = LogisticLossSpec(0.1, 12)
    examples = [_example(rng.standard_normal(3), int(rng.choice([-1, 1]))) for _ in range(12)]
    w = rng.standard_normal(3)
    parts = [examples[:5], examples[5:9], examples[9:]]
    weighted = sum(len(p) * shard_mean_gradient(w, p, spec) for p in parts) / len(examples)
    np.testing.assert_allclose(shard_mean_gradient(w, examples, spec), weighted, rtol=1e-12)


def test_shard_mean_gradient_rejects_empty_shard():
    with pytest.raises(ContractViolation):
        shard_mean_gradient(np.zeros(2), [], LogisticLossSpec(0.0, 1))


def test_global_objective_logistic():
    spec = LogisticLossSpec(0.0, 1)
    ex = _example([0.3, -1.0], 1)
    data = ClassificationDataset.from_examples([ex])
    w = np.array([0.4, 0.2])
    assert global_objective(w, data, spec) == pytest.approx(logistic_loss(w, ex, spec))
    assert global_objective(np.zeros(2), data, spec) == pytest.approx(math.log(2.0))


def test_global_objective_mf_matches_loop():
    rng = np.random.default_rng(7)
    spec = MfLossSpec(0.05, 2)
    ratings = RatingMatrix(users=[0, 0, 1, 2, 2], items=[0, 1, 1, 0, 2], values=[1.0, 2.0, 0.5, -1.0, 3.0],
                           n_users=3, n_items=3)
    p, q = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    expected = sum(mf_loss(p[u], q[i], r, spec) for u, i, r in zip(ratings.users, ratings.items, ratings.values))
    assert global_objective((p, q), ratings, spec) == pytest.approx(expected)
    assert global_objective((p, q), ratings.ratings, spec) == pytest.approx(expected)
    assert global_objective_mean((p, q), ratings, spec) == pytest.approx(expected / 5)
    assert mf_objective(p[1:], q, ratings.subset(ratings.users >= 1), spec, row_offset=1) == pytest.approx(
        sum(mf_loss(p[u], q[i], r, spec) for u, i, r in zip(ratings.users, ratings.items, ratings.values) if u >= 1))


def test_estimate_smoothness():
    spec = LogisticLossSpec(0.0, 1)
    data = ClassificationDataset.from_examples([_example([2.0, 0.0], 1)])
    assert estimate_smoothness(data, spec).l_bound == pytest.approx(1.0)

    zero = ClassificationDataset(features=sparse.csr_matrix((3, 2)), labels=np.ones(3))
    assert estimate_smoothness(zero, LogisticLossSpec(0.6, 3)).l_bound == pytest.approx(0.2)

    with pytest.raises(ContractViolation):
        estimate_smoothness([], spec)


def test_estimate_smoothness_bounds_hessian_eigenvalue():
    rng = np.random.default_rng(8)
    spec = LogisticLossSpec(1.0, 10)
    x = rng.standard_normal((10, 4))
    data = ClassificationDataset(features=sparse.csr_matrix(x), labels=rng.choice([-1.0, 1.0], size=10))
    # at w = 0 every sigmoid curvature equals 1/4
    hessian = 0.25 * x.T @ x / 10 + spec.reg * np.eye(4)
    assert estimate_smoothness(data, spec).l_bound >= linalg.eigvalsh(hessian).max()


def test_quadratic_shard():
    shard = QuadraticShard.centered([2.0])
    assert shard.value(np.array([0.0])) == pytest.approx(2.0)
    np.testing.assert_allclose(shard.gradient(np.array([0.0])), [-2.0])
    assert shard.smoothness() == pytest.approx(1.0)
