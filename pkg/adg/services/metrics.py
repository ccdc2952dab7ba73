"""
Metrics service: stopping rule, model evaluation, run monitoring and CSV emission
"""
import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from sklearn.metrics import accuracy_score, mean_squared_error

from adg.core.exceptions import ContractViolation, DivergedError
from adg.models import ClassificationDataset, CommStats, MfLossSpec, RatingMatrix
from adg.schemas.metrics import MetricsRow
from adg.services.losses import logistic_rows_objective, mf_objective

logger = logging.getLogger(__name__)

UNSEEN_POLICIES = ("skip", "global_mean")


def should_stop(history: Sequence[float], epsilon: float, max_epochs: Optional[int] = None) -> bool:
    """True once two consecutive objectives differ by less than epsilon, or max_epochs values were seen"""
    if not epsilon > 0:
        raise ContractViolation("epsilon must be positive")
    if max_epochs is not None and len(history) >= max_epochs:
        return True
    if len(history) < 2:
        return False
    return abs(history[-1] - history[-2]) < epsilon


@dataclass(frozen=True)
class RmseReport:
    rmse: float
    evaluated: int
    skipped: int
    fallback: int


def rmse_report(p: np.ndarray, q: np.ndarray, test: RatingMatrix,
                seen_users: Optional[np.ndarray] = None, seen_items: Optional[np.ndarray] = None,
                unseen_policy: str = "skip", global_mean: float = 0.0) -> RmseReport:
    """RMSE of <q_i, p_u> against test ratings with an unseen-user/item policy

    `seen_users` / `seen_items` are boolean masks of indices present in training;
    when omitted every index counts as seen.
    """
    if len(test) == 0:
        raise ContractViolation("test set is empty")
    if unseen_policy not in UNSEEN_POLICIES:
        raise ContractViolation(f"unknown unseen policy {unseen_policy!r}")
    known = np.ones(len(test), dtype=bool)
    if seen_users is not None:
        known &= seen_users[test.users]
    if seen_items is not None:
        known &= seen_items[test.items]
    predictions = np.full(len(test), float(global_mean))
    predictions[known] = np.einsum("ij,ij->i", p[test.users[known]], q[test.items[known]])
    if unseen_policy == "skip":
        if not known.any():
            raise ContractViolation("every test rating involves an unseen user or item")
        rmse = math.sqrt(mean_squared_error(test.values[known], predictions[known]))
        return RmseReport(rmse, int(known.sum()), int((~known).sum()), 0)
    rmse = math.sqrt(mean_squared_error(test.values, predictions))
    return RmseReport(rmse, len(test), 0, int((~known).sum()))


def evaluate_rmse(p: np.ndarray, q: np.ndarray, test: RatingMatrix, **kwargs) -> float:
    report = rmse_report(p, q, test, **kwargs)
    if report.skipped:
        logger.warning(f"Skipped {report.skipped} test ratings of unseen users or items")
    return report.rmse


def evaluate_accuracy(w: np.ndarray, test: ClassificationDataset) -> float:
    """Fraction of examples where sign(<w, x>) matches the label; zero margins count as +1"""
    if test.n == 0:
        raise ContractViolation("test set is empty")
    predicted = np.where(test.features @ w >= 0, 1.0, -1.0)
    return float(accuracy_score(test.labels, predicted))


class ModelEvaluator:
    """Objectives and test metric of a shared payload plus the machines' local rows"""

    def __init__(self, train, validation, test, spec, unseen_policy: str = "skip"):
        self.train = train
        self.validation = validation if validation is not None and len(validation) else None
        self.test = test if test is not None and len(test) else None
        self.spec = spec
        self.unseen_policy = unseen_policy
        self.is_mf = isinstance(spec, MfLossSpec)
        if self.is_mf:
            self.seen_users = np.bincount(train.users, minlength=train.n_users) > 0
            self.seen_items = np.bincount(train.items, minlength=train.n_items) > 0
            self.global_mean = float(train.values.mean()) if len(train) else 0.0

    def _objective(self, data, shared: np.ndarray, p: Optional[np.ndarray]) -> float:
        if self.is_mf:
            return mf_objective(p, shared, data, self.spec)
        return logistic_rows_objective(shared, data.features, data.labels, self.spec)

    def model(self, shared: np.ndarray, local_rows: Optional[Sequence[np.ndarray]] = None):
        if self.is_mf:
            return np.vstack(list(local_rows)), shared
        return shared

    def train_objective(self, shared: np.ndarray, p: Optional[np.ndarray] = None) -> float:
        return self._objective(self.train, shared, p)

    def train_objective_mean(self, value: float) -> float:
        return value / len(self.train) if self.is_mf else value

    def validation_objective(self, shared: np.ndarray, p: Optional[np.ndarray] = None) -> Optional[float]:
        if self.validation is None:
            return None
        return self._objective(self.validation, shared, p)

    def test_metric(self, shared: np.ndarray, p: Optional[np.ndarray] = None) -> Optional[float]:
        if self.test is None:
            return None
        if self.is_mf:
            return rmse_report(p, shared, self.test, self.seen_users, self.seen_items,
                               self.unseen_policy, self.global_mean).rmse
        return evaluate_accuracy(shared, self.test)


class Monitor:
    """Evaluates the master's model each round, keeps MetricsRows and decides when to stop

    Stops on the validation plateau rule, on max_epochs, or (when
    stop_at_target is set) once the training objective reaches target.
    """

    def __init__(self, evaluator: Optional[ModelEvaluator], epsilon: float = 1e-4, max_epochs: int = 100,
                 target: Optional[float] = None, cadence: int = 1, stop_at_target: bool = False,
                 stop_on_plateau: bool = True):
        self.evaluator = evaluator
        self.epsilon = epsilon
        self.max_epochs = max_epochs
        self.target = target
        self.cadence = cadence
        self.stop_at_target = stop_at_target
        self.stop_on_plateau = stop_on_plateau
        self.rows: List[MetricsRow] = []
        self.history: List[float] = []
        self.target_tick: Optional[int] = None
        self.target_epoch: Optional[int] = None
        self.target_seconds: Optional[float] = None
        self._started = time.perf_counter()

    @classmethod
    def from_config(cls, config, evaluator: Optional[ModelEvaluator], **overrides) -> "Monitor":
        options = dict(
            epsilon=config.stopping.epsilon,
            max_epochs=config.stopping.max_epochs,
            target=config.stopping.target_objective,
            cadence=config.evaluation.objective_every,
        )
        options.update(overrides)
        return cls(evaluator, **options)

    def restart_clock(self) -> None:
        self._started = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self._started

    def observe(self, epoch: int, tick: int, shared: np.ndarray, local_rows: Optional[Sequence[np.ndarray]],
                stats: CommStats) -> bool:
        if epoch % self.cadence and epoch < self.max_epochs:
            return False
        if self.evaluator is not None:
            p = np.vstack(list(local_rows)) if self.evaluator.is_mf else None
            train = self.evaluator.train_objective(shared, p)
            if not math.isfinite(train):
                raise DivergedError(f"training objective became non-finite at epoch {epoch}", iterate=shared,
                                    step=epoch)
            validation = self.evaluator.validation_objective(shared, p)
            counts = stats.as_dict()
            row = MetricsRow(
                wall_seconds=self.elapsed(),
                logical_tick=tick,
                epoch=epoch,
                train_objective=train,
                validation_objective=validation,
                test_rmse_or_accuracy=self.evaluator.test_metric(shared, p),
                comm_sends=counts["sends"],
                comm_time=counts["time_in_calls"],
                train_objective_mean=self.evaluator.train_objective_mean(train),
                comm_receives=counts["receives"],
                comm_broadcasts=counts["broadcasts"],
                comm_gathers=counts["gathers"],
            )
            self.rows.append(row)
            self.history.append(validation if validation is not None else train)
            logger.debug(f"epoch {epoch} tick {tick}: train {train:.6g} validation {validation}")
            if self.target is not None and self.target_tick is None and train <= self.target:
                self.target_tick = tick
                self.target_epoch = epoch
                self.target_seconds = row.wall_seconds
                logger.info(f"Objective target {self.target} reached at epoch {epoch}, tick {tick}")
                if self.stop_at_target:
                    return True
        if epoch >= self.max_epochs:
            return True
        return self.stop_on_plateau and should_stop(self.history, self.epsilon)

    def summary_row(self, tick: int, stats: CommStats) -> MetricsRow:
        counts = stats.as_dict()
        last = self.rows[-1] if self.rows else None
        return MetricsRow(
            wall_seconds=max(self.elapsed(), last.wall_seconds if last else 0.0),
            logical_tick=tick,
            epoch=last.epoch if last else 0,
            train_objective=last.train_objective if last else float("nan"),
            validation_objective=last.validation_objective if last else None,
            test_rmse_or_accuracy=last.test_rmse_or_accuracy if last else None,
            comm_sends=counts["sends"],
            comm_time=counts["time_in_calls"],
            train_objective_mean=last.train_objective_mean if last else float("nan"),
            comm_receives=counts["receives"],
            comm_broadcasts=counts["broadcasts"],
            comm_gathers=counts["gathers"],
            row_kind="summary",
        )


def write_metrics_csv(rows: Iterable[MetricsRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=MetricsRow.columns())
        writer.writeheader()
        for row in rows:
            writer.writerow(row.csv_record())
    return path


def read_metrics_csv(path: Union[str, Path]) -> List[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != MetricsRow.columns():
            raise ContractViolation(f"unexpected metrics columns {reader.fieldnames}")
        return [MetricsRow.from_csv_record(record) for record in reader]
