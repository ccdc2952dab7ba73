"""
Simulation scheduling and the delayed-averaging error diagnostic

Builds delay schedules, random quadratic test problems with a known
minimizer, and the error envelope: the (D+1) x M matrix of squared
distances between recent machine iterates and their shifted fixed points
w_i* = w* - gamma * grad L_i(w*). Under any bounded delay schedule every
new entry is at most the mean of the delayed envelope row it came from,
so the envelope's l-inf norm never increases.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from adg.core.exceptions import ContractViolation, UnsupportedDiagnosticError
from adg.models import DelaySchedule, ErrorEnvelope, RunTrace
from adg.services.async_core import run_delay_rounds
from adg.services.losses import QuadraticShard, quadratic_suite_objective
from adg.services.programs import GradientProgram

logger = logging.getLogger(__name__)

ENVELOPE_COLUMNS = ["event", "machine", "delay_slot", "squared_error", "linf_norm"]


def make_delay_schedule(kind: str, d_max: int, seed: int = 0, m: int = 1) -> DelaySchedule:
    return DelaySchedule(kind=kind, d_max=d_max, seed=seed, m=m)


@dataclass
class QuadraticSuite:
    """Sum of L_i(w) = 1/2 ||A_i w - b_i||^2 over machines"""

    shards: List[QuadraticShard]

    @classmethod
    def random(cls, m: int, dim: int = 10, seed: int = 0,
               singular_values: Tuple[float, float] = (1.0, 2.0)) -> "QuadraticSuite":
        """Square A_i with singular values drawn from the given range"""
        if m < 1 or dim < 1:
            raise ContractViolation("a quadratic suite needs at least one machine and one dimension")
        gen = np.random.default_rng(seed)
        low, high = singular_values
        shards = []
        for _ in range(m):
            u, _ = np.linalg.qr(gen.standard_normal((dim, dim)))
            v, _ = np.linalg.qr(gen.standard_normal((dim, dim)))
            s = gen.uniform(low, high, size=dim)
            shards.append(QuadraticShard(u @ np.diag(s) @ v.T, gen.standard_normal(dim)))
        return cls(shards)

    @classmethod
    def centered(cls, centers: Sequence) -> "QuadraticSuite":
        return cls([QuadraticShard.centered(c) for c in centers])

    @property
    def m(self) -> int:
        return len(self.shards)

    @property
    def dim(self) -> int:
        return self.shards[0].dim

    def smoothness(self) -> float:
        """Largest per-machine smoothness constant"""
        return max(s.smoothness() for s in self.shards)

    def safe_gamma(self) -> float:
        return 1.0 / self.smoothness()

    def objective(self, w: np.ndarray) -> float:
        return quadratic_suite_objective(self.shards, w)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return np.sum([s.gradient(w) for s in self.shards], axis=0)


def solve_reference_minimizer(suite: QuadraticSuite, gamma: float) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Exact minimizer of the summed objective and the per-machine shifted fixed points"""
    if not isinstance(suite, QuadraticSuite):
        raise UnsupportedDiagnosticError("reference minimizers are only known for quadratic suites")
    hessian = np.sum([s.hessian() for s in suite.shards], axis=0)
    rhs = np.sum([s.a.T @ s.b for s in suite.shards], axis=0)
    if np.linalg.matrix_rank(hessian) < hessian.shape[0]:
        raise ContractViolation("the summed quadratic is singular; its minimizer is not unique")
    w_star = linalg.solve(hessian, rhs, assume_a="pos")
    w_i_star = [w_star - gamma * s.gradient(w_star) for s in suite.shards]
    return w_star, w_i_star


def initial_envelope(suite: QuadraticSuite, w0: np.ndarray, gamma: float, d_max: int) -> ErrorEnvelope:
    """Every delay row starts at the errors of w0; earlier rounds all used w0"""
    w_star, shifted = solve_reference_minimizer(suite, gamma)
    w0 = np.asarray(w0, dtype=np.float64)
    row = ErrorEnvelope.column_errors([w0] * suite.m, shifted)
    return ErrorEnvelope(y=np.tile(row, (d_max + 1, 1)), w_star=w_star, w_star_shifted=shifted)


def error_envelope_step(env: ErrorEnvelope, delays: Sequence[int], iterates: Sequence[np.ndarray]) -> ErrorEnvelope:
    """Shift delay rows down one slot and put the errors of the new iterates in row 0"""
    if env is None or env.w_star is None or not env.w_star_shifted:
        raise UnsupportedDiagnosticError("the envelope has no reference minimizer")
    if len(iterates) != env.m or len(delays) != env.m:
        raise ContractViolation(f"expected {env.m} iterates and delays")
    if any(d < 0 or d > env.d_max for d in delays):
        raise ContractViolation(f"delays must lie in 0..{env.d_max}")
    y = np.empty_like(env.y)
    y[1:] = env.y[:-1]
    y[0] = ErrorEnvelope.column_errors(list(iterates), env.w_star_shifted)
    return env.replace_rows(y)


def _rounding_floor(env: ErrorEnvelope) -> float:
    # absolute floor for rounding in ||w - w_i*||^2 once iterates sit at the fixed point
    return 1e-24 * (1.0 + max(float(s @ s) for s in env.w_star_shifted))


def check_envelope_step(before: ErrorEnvelope, after: ErrorEnvelope, delays: Sequence[int],
                        rtol: float = 1e-12) -> List[str]:
    """Violations of the per-entry bound and of the l-inf contraction, empty when both hold"""
    violations = []
    atol = _rounding_floor(before)
    for i, d in enumerate(delays):
        bound = before.delayed_mean(d)
        if after.y[0, i] > bound * (1.0 + rtol) + atol:
            violations.append(f"machine {i}: {after.y[0, i]!r} exceeds delayed mean {bound!r} (delay {d})")
    if after.linf_norm() > before.linf_norm() * (1.0 + rtol) + atol:
        violations.append(f"l-inf norm grew from {before.linf_norm()!r} to {after.linf_norm()!r}")
    return violations


def contraction_matrix(delays: Sequence[int], m: int, d_max: int) -> np.ndarray:
    """Row-stochastic matrix A with y_next <= A y elementwise on the flattened envelope

    Entry (d, i) of the envelope sits at index d * m + i. The first block row
    averages delay row d_i for machine i; the others copy the row above.
    """
    if len(delays) != m:
        raise ContractViolation(f"need one delay per machine, got {len(delays)} for {m}")
    size = (d_max + 1) * m
    a = np.zeros((size, size))
    for i, d in enumerate(delays):
        if not 0 <= d <= d_max:
            raise ContractViolation(f"delay {d} outside 0..{d_max}")
        a[i, d * m:(d + 1) * m] = 1.0 / m
    a[m:, :size - m] = np.eye(size - m)
    return a


@dataclass
class EnvelopeTracker:
    """Round hook that advances the envelope and collects contraction violations"""

    envelope: ErrorEnvelope
    rtol: float = 1e-12
    record: bool = False
    violations: List[str] = field(default_factory=list)
    linf_history: List[float] = field(default_factory=list)
    events: int = 0
    _rows: List[dict] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.linf_history.append(self.envelope.linf_norm())
        self._record_rows(0)

    def __call__(self, k: int, delays: List[int], iterates: List[np.ndarray], shared: np.ndarray) -> None:
        before = self.envelope
        after = error_envelope_step(before, delays, iterates)
        found = check_envelope_step(before, after, delays, self.rtol)
        if found:
            logger.debug(f"round {k}: {found}")
            self.violations.extend(f"round {k}: {v}" for v in found)
        self.envelope = after
        self.events += 1
        self.linf_history.append(after.linf_norm())
        self._record_rows(self.events)

    def _record_rows(self, event: int) -> None:
        if not self.record:
            return
        linf = self.envelope.linf_norm()
        for d in range(self.envelope.d_max + 1):
            for i in range(self.envelope.m):
                self._rows.append({"event": event, "machine": i, "delay_slot": d,
                                   "squared_error": repr(float(self.envelope.y[d, i])), "linf_norm": repr(linf)})

    def write_csv(self, path: Union[str, Path]) -> Path:
        if not self.record:
            raise ContractViolation("tracker was created without record=True")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=ENVELOPE_COLUMNS)
            writer.writeheader()
            writer.writerows(self._rows)
        return path


class _DistanceStop:
    """Stops the round loop once the average is within tol of the minimizer"""

    def __init__(self, w_star: np.ndarray, tol: float):
        self.w_star = w_star
        self.tol = tol
        self.distance = float("inf")

    def observe(self, epoch, tick, shared, local_rows, stats) -> bool:
        self.distance = float(np.linalg.norm(shared - self.w_star))
        return self.distance < self.tol


@dataclass
class DiagnosticReport:
    w_bar: np.ndarray
    w_star: np.ndarray
    rounds: int
    distance: float
    tracker: Optional[EnvelopeTracker]
    trace: RunTrace

    @property
    def contraction_held(self) -> bool:
        return self.tracker is None or not self.tracker.violations


def run_proof_diagnostic(suite: QuadraticSuite, schedule: DelaySchedule, gamma: Optional[float] = None,
                         max_rounds: int = 10_000, w0: Optional[np.ndarray] = None, tol: Optional[float] = 1e-8,
                         track_envelope: bool = True, record: bool = False) -> DiagnosticReport:
    """Run plain-gradient ADG on a quadratic suite under a delay schedule

    Stops once ||w_bar - w*|| < tol (never, when tol is None) or after max_rounds.
    """
    gamma = suite.safe_gamma() if gamma is None else gamma
    if not 0 < gamma < 2.0 / suite.smoothness():
        raise ContractViolation(f"gamma {gamma} is outside (0, 2/L)")
    w0 = np.zeros(suite.dim) if w0 is None else np.asarray(w0, dtype=np.float64)
    program = GradientProgram(suite.shards, gamma, w0)
    tracker = EnvelopeTracker(initial_envelope(suite, w0, gamma, schedule.d_max), record=record) \
        if track_envelope else None
    w_star, _ = solve_reference_minimizer(suite, gamma)
    stop = _DistanceStop(w_star, tol) if tol is not None else None
    trace = RunTrace(algorithm="plain_gradient", backend="simulated", keep_payloads=False)
    shared, _ = run_delay_rounds(program, w0, schedule, trace, stop, max_rounds,
                                 hooks=[tracker] if tracker is not None else ())
    distance = float(np.linalg.norm(shared - w_star))
    if tracker is not None and tracker.violations:
        logger.warning(f"Envelope contraction violated {len(tracker.violations)} times")
    return DiagnosticReport(shared, w_star, trace.epochs_completed, distance, tracker, trace)
