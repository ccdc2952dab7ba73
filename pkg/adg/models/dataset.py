"""
Dataset containers for classification examples and rating matrices
"""
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy import sparse

from adg.core.exceptions import ContractViolation, DuplicateRatingError


@dataclass(frozen=True)
class LabeledExample:
    """Sparse feature vector with a +/-1 label"""

    indices: np.ndarray
    values: np.ndarray
    label: int
    dim: int

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)
        if self.label not in (-1, 1):
            raise ContractViolation(f"label must be -1 or +1, got {self.label}")
        if indices.shape != values.shape:
            raise ContractViolation("indices and values must have the same length")
        if indices.size:
            if np.any(np.diff(indices) <= 0):
                raise ContractViolation("feature indices must be strictly increasing")
            if indices[0] < 0 or indices[-1] >= self.dim:
                raise ContractViolation(f"feature index out of range for dimension {self.dim}")
        if not np.all(np.isfinite(values)):
            raise ContractViolation("feature values must be finite")

    @classmethod
    def from_dense(cls, x, label: int) -> "LabeledExample":
        x = np.asarray(x, dtype=np.float64)
        nz = np.flatnonzero(x)
        return cls(indices=nz, values=x[nz], label=label, dim=x.shape[0])

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True)
class ClassificationDataset:
    """n examples stored as a CSR matrix with one row per example"""

    features: sparse.csr_matrix
    labels: np.ndarray
    planted: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        features = sparse.csr_matrix(self.features, dtype=np.float64)
        features.sort_indices()
        labels = np.asarray(self.labels, dtype=np.float64)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if features.shape[0] != labels.shape[0]:
            raise ContractViolation("one label per example is required")
        if labels.size and not np.all(np.abs(labels) == 1.0):
            raise ContractViolation("labels must be -1 or +1")
        if not np.all(np.isfinite(features.data)):
            raise ContractViolation("feature values must be finite")

    @classmethod
    def from_examples(cls, examples: Iterable[LabeledExample], dim: Optional[int] = None) -> "ClassificationDataset":
        examples = list(examples)
        if dim is None:
            dim = max((ex.dim for ex in examples), default=0)
        indptr = [0]
        indices: List[np.ndarray] = []
        values: List[np.ndarray] = []
        for ex in examples:
            if ex.dim > dim:
                raise ContractViolation(f"example of dimension {ex.dim} exceeds dataset dimension {dim}")
            indices.append(ex.indices)
            values.append(ex.values)
            indptr.append(indptr[-1] + ex.indices.size)
        features = sparse.csr_matrix(
            (
                np.concatenate(values) if values else np.zeros(0),
                np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
                np.asarray(indptr),
            ),
            shape=(len(examples), dim),
        )
        return cls(features=features, labels=np.array([ex.label for ex in examples], dtype=np.float64))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def example(self, i: int) -> LabeledExample:
        start, end = self.features.indptr[i], self.features.indptr[i + 1]
        return LabeledExample(
            indices=self.features.indices[start:end],
            values=self.features.data[start:end],
            label=int(self.labels[i]),
            dim=self.dim,
        )

    @property
    def examples(self) -> List[LabeledExample]:
        return [self.example(i) for i in range(self.n)]

    def subset(self, rows) -> "ClassificationDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return ClassificationDataset(features=self.features[rows], labels=self.labels[rows], planted=self.planted)

    def equals(self, other: "ClassificationDataset") -> bool:
        """Exact equality of shape, labels and every stored feature value"""
        if self.features.shape != other.features.shape:
            return False
        if not np.array_equal(self.labels, other.labels):
            return False
        return (self.features != other.features).nnz == 0


@dataclass(frozen=True)
class Rating:
    user: int
    item: int
    value: float


@dataclass(frozen=True)
class RatingMatrix:
    """Observed ratings as parallel index/value arrays"""

    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    n_users: int
    n_items: int
    planted: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "values", values)
        if not (users.shape == items.shape == values.shape):
            raise ContractViolation("users, items and values must have the same length")
        if users.size:
            if users.min() < 0 or users.max() >= self.n_users:
                raise ContractViolation("user index out of range")
            if items.min() < 0 or items.max() >= self.n_items:
                raise ContractViolation("item index out of range")
            keys = users * max(self.n_items, 1) + items
            if np.unique(keys).size != keys.size:
                raise DuplicateRatingError("duplicate (user, item) pair")
        if not np.all(np.isfinite(values)):
            raise ContractViolation("rating values must be finite")

    @classmethod
    def from_ratings(cls, ratings: Iterable[Rating], n_users: Optional[int] = None,
                     n_items: Optional[int] = None) -> "RatingMatrix":
        ratings = list(ratings)
        users = np.array([r.user for r in ratings], dtype=np.int64)
        items = np.array([r.item for r in ratings], dtype=np.int64)
        values = np.array([r.value for r in ratings], dtype=np.float64)
        if n_users is None:
            n_users = int(users.max()) + 1 if users.size else 0
        if n_items is None:
            n_items = int(items.max()) + 1 if items.size else 0
        return cls(users=users, items=items, values=values, n_users=n_users, n_items=n_items)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def ratings(self) -> List[Rating]:
        return [Rating(int(u), int(i), float(r)) for u, i, r in zip(self.users, self.items, self.values)]

    def subset(self, mask_or_rows) -> "RatingMatrix":
        sel = np.asarray(mask_or_rows)
        return RatingMatrix(
            users=self.users[sel],
            items=self.items[sel],
            values=self.values[sel],
            n_users=self.n_users,
            n_items=self.n_items,
            planted=self.planted,
        )

    def equals(self, other: "RatingMatrix") -> bool:
        return (
            self.n_users == other.n_users
            and self.n_items == other.n_items
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class Partition:
    """Machine assignment per example (classification) or per user row (MF)

    `boundaries` holds the m+1 user offsets of contiguous row blocks and is
    only set by the row-block scheme.
    """

    assignment: np.ndarray
    m: int
    boundaries: Optional[np.ndarray] = None

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", assignment)
        if self.m < 1:
            raise ContractViolation("a partition needs at least one machine")
        if assignment.size and (assignment.min() < 0 or assignment.max() >= self.m):
            raise ContractViolation("assignment refers to a machine outside 0..m-1")

    def members(self, machine: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == machine)

    def sizes(self) -> List[int]:
        return np.bincount(self.assignment, minlength=self.m).tolist()

    def block_range(self, machine: int) -> Tuple[int, int]:
        if self.boundaries is None:
            raise ContractViolation("partition has no contiguous row blocks")
        return int(self.boundaries[machine]), int(self.boundaries[machine + 1])
