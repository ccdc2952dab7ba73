"""
Data service: loaders, writers, synthetic generators, splitting and partitioning
"""
import csv
import gzip
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import sparse

from adg.core.exceptions import ContractViolation, DuplicateRatingError, InfeasiblePartitionError, ParseError
from adg.models import ClassificationDataset, Partition, RatingMatrix

logger = logging.getLogger(__name__)

RATING_FORMATS = {"tab_separated": "\t", "double_colon": "::"}
PARTITION_SCHEMES = ("example_round_robin", "user_row_blocks")

# Stream id reserved for the train/validation/test split draw
SPLIT_STREAM = 2 ** 31 - 2

PathLike = Union[str, Path]


def open_text(path: PathLike, mode: str = "r") -> IO[str]:
    """Open a text file, transparently gzip-compressed when the name ends in .gz"""
    path = Path(path)
    if mode == "r" and not path.is_file():
        raise ParseError(f"file not found: {path}")
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def _parse_float(token: str, line: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"{what} {token!r} is not a number", line=line) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} {token!r} is not finite", line=line)
    return value


# ---------------------------------------------------------------------------
# Sparse classification files: "<label> <index>:<value> ..." with 1-based indices
# ---------------------------------------------------------------------------

def load_sparse_classification(path: PathLike, dim: Optional[int] = None) -> ClassificationDataset:
    labels: List[float] = []
    indices: List[int] = []
    values: List[float] = []
    indptr = [0]
    max_index = 0
    with open_text(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            label = _parse_float(tokens[0], lineno, "label")
            if label in (1.0, -1.0):
                labels.append(label)
            elif label == 0.0:
                labels.append(-1.0)
            else:
                raise ParseError(f"label {tokens[0]!r} is not one of 0, 1, -1, +1", line=lineno)
            previous = 0
            for token in tokens[1:]:
                idx_text, sep, val_text = token.partition(":")
                if not sep:
                    raise ParseError(f"feature {token!r} is not of the form index:value", line=lineno)
                try:
                    idx = int(idx_text)
                except ValueError:
                    raise ParseError(f"feature index {idx_text!r} is not an integer", line=lineno) from None
                if idx < 1:
                    raise ParseError(f"feature index {idx} is not 1-based", line=lineno)
                if idx <= previous:
                    raise ParseError(f"feature indices are not increasing at {idx}", line=lineno)
                previous = idx
                indices.append(idx - 1)
                values.append(_parse_float(val_text, lineno, "feature value"))
            max_index = max(max_index, previous)
            indptr.append(len(indices))

    if dim is None:
        dim = max_index
    elif dim < max_index:
        raise ParseError(f"file uses feature index {max_index} beyond dimension {dim}")
    features = sparse.csr_matrix(
        (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(labels), dim),
    )
    logger.info(f"Loaded {len(labels)} examples of dimension {dim} from {path}")
    return ClassificationDataset(features=features, labels=np.asarray(labels))


def write_sparse_classification(data: ClassificationDataset, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    features = data.features
    with open_text(path, "w") as f:
        for i in range(data.n):
            start, end = features.indptr[i], features.indptr[i + 1]
            items = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(features.indices[start:end], features.data[start:end]))
            label = "+1" if data.labels[i] > 0 else "-1"
            f.write(f"{label} {items}".rstrip() + "\n")
    return path


# ---------------------------------------------------------------------------
# Rating files: user<sep>item<sep>rating[<sep>timestamp]
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoadedRatings:
    """Rating matrix plus the raw ids behind each dense index"""

    matrix: RatingMatrix
    user_ids: List[str]
    item_ids: List[str]


RATING_COLUMNS = ["user", "item", "rating", "timestamp"]
# Placeholder user id for rows with more fields than RATING_COLUMNS
_OVERFLOW = "\x00overflow"


def _flag_overflow(fields: List[str]) -> List[str]:
    return [_OVERFLOW] + [""] * (len(RATING_COLUMNS) - 1)


def _read_rating_frame(f: IO[str], sep: str) -> pd.DataFrame:
    """One row per physical line, so the frame index is the zero-based line number"""
    try:
        frame = pd.read_csv(f, sep=sep, header=None, names=RATING_COLUMNS, dtype=str,
                            keep_default_na=False, skip_blank_lines=False, quoting=csv.QUOTE_NONE,
                            engine="python", on_bad_lines=_flag_overflow)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=RATING_COLUMNS, dtype=str)
    except pd.errors.ParserError as exc:
        raise ParseError(str(exc)) from None
    if not isinstance(frame.index, pd.RangeIndex):
        # first line wider than RATING_COLUMNS, read as an implicit index
        raise ParseError(f"expected user{sep}item{sep}rating[{sep}timestamp]", line=1)
    return frame.fillna("").apply(lambda column: column.str.strip())


def read_ratings(path: PathLike, format: str = "tab_separated") -> LoadedRatings:
    if format not in RATING_FORMATS:
        raise ContractViolation(f"unknown rating format {format!r}")
    sep = RATING_FORMATS[format]
    with open_text(path) as f:
        frame = _read_rating_frame(f, sep)
    frame.index = frame.index + 1
    frame = frame[(frame != "").any(axis=1)]

    malformed = (frame.user == _OVERFLOW) | (frame.user == "") | (frame.item == "") | (frame.rating == "")
    if malformed.any():
        lineno = int(frame.index[malformed.to_numpy()][0])
        raise ParseError(f"expected user{sep}item{sep}rating[{sep}timestamp]", line=lineno)
    values = pd.to_numeric(frame.rating, errors="coerce").to_numpy(dtype=np.float64)
    bad_rating = ~np.isfinite(values)
    if bad_rating.any():
        first = int(np.flatnonzero(bad_rating)[0])
        raise ParseError(f"rating {frame.rating.iloc[first]!r} is not a finite number", line=int(frame.index[first]))
    bad_stamp = (frame.timestamp != "") & ~frame.timestamp.str.fullmatch(r"-?\d+")
    if bad_stamp.any():
        first = int(np.flatnonzero(bad_stamp.to_numpy())[0])
        raise ParseError(f"timestamp {frame.timestamp.iloc[first]!r} is not an integer", line=int(frame.index[first]))

    users, user_ids = pd.factorize(frame.user, sort=False)
    items, item_ids = pd.factorize(frame.item, sort=False)
    repeated = frame.duplicated(["user", "item"], keep="first").to_numpy()
    if repeated.any():
        first = int(np.flatnonzero(repeated)[0])
        same = (users == users[first]) & (items == items[first])
        raise DuplicateRatingError(
            f"user {user_ids[users[first]]} rated item {item_ids[items[first]]} again "
            f"(first on line {int(frame.index[np.flatnonzero(same)[0]])})", line=int(frame.index[first])
        )

    matrix = RatingMatrix(users=users.astype(np.int64), items=items.astype(np.int64), values=values,
                          n_users=len(user_ids), n_items=len(item_ids))
    logger.info(f"Loaded {len(values)} ratings ({len(user_ids)} users, {len(item_ids)} items) from {path}")
    return LoadedRatings(matrix, [str(u) for u in user_ids], [str(i) for i in item_ids])


def load_ratings(path: PathLike, format: str = "tab_separated") -> RatingMatrix:
    return read_ratings(path, format).matrix


def write_ratings(matrix: RatingMatrix, path: PathLike, format: str = "tab_separated",
                  user_ids: Optional[Sequence[str]] = None, item_ids: Optional[Sequence[str]] = None) -> Path:
    """Write one rating per line; ids default to the 1-based dense index"""
    if format not in RATING_FORMATS:
        raise ContractViolation(f"unknown rating format {format!r}")
    sep = RATING_FORMATS[format]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open_text(path, "w") as f:
        for u, i, r in zip(matrix.users, matrix.items, matrix.values):
            user = user_ids[u] if user_ids is not None else str(u + 1)
            item = item_ids[i] if item_ids is not None else str(i + 1)
            f.write(f"{user}{sep}{item}{sep}{float(r)!r}\n")
    return path


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def synth_classification(n: int, d: int, separation: float = 0.0, noise: float = 0.0,
                         seed: int = 0) -> ClassificationDataset:
    """Gaussian features labelled by a planted unit hyperplane, then noise-flipped

    Features are N(0, 1/d) so ||x||^2 is about 1. `separation` pushes every
    example that far further from the hyperplane on its own side.
    """
    if n < 1 or d < 1:
        raise ContractViolation("n and d must be at least 1")
    if not 0 <= noise <= 1:
        raise ContractViolation("noise is a flip probability in [0, 1]")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d)) / np.sqrt(d)
    planted = rng.standard_normal(d)
    planted /= np.linalg.norm(planted)
    labels = np.where(x @ planted >= 0, 1.0, -1.0)
    if separation:
        x += separation * labels[:, None] * planted[None, :]
    flips = rng.random(n) < noise
    labels[flips] *= -1.0
    return ClassificationDataset(features=sparse.csr_matrix(x), labels=labels, planted=planted)


def synth_ratings(n_users: int, n_items: int, k_true: int, noise: float, density: float,
                  seed: int = 0) -> RatingMatrix:
    """Planted rank-k_true ratings R = P* Q*^T + N(0, noise^2), observed with probability density

    Planted factors use scale k_true^(-1/4) so every product entry has unit variance.
    """
    if not 0 < density <= 1:
        raise ContractViolation("density must lie in (0, 1]")
    if n_users < 1 or n_items < 1 or k_true < 1:
        raise ContractViolation("dimensions must be positive")
    rng = np.random.default_rng(seed)
    scale = k_true ** -0.25
    p_true = rng.standard_normal((n_users, k_true)) * scale
    q_true = rng.standard_normal((n_items, k_true)) * scale
    mask = rng.random((n_users, n_items)) < density
    users, items = np.nonzero(mask)
    clean = np.einsum("ij,ij->i", p_true[users], q_true[items])
    values = clean + noise * rng.standard_normal(users.size)
    return RatingMatrix(users=users, items=items, values=values, n_users=n_users, n_items=n_items,
                        planted=(p_true, q_true))


# ---------------------------------------------------------------------------
# Splitting and partitioning
# ---------------------------------------------------------------------------

def split_dataset(data, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Deterministic (train, validation, test) split by a seeded draw per record"""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ContractViolation("fractions must be three non-negative numbers summing to 1")
    n = len(data)
    draws = np.random.default_rng([seed, SPLIT_STREAM]).random(n)
    cut_train = fractions[0]
    cut_val = fractions[0] + fractions[1]
    parts = (draws < cut_train, (draws >= cut_train) & (draws < cut_val), draws >= cut_val)
    if isinstance(data, RatingMatrix):
        return tuple(data.subset(mask) for mask in parts)
    return tuple(data.subset(np.flatnonzero(mask)) for mask in parts)


def _row_block_boundaries(counts: np.ndarray, m: int) -> np.ndarray:
    n_users = counts.shape[0]
    prefix = np.concatenate([[0], np.cumsum(counts)])
    total = prefix[-1]
    boundaries = [0]
    for b in range(1, m):
        lo = boundaries[-1] + 1
        hi = n_users - (m - b)
        target = total * b / m
        window = prefix[lo:hi + 1]
        boundaries.append(lo + int(np.argmin(np.abs(window - target))))
    boundaries.append(n_users)
    return np.asarray(boundaries, dtype=np.int64)


def partition(data, m: int, scheme: str) -> Partition:
    """Split examples round robin, or users into contiguous blocks balanced by rating count"""
    if m < 1:
        raise ContractViolation("m must be at least 1")
    if scheme == "example_round_robin":
        return Partition(assignment=np.arange(len(data)) % m, m=m)
    if scheme == "user_row_blocks":
        if not isinstance(data, RatingMatrix):
            raise ContractViolation("user_row_blocks partitions a rating matrix")
        if m > data.n_users:
            raise InfeasiblePartitionError(f"cannot split {data.n_users} users across {m} machines")
        counts = np.bincount(data.users, minlength=data.n_users)
        boundaries = _row_block_boundaries(counts, m)
        assignment = np.searchsorted(boundaries, np.arange(data.n_users), side="right") - 1
        part = Partition(assignment=assignment, m=m, boundaries=boundaries)
        logger.debug(f"Row blocks {boundaries.tolist()} hold {[int(counts[a:b].sum()) for a, b in zip(boundaries, boundaries[1:])]} ratings")
        return part
    raise ContractViolation(f"unknown partition scheme {scheme!r}")


def shards_of(data, part: Partition) -> List:
    """Per-machine slices of the data under a partition"""
    if isinstance(data, RatingMatrix):
        owner = part.assignment[data.users]
        return [data.subset(owner == j) for j in range(part.m)]
    return [data.subset(part.members(j)) for j in range(part.m)]
