"""
Tests for dataset loading, synthetic generators, splitting and partitioning
"""
import numpy as np
import pytest

from adg.core.exceptions import ContractViolation, DataError, DuplicateRatingError, InfeasiblePartitionError, ParseError
from adg.models import ClassificationDataset, RatingMatrix
from adg.services.data_io import (
    load_ratings,
    load_sparse_classification,
    partition,
    read_ratings,
    shards_of,
    split_dataset,
    synth_classification,
    synth_ratings,
    write_ratings,
    write_sparse_classification,
)


# ---------------------------------------------------------------------------
# Sparse classification files
# ---------------------------------------------------------------------------

def test_load_sparse_classification(sparse_file):
    data = load_sparse_classification(sparse_file)
    assert data.n == 3
    assert data.dim == 3
    np.testing.assert_array_equal(data.labels, [1.0, -1.0, -1.0])
    np.testing.assert_array_equal(data.features.toarray(),
                                  [[0.5, 0.0, 1.25], [0.0, 2.0, 0.0], [1.0, -1.0, 0.25]])


def test_load_sparse_classification_with_explicit_dimension(sparse_file):
    assert load_sparse_classification(sparse_file, dim=8).dim == 8
    with pytest.raises(ParseError):
        load_sparse_classification(sparse_file, dim=2)


@pytest.mark.parametrize("line", [
    "2 1:1.0",
    "+1 0:1.0",
    "+1 2:1.0 1:1.0",
    "+1 1:abc",
    "+1 1",
    "-1 1:inf",
])
def test_load_sparse_classification_rejects_bad_lines(tmp_path, line):
    path = tmp_path / "bad.svm"
    path.write_text(f"+1 1:1.0\n{line}\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_sparse_classification(path)
    assert info.value.line == 2
    assert info.value.exit_code == 4


def test_missing_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        load_sparse_classification(tmp_path / "absent.svm")


def test_sparse_write_then_load_gzip(tmp_path):
    data = synth_classification(20, 6, seed=3)
    path = write_sparse_classification(data, tmp_path / "data.svm.gz")
    assert load_sparse_classification(path, dim=6).equals(data)


def test_sparse_writer_emits_plain_numbers(tmp_path):
    data = synth_classification(3, 2, seed=1)
    path = write_sparse_classification(data, tmp_path / "plain.svm")
    text = path.read_text(encoding="utf-8")
    assert "np." not in text
    for line in text.splitlines():
        for item in line.split()[1:]:
            float(item.split(":")[1])


# ---------------------------------------------------------------------------
# Rating files
# ---------------------------------------------------------------------------

def test_read_ratings_maps_ids_in_order(ratings_file):
    loaded = read_ratings(ratings_file)
    assert loaded.user_ids == ["u1", "u2", "u3"]
    assert loaded.item_ids == ["m1", "m2", "m3"]
    matrix = loaded.matrix
    assert (matrix.n_users, matrix.n_items, len(matrix)) == (3, 3, 4)
    np.testing.assert_array_equal(matrix.users, [0, 0, 1, 2])
    np.testing.assert_array_equal(matrix.items, [0, 1, 0, 2])
    np.testing.assert_array_equal(matrix.values, [4.0, 3.5, 2.0, 5.0])


def test_read_double_colon_ratings(tmp_path):
    path = tmp_path / "ratings.dat"
    path.write_text("1::10::5::978300760\n2::10::3::978300761\n\n1::20::4::978300762\n", encoding="utf-8")
    matrix = load_ratings(path, format="double_colon")
    assert (matrix.n_users, matrix.n_items, len(matrix)) == (2, 2, 3)


def test_duplicate_rating_is_rejected(tmp_path):
    path = tmp_path / "dup.tsv"
    path.write_text("a\tx\t1\nb\tx\t2\na\tx\t3\n", encoding="utf-8")
    with pytest.raises(DuplicateRatingError) as info:
        load_ratings(path)
    assert info.value.line == 3


@pytest.mark.parametrize("content", ["a\tx\n", "a\tx\tfive\n", "a\tx\t1\tnoon\n", "\tx\t1\n"])
def test_malformed_rating_lines(tmp_path, content):
    path = tmp_path / "bad.tsv"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ParseError):
        load_ratings(path)


def test_overwide_rating_line_reports_its_line(tmp_path):
    path = tmp_path / "wide.tsv"
    path.write_text("a\tx\t1\nb\tx\t2\t5\t9\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_ratings(path)
    assert info.value.line == 2


def test_rating_errors_count_blank_lines(tmp_path):
    path = tmp_path / "gap.tsv"
    path.write_text("a\tx\t1\n\nb\ty\tfive\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_ratings(path)
    assert info.value.line == 3


def test_unknown_rating_format(ratings_file):
    with pytest.raises(ContractViolation):
        load_ratings(ratings_file, format="csv")


def test_ratings_write_then_read_keeps_ids(ratings_file, tmp_path):
    loaded = read_ratings(ratings_file)
    path = write_ratings(loaded.matrix, tmp_path / "out.tsv", user_ids=loaded.user_ids, item_ids=loaded.item_ids)
    again = read_ratings(path)
    assert again.user_ids == loaded.user_ids
    assert again.matrix.equals(loaded.matrix)


def test_ratings_writer_emits_plain_numbers(tmp_path):
    matrix = synth_ratings(3, 3, 1, noise=0.1, density=1.0, seed=2)
    text = write_ratings(matrix, tmp_path / "plain.tsv").read_text(encoding="utf-8")
    assert "np." not in text
    assert read_ratings(tmp_path / "plain.tsv").matrix.equals(matrix)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def test_synth_classification_is_seeded_and_planted():
    a = synth_classification(200, 8, seed=1)
    b = synth_classification(200, 8, seed=1)
    assert a.equals(b)
    assert not a.equals(synth_classification(200, 8, seed=2))
    assert np.linalg.norm(a.planted) == pytest.approx(1.0)
    margins = a.features.toarray() @ a.planted
    np.testing.assert_array_equal(a.labels, np.where(margins >= 0, 1.0, -1.0))


def test_synth_classification_noise_flips_labels():
    clean = synth_classification(500, 5, noise=0.0, seed=4)
    noisy = synth_classification(500, 5, noise=0.2, seed=4)
    flipped = np.mean(clean.labels != noisy.labels)
    assert 0.12 < flipped < 0.28


def test_synth_classification_separation_widens_margin():
    data = synth_classification(100, 4, separation=0.5, seed=5)
    assert np.min(data.labels * (data.features @ data.planted)) >= 0.5 - 1e-12


def test_synth_classification_validates():
    with pytest.raises(ContractViolation):
        synth_classification(0, 3)
    with pytest.raises(ContractViolation):
        synth_classification(10, 3, noise=1.5)


def test_synth_ratings_noise_free_full_density():
    matrix = synth_ratings(6, 5, k_true=2, noise=0.0, density=1.0, seed=0)
    assert len(matrix) == 30
    p_true, q_true = matrix.planted
    np.testing.assert_allclose(matrix.values, np.einsum("ij,ij->i", p_true[matrix.users], q_true[matrix.items]))


def test_synth_ratings_density():
    matrix = synth_ratings(100, 80, k_true=3, noise=0.1, density=0.25, seed=1)
    assert 0.22 < len(matrix) / 8000 < 0.28
    with pytest.raises(ContractViolation):
        synth_ratings(10, 10, 2, 0.1, density=0.0)


# ---------------------------------------------------------------------------
# Splitting and partitioning
# ---------------------------------------------------------------------------

def test_split_is_deterministic_and_disjoint():
    data = synth_classification(300, 4, seed=2)
    train, val, test = split_dataset(data, (0.6, 0.2, 0.2), seed=9)
    assert train.n + val.n + test.n == 300
    again = split_dataset(data, (0.6, 0.2, 0.2), seed=9)
    assert all(x.equals(y) for x, y in zip((train, val, test), again))
    assert 150 < train.n < 210


def test_split_ratings_and_train_only():
    matrix = synth_ratings(20, 10, 2, 0.1, 0.5, seed=3)
    train, val, test = split_dataset(matrix, (1.0, 0.0, 0.0))
    assert train.equals(matrix)
    assert len(val) == len(test) == 0


def test_split_rejects_bad_fractions():
    with pytest.raises(ContractViolation):
        split_dataset(synth_classification(10, 2), (0.5, 0.5))
    with pytest.raises(ContractViolation):
        split_dataset(synth_classification(10, 2), (0.5, 0.6, -0.1))


def test_round_robin_partition():
    data = synth_classification(10, 2)
    part = partition(data, 3, "example_round_robin")
    assert part.sizes() == [4, 3, 3]
    shards = shards_of(data, part)
    assert [s.n for s in shards] == [4, 3, 3]
    np.testing.assert_array_equal(shards[1].example(0).dense(), data.example(1).dense())


def test_user_row_blocks_are_contiguous_and_balanced():
    matrix = RatingMatrix(users=[0, 1, 2, 3], items=[0, 0, 0, 0], values=[1.0] * 4, n_users=4, n_items=1)
    part = partition(matrix, 2, "user_row_blocks")
    np.testing.assert_array_equal(part.boundaries, [0, 2, 4])
    assert part.block_range(1) == (2, 4)
    shards = shards_of(matrix, part)
    np.testing.assert_array_equal(shards[0].users, [0, 1])
    np.testing.assert_array_equal(shards[1].users, [2, 3])


def test_user_row_blocks_balance_by_rating_count():
    users = [0] * 6 + [1, 2, 3, 4, 5, 6]
    items = list(range(6)) + [0] * 6
    matrix = RatingMatrix(users=users, items=items, values=[1.0] * 12, n_users=7, n_items=6)
    part = partition(matrix, 2, "user_row_blocks")
    assert [len(s) for s in shards_of(matrix, part)] == [6, 6]


def test_partition_errors():
    matrix = synth_ratings(3, 4, 1, 0.0, 1.0)
    with pytest.raises(InfeasiblePartitionError):
        partition(matrix, 4, "user_row_blocks")
    with pytest.raises(ContractViolation):
        partition(synth_classification(5, 2), 2, "user_row_blocks")
    with pytest.raises(ContractViolation):
        partition(matrix, 2, "hash")
    assert isinstance(partition(matrix, 1, "user_row_blocks").boundaries, np.ndarray)
    assert isinstance(synth_classification(5, 2), ClassificationDataset)
