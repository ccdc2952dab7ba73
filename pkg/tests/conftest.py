"""
Shared fixtures: small experiment configs and fixed-length monitors
"""
import pytest

from adg.schemas.experiment import MF_ALGORITHMS, build_config
from adg.services.metrics import Monitor


def make_config(algorithm: str, **sections):
    """Small synthetic config; every record goes to training unless `data.split` is overridden"""
    data = {"experiment": {"name": f"test-{algorithm}", "algorithm": algorithm, "m": 1, "seed": 7}}
    if algorithm in MF_ALGORITHMS:
        data["data"] = {"source": "synthetic_ratings", "n_users": 40, "n_items": 24, "k_true": 3,
                        "density": 0.5, "noise": 0.1, "split": [1.0, 0.0, 0.0]}
        data["optimizer"] = {"gamma": 0.01, "lambda": 0.01, "k_latent": 3}
    else:
        data["data"] = {"source": "synthetic_classification", "n": 400, "d": 10, "noise": 0.05,
                        "split": [1.0, 0.0, 0.0]}
        data["optimizer"] = {"gamma": 0.2, "lambda": 1.0, "batch_size": 10}
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    return build_config(data)


def fixed_epochs(epochs: int) -> Monitor:
    """Monitor without evaluation that stops after exactly `epochs` epochs"""
    return Monitor(None, max_epochs=epochs, stop_on_plateau=False)


@pytest.fixture
def config_factory():
    return make_config


@pytest.fixture
def ratings_file(tmp_path):
    path = tmp_path / "ratings.tsv"
    path.write_text("u1\tm1\t4.0\t100\nu1\tm2\t3.5\t101\nu2\tm1\t2.0\t102\nu3\tm3\t5.0\t103\n", encoding="utf-8")
    return path


@pytest.fixture
def sparse_file(tmp_path):
    path = tmp_path / "train.svm"
    path.write_text("+1 1:0.5 3:1.25\n-1 2:2.0\n0 1:1.0 2:-1.0 3:0.25  # trailing comment\n", encoding="utf-8")
    return path
