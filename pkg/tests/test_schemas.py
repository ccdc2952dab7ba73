"""
Tests for experiment configs, settings and metrics rows
"""
import pytest
from pydantic import ValidationError

from adg.config import Settings
from adg.core.exceptions import ConfigError
from adg.schemas import MetricsRow, SpeedupRow
from adg.schemas.experiment import ExperimentConfig, ini_to_dict, load_config, parse_override

from tests.conftest import make_config

INI = """
[experiment]
name = smoke
algorithm = adg_bc
m = 4
seed = 3

[data]
source = synthetic_classification
n = 200
d = 5
split = 0.6, 0.2, 0.2

[optimizer]
gamma = 0.5
lambda = 1e-3
batch_size = 8

[simulation]
schedule = timing
compute_ticks = 1, 2, 3, 4
comm_ticks = 2

[protocol]
broadcast_on_ingest = true

[stopping]
epsilon = 1e-6
max_epochs = 12
target_objective =
"""


@pytest.fixture
def ini_file(tmp_path):
    path = tmp_path / "smoke.ini"
    path.write_text(INI, encoding="utf-8")
    return path


def test_load_config_from_ini(ini_file):
    config = load_config(ini_file)
    assert config.experiment.name == "smoke"
    assert config.algorithm == "adg_bc"
    assert config.m == 4
    assert config.data.split == [0.6, 0.2, 0.2]
    assert config.optimizer.lam == pytest.approx(1e-3)
    assert config.simulation.compute_ticks == [1, 2, 3, 4]
    assert config.protocol.broadcast_on_ingest is True
    assert config.stopping.target_objective is None
    assert config.warm_start is True
    assert not config.is_mf


def test_defaults_fill_missing_sections():
    config = make_config("adg_mf")
    assert config.simulation.schedule == "delay"
    assert config.simulation.d_max == 0
    assert config.protocol.queue_capacity is None
    assert config.stopping.max_epochs == 100
    assert config.evaluation.unseen_policy == "skip"
    assert config.warm_start is False
    assert config.is_mf


def test_overrides_replace_and_add_keys(ini_file):
    config = ExperimentConfig.from_ini(ini_file, ["experiment.m=2", "simulation.compute_ticks=5,6",
                                                  "stopping.target_objective=0.3", "evaluation.objective_every=2"])
    assert config.m == 2
    assert config.simulation.compute_ticks == [5, 6]
    assert config.stopping.target_objective == pytest.approx(0.3)
    assert config.evaluation.objective_every == 2


def test_parse_override():
    assert parse_override("optimizer.gamma = 0.1") == ("optimizer", "gamma", "0.1")
    assert parse_override("data.path=a=b.txt") == ("data", "path", "a=b.txt")
    with pytest.raises(ConfigError):
        parse_override("optimizer.gamma")
    with pytest.raises(ConfigError):
        parse_override("gamma=0.1")


def test_ini_to_dict_drops_empty_values():
    data = ini_to_dict("[stopping]\nmax_epochs = 3\ntarget_objective =\n")
    assert data == {"stopping": {"max_epochs": "3"}}
    with pytest.raises(ConfigError):
        ini_to_dict("max_epochs = 3\n")


def test_ini_inline_comments_are_stripped():
    data = ini_to_dict("[experiment]\nalgorithm = adg_bc   ; or adg_mf\n; full-line comment\nm = 4\n")
    assert data == {"experiment": {"algorithm": "adg_bc", "m": "4"}}


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(tmp_path / "none.ini")
    assert info.value.exit_code == 2


@pytest.mark.parametrize("sections", [
    {"experiment": {"m": 0}},
    {"experiment": {"seed": -1}},
    {"optimizer": {"gamma": 0.0}},
    {"optimizer": {"lambda": -1.0}},
    {"optimizer": {"batch_size": 0}},
    {"data": {"split": [0.5, 0.6, -0.1]}},
    {"data": {"split": [0.0, 0.5, 0.5]}},
    {"data": {"density": 0.0}},
    {"simulation": {"d_max": -2}},
    {"simulation": {"compute_ticks": [0]}},
    {"stopping": {"epsilon": 0.0}},
    {"stopping": {"max_epochs": 0}},
    {"experiment": {"unknown_key": 1}},
])
def test_invalid_field_values(sections):
    with pytest.raises(ConfigError):
        make_config("adg_bc", **sections)


def test_cross_section_consistency():
    with pytest.raises(ConfigError, match="ratings source"):
        make_config("adg_mf", data={"source": "synthetic_classification"})
    with pytest.raises(ConfigError, match="classification source"):
        make_config("adg_bc", data={"source": "synthetic_ratings"})
    with pytest.raises(ConfigError, match="warm_start"):
        make_config("adg_mf", protocol={"warm_start": True})
    with pytest.raises(ConfigError, match="delay schedule"):
        make_config("async_svrg", simulation={"schedule": "timing"})
    with pytest.raises(ConfigError, match="one entry per machine"):
        make_config("adg_bc", experiment={"m": 3}, simulation={"compute_ticks": [1, 2]})
    with pytest.raises(ConfigError, match="requires a path"):
        make_config("adg_bc", data={"source": "sparse_file"})


def test_with_updates_revalidates():
    config = make_config("adg_bc", optimizer={"lambda": 0.5})
    updated = config.with_updates(experiment={"m": 3}, stopping={"max_epochs": 4})
    assert (updated.m, updated.stopping.max_epochs) == (3, 4)
    assert updated.optimizer.lam == 0.5
    assert config.m == 1
    with pytest.raises(ConfigError):
        config.with_updates(experiment={"m": 0})


def test_settings_normalise_log_level():
    assert Settings(LOG_LEVEL="debug").LOG_LEVEL == "DEBUG"
    with pytest.raises(ValidationError):
        Settings(LOG_LEVEL="chatty")
    with pytest.raises(ValidationError):
        Settings(QUEUE_CAPACITY=0)


def test_metrics_row_csv_record():
    row = MetricsRow(wall_seconds=0.5, logical_tick=12, epoch=3, train_objective=0.1,
                     test_rmse_or_accuracy=None, comm_sends=8)
    record = row.csv_record()
    assert list(record) == MetricsRow.columns()
    assert MetricsRow.columns()[:3] == ["wall_seconds", "logical_tick", "epoch"]
    assert record["train_objective"] == "0.1"
    assert record["test_rmse_or_accuracy"] == ""
    assert record["row_kind"] == "epoch"
    assert MetricsRow.from_csv_record(record) == row


def test_speedup_row_csv_record():
    censored = SpeedupRow(workers=4, censored=True)
    assert censored.csv_record()["time_to_target"] == ""
    assert censored.csv_record()["censored"] == "True"
    assert SpeedupRow.columns()[0] == "workers"
