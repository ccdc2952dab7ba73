"""
Experiment configuration schemas
"""
import configparser
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from adg.core.exceptions import ConfigError

logger = logging.getLogger(__name__)

CLASSIFICATION_ALGORITHMS = ("adg_bc", "sync_svrg", "async_svrg", "plain_gradient")
MF_ALGORITHMS = ("adg_mf", "asgd", "dsgd")
CLASSIFICATION_SOURCES = ("synthetic_classification", "sparse_file")
RATING_SOURCES = ("synthetic_ratings", "ratings_file")


def _split_list(v):
    if isinstance(v, str):
        return [item.strip() for item in v.split(",") if item.strip()]
    return v


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ExperimentSection(_Section):
    """Schema for [experiment]"""
    name: str = "experiment"
    algorithm: Literal["adg_bc", "adg_mf", "sync_svrg", "async_svrg", "asgd", "dsgd", "plain_gradient"]
    backend: Literal["simulated", "threaded"] = "simulated"
    m: int = 1
    seed: int = 0

    @field_validator("m")
    @classmethod
    def validate_m(cls, v):
        if v < 1:
            raise ValueError("m must be at least 1")
        return v

    @field_validator("seed")
    @classmethod
    def validate_seed(cls, v):
        if v < 0 or v >= 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return v


class DataSection(_Section):
    """Schema for [data]"""
    source: Literal["synthetic_classification", "sparse_file", "synthetic_ratings", "ratings_file"]
    path: Optional[str] = None
    format: Literal["tab_separated", "double_colon"] = "tab_separated"
    dim: Optional[int] = None
    # synthetic classification
    n: int = 1000
    d: int = 20
    separation: float = 0.0
    noise: float = 0.0
    # synthetic ratings
    n_users: int = 100
    n_items: int = 100
    k_true: int = 5
    density: float = 0.2
    # train, validation, test
    split: List[float] = Field(default_factory=lambda: [0.8, 0.1, 0.1])

    @field_validator("split", mode="before")
    @classmethod
    def parse_split(cls, v):
        return _split_list(v)

    @field_validator("split")
    @classmethod
    def validate_split(cls, v):
        if len(v) != 3 or any(f < 0 for f in v):
            raise ValueError("split needs three non-negative fractions: train, validation, test")
        if abs(sum(v) - 1.0) > 1e-9 or v[0] <= 0:
            raise ValueError("split fractions must sum to 1 with a positive train fraction")
        return v

    @field_validator("density")
    @classmethod
    def validate_density(cls, v):
        if not 0 < v <= 1:
            raise ValueError("density must lie in (0, 1]")
        return v

    @field_validator("noise")
    @classmethod
    def validate_noise(cls, v):
        if v < 0:
            raise ValueError("noise must be non-negative")
        return v

    @model_validator(mode="after")
    def check_path(self):
        if self.source in ("sparse_file", "ratings_file") and not self.path:
            raise ValueError(f"source {self.source} requires a path")
        return self


class OptimizerSection(_Section):
    """Schema for [optimizer]"""
    gamma: float
    lam: float = Field(0.0, alias="lambda")
    k_latent: int = 5
    batch_size: int = 10
    t_max: Optional[int] = None

    @field_validator("gamma")
    @classmethod
    def validate_gamma(cls, v):
        if not v > 0:
            raise ValueError("gamma must be positive")
        return v

    @field_validator("lam")
    @classmethod
    def validate_lam(cls, v):
        if v < 0:
            raise ValueError("lambda must be non-negative")
        return v

    @field_validator("k_latent", "batch_size")
    @classmethod
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("t_max")
    @classmethod
    def validate_t_max(cls, v):
        if v is not None and v < 1:
            raise ValueError("t_max must be at least 1")
        return v


class SimulationSection(_Section):
    """Schema for [simulation]"""
    schedule: Literal["delay", "timing"] = "delay"
    delay_kind: Literal["constant", "uniform_random", "adversarial_cycle"] = "constant"
    d_max: int = 0
    # timing mode: explicit ticks per machine, else the machine's work units
    compute_ticks: List[int] = Field(default_factory=list)
    slowdown: List[int] = Field(default_factory=list)
    comm_ticks: int = 0

    @field_validator("compute_ticks", "slowdown", mode="before")
    @classmethod
    def parse_lists(cls, v):
        return _split_list(v)

    @field_validator("d_max", "comm_ticks")
    @classmethod
    def validate_non_negative(cls, v):
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @field_validator("compute_ticks", "slowdown")
    @classmethod
    def validate_ticks(cls, v):
        if any(t < 1 for t in v):
            raise ValueError("tick counts and slowdown factors must be at least 1")
        return v


class ProtocolSection(_Section):
    """Schema for [protocol]"""
    broadcast_on_ingest: bool = False
    warm_start: Optional[bool] = None
    queue_capacity: Optional[int] = None
    shuffle_strata: bool = False

    @field_validator("queue_capacity")
    @classmethod
    def validate_capacity(cls, v):
        if v is not None and v < 1:
            raise ValueError("queue_capacity must be at least 1")
        return v


class StoppingSection(_Section):
    """Schema for [stopping]"""
    epsilon: float = 1e-4
    max_epochs: int = 100
    target_objective: Optional[float] = None

    @field_validator("epsilon")
    @classmethod
    def validate_epsilon(cls, v):
        if not v > 0:
            raise ValueError("epsilon must be positive")
        return v

    @field_validator("max_epochs")
    @classmethod
    def validate_max_epochs(cls, v):
        if v < 1:
            raise ValueError("max_epochs must be at least 1")
        return v


class EvaluationSection(_Section):
    """Schema for [evaluation]"""
    unseen_policy: Literal["skip", "global_mean"] = "skip"
    objective_every: int = 1

    @field_validator("objective_every")
    @classmethod
    def validate_cadence(cls, v):
        if v < 1:
            raise ValueError("objective_every must be at least 1")
        return v


class ExperimentConfig(_Section):
    """Declarative description of one run"""
    experiment: ExperimentSection
    data: DataSection
    optimizer: OptimizerSection
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    protocol: ProtocolSection = Field(default_factory=ProtocolSection)
    stopping: StoppingSection = Field(default_factory=StoppingSection)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)

    @model_validator(mode="after")
    def check_consistency(self):
        algorithm = self.experiment.algorithm
        source = self.data.source
        if algorithm in MF_ALGORITHMS and source not in RATING_SOURCES:
            raise ValueError(f"{algorithm} needs a ratings source, got {source}")
        if algorithm in CLASSIFICATION_ALGORITHMS and source not in CLASSIFICATION_SOURCES:
            raise ValueError(f"{algorithm} needs a classification source, got {source}")
        if self.protocol.warm_start and algorithm != "adg_bc":
            raise ValueError("warm_start is only available for adg_bc")
        if algorithm == "async_svrg" and self.simulation.schedule == "timing":
            raise ValueError("async_svrg supports only the delay schedule")
        m = self.experiment.m
        for name in ("compute_ticks", "slowdown"):
            values = getattr(self.simulation, name)
            if values and len(values) != m:
                raise ValueError(f"simulation.{name} needs one entry per machine ({m})")
        return self

    @property
    def algorithm(self) -> str:
        return self.experiment.algorithm

    @property
    def m(self) -> int:
        return self.experiment.m

    @property
    def is_mf(self) -> bool:
        return self.experiment.algorithm in MF_ALGORITHMS

    @property
    def warm_start(self) -> bool:
        if self.protocol.warm_start is None:
            return self.experiment.algorithm == "adg_bc"
        return self.protocol.warm_start

    def with_updates(self, **sections: Dict[str, object]) -> "ExperimentConfig":
        """Copy with some section fields replaced, re-validated"""
        data = self.model_dump()
        for section, values in sections.items():
            data.setdefault(section, {}).update(values)
        return build_config(data)

    @classmethod
    def from_ini(cls, path: Union[str, Path], overrides: Sequence[str] = ()) -> "ExperimentConfig":
        return load_config(path, overrides)


def build_config(data: Dict[str, Dict[str, object]]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment configuration: {e}") from e


def parse_override(override: str):
    """'section.key=value' -> (section, key, value)"""
    if "=" not in override:
        raise ConfigError(f"override {override!r} is not of the form section.key=value")
    target, value = override.split("=", 1)
    if "." not in target:
        raise ConfigError(f"override {override!r} does not name a section")
    section, key = target.strip().split(".", 1)
    return section.strip(), key.strip(), value.strip()


def ini_to_dict(text: str, overrides: Sequence[str] = ()) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config file is not valid INI: {e}") from e
    data: Dict[str, Dict[str, str]] = {s: dict(parser.items(s)) for s in parser.sections()}
    for override in overrides:
        section, key, value = parse_override(override)
        data.setdefault(section, {})[key] = value
    # empty values mean "use the default"
    return {s: {k: v for k, v in items.items() if v != ""} for s, items in data.items()}


def load_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    config = build_config(ini_to_dict(path.read_text(encoding="utf-8"), overrides))
    logger.debug(f"Loaded config {path} ({config.algorithm}, m={config.m})")
    return config
