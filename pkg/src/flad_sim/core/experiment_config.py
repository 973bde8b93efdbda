"""Experiment configuration: TOML files validated into strict pydantic models."""

from __future__ import annotations

import tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import Field, ValidationError, field_validator, model_validator

from flad_sim.core.datagen import ANALYSIS_FEATURES, DEFAULT_MAX_PER_CLASS, MIN_BASE_COUNT
from flad_sim.core.federation import FLHyperParams
from flad_sim.core.schema import SchemaModel
from flad_sim.core.seeding import U64_MAX

ScenarioName = Literal["convergence", "retraining", "scalability", "single-run"]


class ConfigError(ValueError):
    """Raised when an experiment configuration cannot be read or validated."""


class ClientTiming(SchemaModel):
    step_time: float | None = Field(default=None, gt=0.0)
    network_time: float | None = Field(default=None, ge=0.0)


class TimingModel(SchemaModel):
    """Simulated cost model: per-step time grows with the client's training-set size."""

    seconds_per_sample: float = Field(default=1e-5, gt=0.0)
    network_seconds: float = Field(default=0.5, ge=0.0)
    clients: dict[str, ClientTiming] = Field(default_factory=dict)

    def step_time(self, dataset_tag: str, train_samples: int) -> float:
        override = self.clients.get(dataset_tag)
        if override is not None and override.step_time is not None:
            return override.step_time
        return self.seconds_per_sample * max(train_samples, 1)

    def network_time(self, dataset_tag: str) -> float:
        override = self.clients.get(dataset_tag)
        if override is not None and override.network_time is not None:
            return override.network_time
        return self.network_seconds


class DatasetSource(SchemaModel):
    """Either a generated federation from the attack library or a list of FLND files."""

    library_path: Path | None = None
    attacks: list[str] | None = None
    base_count: int = Field(default=40, ge=MIN_BASE_COUNT)
    max_per_class: int = Field(default=DEFAULT_MAX_PER_CLASS, ge=1)
    attacks_per_client: Literal[1, 2] = 1
    clients: int | None = Field(default=None, ge=1)
    dataset_paths: list[Path] = Field(default_factory=list)
    normalize: bool = True

    @field_validator("attacks")
    @classmethod
    def _unique_attacks(cls, attacks: list[str] | None) -> list[str] | None:
        if attacks is not None:
            if not attacks:
                raise ValueError("attacks must list at least one attack when given")
            if len(set(attacks)) != len(attacks):
                raise ValueError(f"attacks must be unique, got {attacks}")
        return attacks

    @property
    def uses_files(self) -> bool:
        return bool(self.dataset_paths)


class GammaPolicy(SchemaModel):
    """FLDDoS blending weight per attack; multi-attack clients take the smallest."""

    default: float = Field(default=1.0, ge=0.0, le=1.0)
    by_attack: dict[str, float] = Field(default_factory=dict)

    @field_validator("by_attack")
    @classmethod
    def _check_range(cls, values: dict[str, float]) -> dict[str, float]:
        for attack, gamma in values.items():
            if not 0.0 <= gamma <= 1.0:
                raise ValueError(f"gamma for '{attack}' must lie in [0, 1], got {gamma}")
        return values

    def gamma_for(self, attack_tags: tuple[str, ...]) -> float:
        if not attack_tags:
            return self.default
        return min(self.by_attack.get(tag, self.default) for tag in attack_tags)


class RetrainingConfig(SchemaModel):
    initial_clients: int = Field(default=2, ge=2)


class ScalabilityConfig(SchemaModel):
    sizes: list[int] = Field(default_factory=lambda: [13, 20, 30], min_length=1)

    @field_validator("sizes")
    @classmethod
    def _positive(cls, sizes: list[int]) -> list[int]:
        if any(size < 1 for size in sizes):
            raise ValueError(f"federation sizes must be >= 1, got {sizes}")
        return sizes


class AnalysisConfig(SchemaModel):
    bins: int = Field(default=100, ge=1)
    features: list[str] = Field(default_factory=lambda: list(ANALYSIS_FEATURES), min_length=1)

    @field_validator("features")
    @classmethod
    def _known_features(cls, features: list[str]) -> list[str]:
        unknown = [name for name in features if name not in ANALYSIS_FEATURES]
        if unknown:
            raise ValueError(f"unknown analysis features {unknown}; known: {list(ANALYSIS_FEATURES)}")
        return features


class ExperimentConfig(SchemaModel):
    scenario: ScenarioName = "convergence"
    seed: int = Field(default=0, ge=0, le=U64_MAX)
    repetitions: int = Field(default=1, ge=1)
    output_dir: Path = Path("work/runs/default")
    dataset: DatasetSource = Field(default_factory=DatasetSource)
    strategies: list[FLHyperParams] = Field(default_factory=lambda: [FLHyperParams()], min_length=1)
    flddos_gamma: GammaPolicy = Field(default_factory=GammaPolicy)
    timing: TimingModel = Field(default_factory=TimingModel)
    retraining: RetrainingConfig = Field(default_factory=RetrainingConfig)
    scalability: ScalabilityConfig = Field(default_factory=ScalabilityConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    parallel_clients: bool = False
    max_workers: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_strategies(self) -> ExperimentConfig:
        names = [strategy.name for strategy in self.strategies]
        if len(set(names)) != len(names):
            raise ValueError(f"strategy names must be unique, got {names}")
        if self.scenario == "convergence" and not any(
            strategy.strategy == "flad" for strategy in self.strategies
        ):
            raise ValueError("the convergence scenario needs a 'flad' strategy to set the round count")
        return self

    def primary_strategy(self) -> FLHyperParams:
        """The first FLAD strategy, or the first strategy when none is FLAD."""
        for strategy in self.strategies:
            if strategy.strategy == "flad":
                return strategy
        return self.strategies[0]

    def ordered_strategies(self) -> list[FLHyperParams]:
        """Primary strategy first, then the rest in file order."""
        primary = self.primary_strategy()
        return [primary, *(strategy for strategy in self.strategies if strategy is not primary)]


def load_experiment_config(
    path: Path,
    *,
    seed_override: int | None = None,
    output_override: Path | None = None,
) -> ExperimentConfig:
    """Read, validate and resolve a TOML experiment file.

    Relative dataset paths resolve against the file's directory; `output_dir` stays
    relative to the working directory.
    """
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    if seed_override is not None:
        if not 0 <= seed_override <= U64_MAX:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed_override}")
        raw["seed"] = seed_override
    if output_override is not None:
        raw["output_dir"] = str(output_override)
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    resolved = _resolve_dataset_paths(config.dataset, path.parent)
    config = config.model_copy(update={"dataset": resolved})
    validate_paths(config)
    return config


def validate_paths(config: ExperimentConfig) -> None:
    """Every referenced input file must exist."""
    source = config.dataset
    if source.library_path is not None and not source.library_path.is_file():
        raise ConfigError(f"attack library not found: {source.library_path}")
    for dataset_path in source.dataset_paths:
        if not dataset_path.is_file():
            raise ConfigError(f"dataset file not found: {dataset_path}")


def effective_config(config: ExperimentConfig) -> dict[str, Any]:
    return config.model_dump(mode="json")


def _resolve_dataset_paths(source: DatasetSource, base: Path) -> DatasetSource:
    def _resolve(value: Path) -> Path:
        return value if value.is_absolute() else base / value

    return source.model_copy(
        update={
            "library_path": _resolve(source.library_path) if source.library_path else None,
            "dataset_paths": [_resolve(item) for item in source.dataset_paths],
        }
    )
