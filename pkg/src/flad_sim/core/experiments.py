"""Experiment protocols: convergence comparison, staged retraining, size sweep and JSD analysis.

Functions here return plain results; writing them to disk is the application layer's job.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any

import numpy as np

from flad_sim.core.analysis import (
    ConfusionCounts,
    FeatureHistogram,
    JsdMatrix,
    confusion,
    f1_score,
    feature_histograms,
    feature_ranges,
    jsd_matrix,
    tpr,
)
from flad_sim.core.attack_specs import load_attack_library
from flad_sim.core.datagen import (
    CapacityError,
    DatasetSplit,
    FeatureScaler,
    FlowArrays,
    client_attack_groups,
    client_dataset,
    federation_capacity,
    generate_attack_datasets,
)
from flad_sim.core.dataset_format import load_dataset
from flad_sim.core.experiment_config import ConfigError, ExperimentConfig
from flad_sim.core.federation import (
    ClientState,
    FederationResult,
    FLHyperParams,
    RoundReport,
    run_federation,
)
from flad_sim.core.nn_core import ModelParams, forward, init_model, mlp_layer_dims
from flad_sim.core.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

RoundSink = Callable[[str, RoundReport], None]
"""Receives (stream name, report) for every round of every federation run."""


@dataclass(frozen=True, eq=False)
class FederationData:
    """Per-attack datasets plus the client datasets built from them."""

    attack_splits: tuple[DatasetSplit, ...]
    client_splits: tuple[DatasetSplit, ...]
    library_digest: str | None = None

    @property
    def attack_tags(self) -> tuple[str, ...]:
        return tuple(split.attack_tag for split in self.attack_splits)


def load_federation_data(config: ExperimentConfig) -> FederationData:
    """Generate the configured federation, or load it from FLND files."""
    source = config.dataset
    if source.uses_files:
        splits = tuple(load_dataset(path) for path in source.dataset_paths)
        logger.info("experiments.data source=files datasets=%d", len(splits))
        return FederationData(attack_splits=splits, client_splits=splits)
    library = load_attack_library(source.library_path)
    specs = library.select(source.attacks)
    clients = source.clients if source.clients is not None else len(specs)
    groups = client_attack_groups(len(specs), source.attacks_per_client, clients, config.seed)
    attack_splits = generate_attack_datasets(
        specs,
        source.base_count,
        config.seed,
        benign=library.benign,
        max_per_class=source.max_per_class,
    )
    client_splits = tuple(client_dataset(attack_splits, group) for group in groups)
    logger.info(
        "experiments.data source=library attacks=%d clients=%d", len(specs), len(client_splits)
    )
    return FederationData(
        attack_splits=tuple(attack_splits),
        client_splits=client_splits,
        library_digest=library.digest(),
    )


def client_id_for(index: int, split: DatasetSplit) -> str:
    return f"{index:03d}_{split.attack_tag}"


def fit_scaler(config: ExperimentConfig, splits: Sequence[DatasetSplit]) -> FeatureScaler | None:
    if not config.dataset.normalize:
        return None
    return FeatureScaler.fit([split.train for split in splits])


def build_clients(
    named_splits: Sequence[tuple[str, DatasetSplit]],
    config: ExperimentConfig,
    seed: int,
    scaler: FeatureScaler | None = None,
) -> list[ClientState]:
    """Client states with flattened inputs, timing parameters and FLDDoS gamma."""
    clients: list[ClientState] = []
    for client_id, split in named_splits:
        data = scaler.transform_split(split) if scaler is not None else split
        train_samples = len(data.train)
        clients.append(
            ClientState(
                client_id=client_id,
                train_inputs=data.train.flat_inputs(),
                train_labels=data.train.labels,
                validation_inputs=data.validation.flat_inputs(),
                validation_labels=data.validation.labels,
                test_inputs=data.test.flat_inputs(),
                test_labels=data.test.labels,
                test_tags=data.test.tags,
                attack_tags=split.attack_tags,
                gamma=config.flddos_gamma.gamma_for(split.attack_tags),
                step_time=config.timing.step_time(split.attack_tag, train_samples),
                network_time=config.timing.network_time(split.attack_tag),
                rng_seed=derive_seed(seed, "client", client_id),
            )
        )
    return clients


def repetition_seed(config: ExperimentConfig, repetition: int) -> int:
    return derive_seed(config.seed, "repetition", repetition)


@dataclass(frozen=True)
class AttackMetrics:
    tpr: float
    f1: float
    samples: int


def attack_metrics(model: ModelParams, clients: Sequence[ClientState]) -> dict[str, AttackMetrics]:
    """Test-set TPR and F1 of `model` per DDoS attack tag.

    TPR counts every test sample carrying the tag. F1 also counts the benign test
    samples of the clients that hold the attack.
    """
    detected: dict[str, ConfusionCounts] = {}
    scored: dict[str, ConfusionCounts] = {}
    for client in clients:
        if client.test_inputs is None or client.test_labels is None or not len(client.test_inputs):
            continue
        probs = forward(model, client.test_inputs)
        labels = np.asarray(client.test_labels)
        tags = np.asarray(client.test_tags, dtype=object)
        benign = confusion(probs[labels == 0], labels[labels == 0])
        for tag in client.attack_tags:
            mask = (labels == 1) & (tags == tag)
            counts = confusion(probs[mask], labels[mask])
            detected[tag] = detected.get(tag, ConfusionCounts(0, 0, 0, 0)) + counts
            scored[tag] = scored.get(tag, ConfusionCounts(0, 0, 0, 0)) + counts + benign
    return {
        tag: AttackMetrics(tpr=tpr(detected[tag]), f1=f1_score(scored[tag]), samples=detected[tag].total)
        for tag in sorted(detected)
    }


@dataclass(frozen=True, eq=False)
class StrategyRun:
    strategy: str
    repetition: int
    result: FederationResult
    attacks: dict[str, AttackMetrics]

    def summary(self) -> dict[str, Any]:
        """Per-run metrics; every value is recomputable from the round reports."""
        reports = self.result.reports
        best = reports[self.result.best_round - 1] if self.result.best_round else None
        total_simulated = self.result.total_simulated_seconds
        return {
            "rounds": self.result.rounds,
            "best_round": self.result.best_round,
            "best_f1": self.result.best_accuracy,
            "f1_std": best.accuracy_std if best is not None else 0.0,
            "total_simulated_seconds": total_simulated,
            "mean_round_seconds": total_simulated / self.result.rounds if reports else 0.0,
            "mbgd_steps": self.result.total_mbgd_steps,
            "truncated": self.result.truncated,
            "test_tpr": {tag: metrics.tpr for tag, metrics in self.attacks.items()},
            "test_f1": {tag: metrics.f1 for tag, metrics in self.attacks.items()},
            "selection_counts": self.result.selection_counts(),
            "final_client_f1": reports[-1].accuracies() if reports else {},
        }


def _stream(sink: RoundSink | None, name: str) -> Callable[[RoundReport], None] | None:
    if sink is None:
        return None
    return lambda report: sink(name, report)


def run_strategies(
    data: FederationData,
    config: ExperimentConfig,
    repetition: int,
    *,
    sink: RoundSink | None = None,
) -> list[StrategyRun]:
    """One repetition of the strategy comparison on shared data and seeds.

    In the convergence scenario the primary FLAD strategy runs to its patience stop
    and every other strategy runs exactly that many rounds.
    """
    seed = repetition_seed(config, repetition)
    named = [(client_id_for(i, split), split) for i, split in enumerate(data.client_splits)]
    scaler = fit_scaler(config, data.client_splits)
    runs: list[StrategyRun] = []
    matched_rounds: int | None = None
    for hp in config.ordered_strategies():
        clients = build_clients(named, config, seed, scaler)
        result = run_federation(
            clients,
            hp,
            seed,
            fixed_rounds=matched_rounds,
            on_round=_stream(sink, hp.name),
            parallel_clients=config.parallel_clients,
            max_workers=config.max_workers,
        )
        if config.scenario == "convergence" and matched_rounds is None:
            matched_rounds = result.rounds
            logger.info("experiments.matched_rounds repetition=%d rounds=%d", repetition, matched_rounds)
        runs.append(
            StrategyRun(
                strategy=hp.name,
                repetition=repetition,
                result=result,
                attacks=attack_metrics(result.best_model, clients),
            )
        )
    return runs


@dataclass(frozen=True)
class StageResult:
    repetition: int
    stage: int
    attacks_added: tuple[str, ...]
    clients: tuple[str, ...]
    rounds: int
    best_round: int
    mean_f1: float
    f1_std: float
    start_digest: str
    best_digest: str
    simulated_seconds: float

    def to_record(self) -> dict[str, Any]:
        return {
            "repetition": self.repetition,
            "stage": self.stage,
            "attacks_added": list(self.attacks_added),
            "clients": list(self.clients),
            "rounds": self.rounds,
            "best_round": self.best_round,
            "mean_f1": self.mean_f1,
            "f1_std": self.f1_std,
            "start_digest": self.start_digest,
            "best_digest": self.best_digest,
            "simulated_seconds": self.simulated_seconds,
        }


def run_retraining(
    data: FederationData,
    config: ExperimentConfig,
    repetition: int,
    *,
    sink: RoundSink | None = None,
) -> list[StageResult]:
    """Grow the federation one attack at a time, each stage starting from the last best model."""
    attack_count = len(data.attack_splits)
    initial_clients = config.retraining.initial_clients
    if attack_count < 3 or attack_count < initial_clients:
        raise ConfigError(
            f"retraining needs at least 3 attacks and {initial_clients} initial clients, "
            f"got {attack_count} attacks"
        )
    seed = repetition_seed(config, repetition)
    hp = config.primary_strategy()
    order = [int(i) for i in rng_for(seed, "retraining-order").permutation(attack_count)]
    named_all = [(client_id_for(i, split), split) for i, split in enumerate(data.attack_splits)]
    scaler = fit_scaler(config, data.attack_splits)
    model = _initial_model(named_all[0][1], hp, seed)

    stages: list[StageResult] = []
    for stage, size in enumerate(range(initial_clients, attack_count + 1), start=1):
        members = [named_all[index] for index in order[:size]]
        added = order[:size] if stage == 1 else order[size - 1 : size]
        clients = build_clients(members, config, seed, scaler)
        result = run_federation(
            clients,
            hp,
            derive_seed(seed, "stage", stage),
            initial_model=model,
            on_round=_stream(sink, f"stage_{stage:02d}"),
            parallel_clients=config.parallel_clients,
            max_workers=config.max_workers,
        )
        best = result.reports[result.best_round - 1] if result.best_round else None
        stage_result = StageResult(
            repetition=repetition,
            stage=stage,
            attacks_added=tuple(data.attack_splits[index].attack_tag for index in added),
            clients=tuple(client.client_id for client in clients),
            rounds=result.rounds,
            best_round=result.best_round,
            mean_f1=result.best_accuracy,
            f1_std=best.accuracy_std if best is not None else 0.0,
            start_digest=model.digest(),
            best_digest=result.best_model.digest(),
            simulated_seconds=result.total_simulated_seconds,
        )
        logger.info(
            "experiments.stage repetition=%d stage=%d clients=%d mean_f1=%.4f std=%.4f",
            repetition,
            stage,
            len(clients),
            stage_result.mean_f1,
            stage_result.f1_std,
        )
        stages.append(stage_result)
        model = result.best_model
    return stages


def scalability_groups(
    attack_count: int, size: int, rng: np.random.Generator
) -> list[tuple[int, ...]]:
    """All single-attack clients plus random pairs, or a random subset of singles."""
    capacity = federation_capacity(attack_count, 2)
    if size > capacity:
        raise CapacityError(
            f"federation size {size} exceeds capacity {capacity} "
            f"({attack_count} single attacks + {math.comb(attack_count, 2)} pairs)"
        )
    if size < attack_count:
        chosen = sorted(int(i) for i in rng.choice(attack_count, size=size, replace=False))
        return [(index,) for index in chosen]
    pairs = list(combinations(range(attack_count), 2))
    picked = sorted(int(i) for i in rng.choice(len(pairs), size=size - attack_count, replace=False))
    return [*((index,) for index in range(attack_count)), *(pairs[i] for i in picked)]


def check_scalability_sizes(config: ExperimentConfig, attack_count: int) -> None:
    capacity = federation_capacity(attack_count, 2)
    too_large = [size for size in config.scalability.sizes if size > capacity]
    if too_large:
        raise CapacityError(
            f"federation sizes {too_large} exceed capacity {capacity} "
            f"({attack_count} single attacks + {math.comb(attack_count, 2)} pairs)"
        )


@dataclass(frozen=True)
class SizeRun:
    size: int
    repetition: int
    f1: float
    f1_std: float
    rounds: int
    convergence_seconds: float


def run_scalability(
    data: FederationData,
    config: ExperimentConfig,
    size: int,
    repetition: int,
    *,
    sink: RoundSink | None = None,
) -> SizeRun:
    """One federation of `size` clients; convergence time includes the patience tail."""
    seed = repetition_seed(config, repetition)
    hp = config.primary_strategy()
    groups = scalability_groups(len(data.attack_splits), size, rng_for(seed, "scalability", size))
    named = [
        (client_id_for(i, split), split)
        for i, split in enumerate(client_dataset(data.attack_splits, group) for group in groups)
    ]
    scaler = fit_scaler(config, data.attack_splits)
    clients = build_clients(named, config, seed, scaler)
    result = run_federation(
        clients,
        hp,
        derive_seed(seed, "size", size),
        on_round=_stream(sink, f"size_{size:03d}"),
        parallel_clients=config.parallel_clients,
        max_workers=config.max_workers,
    )
    best = result.reports[result.best_round - 1] if result.best_round else None
    return SizeRun(
        size=size,
        repetition=repetition,
        f1=result.best_accuracy,
        f1_std=best.accuracy_std if best is not None else 0.0,
        rounds=result.rounds,
        convergence_seconds=result.total_simulated_seconds,
    )


@dataclass(frozen=True, eq=False)
class AnalysisOutcome:
    matrix: JsdMatrix
    histograms: dict[str, list[FeatureHistogram]]
    ranges: dict[str, tuple[float, float]]


def analysis_samples(split: DatasetSplit) -> FlowArrays:
    """DDoS samples of a dataset, or all of them when it holds no DDoS traffic."""
    samples = split.all_samples()
    attacks = samples.with_label(1)
    return attacks if len(attacks) else samples


def run_analysis(splits: Sequence[DatasetSplit], config: ExperimentConfig) -> AnalysisOutcome:
    datasets = [(split.attack_tag, analysis_samples(split).features) for split in splits]
    features = config.analysis.features
    ranges = feature_ranges(datasets, features)
    histograms = feature_histograms(datasets, features, config.analysis.bins, ranges)
    matrix = jsd_matrix(datasets, features, config.analysis.bins, ranges)
    return AnalysisOutcome(matrix=matrix, histograms=histograms, ranges=ranges)


@dataclass(frozen=True)
class MetricStat:
    mean: float
    std: float

    def to_record(self) -> dict[str, float]:
        return {"mean": self.mean, "std": self.std}


def metric_stat(values: Sequence[float]) -> MetricStat:
    if not values:
        return MetricStat(mean=0.0, std=0.0)
    array = np.asarray(values, dtype=np.float64)
    return MetricStat(mean=float(array.mean()), std=float(array.std()))


@dataclass
class _Collector:
    scalars: dict[str, list[float]] = field(default_factory=dict)
    tpr: dict[str, list[float]] = field(default_factory=dict)
    f1: dict[str, list[float]] = field(default_factory=dict)


_SCALAR_METRICS = (
    "rounds",
    "best_round",
    "best_f1",
    "f1_std",
    "total_simulated_seconds",
    "mean_round_seconds",
    "mbgd_steps",
)


def summarize_strategies(runs: Sequence[StrategyRun]) -> dict[str, Any]:
    """Mean and standard deviation over repetitions, keyed by strategy name."""
    collectors: dict[str, _Collector] = {}
    for run in runs:
        summary = run.summary()
        collector = collectors.setdefault(run.strategy, _Collector())
        for metric in _SCALAR_METRICS:
            collector.scalars.setdefault(metric, []).append(float(summary[metric]))
        for tag, value in summary["test_tpr"].items():
            collector.tpr.setdefault(tag, []).append(value)
        for tag, value in summary["test_f1"].items():
            collector.f1.setdefault(tag, []).append(value)
    return {
        strategy: {
            "repetitions": len(collector.scalars.get("rounds", [])),
            **{
                metric: metric_stat(values).to_record()
                for metric, values in collector.scalars.items()
            },
            "test_tpr": {tag: metric_stat(v).to_record() for tag, v in sorted(collector.tpr.items())},
            "test_f1": {tag: metric_stat(v).to_record() for tag, v in sorted(collector.f1.items())},
        }
        for strategy, collector in collectors.items()
    }


def summarize_sizes(runs: Sequence[SizeRun]) -> list[dict[str, Any]]:
    by_size: dict[int, list[SizeRun]] = {}
    for run in runs:
        by_size.setdefault(run.size, []).append(run)
    rows: list[dict[str, Any]] = []
    for size in sorted(by_size):
        group = by_size[size]
        f1 = metric_stat([run.f1 for run in group])
        seconds = metric_stat([run.convergence_seconds for run in group])
        rounds = metric_stat([float(run.rounds) for run in group])
        rows.append(
            {
                "size": size,
                "repetitions": len(group),
                "f1_mean": f1.mean,
                "f1_std": f1.std,
                "convergence_seconds_mean": seconds.mean,
                "convergence_seconds_std": seconds.std,
                "rounds_mean": rounds.mean,
                "rounds_std": rounds.std,
            }
        )
    return rows


def _initial_model(split: DatasetSplit, hp: FLHyperParams, seed: int) -> ModelParams:
    packets, features = split.train.flow_shape
    dims = mlp_layer_dims(packets * features, hp.hidden_layers, hp.neurons_per_layer)
    return init_model(dims, derive_seed(seed, "init"))
