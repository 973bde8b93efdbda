"""Server-side orchestration: adaptive client selection, aggregation and the round loop."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import partial
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
from pydantic import Field, model_validator

from flad_sim.core.analysis import confusion, f1_score
from flad_sim.core.nn_core import (
    EmptyDatasetError,
    FloatArray,
    LabelArray,
    ModelParams,
    TrainConfig,
    forward,
    init_model,
    mbgd_fit,
    mlp_layer_dims,
)
from flad_sim.core.schema import SchemaModel
from flad_sim.core.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

StrategyName = Literal["flad", "fedavg", "flddos"]


class FederationInputError(ValueError):
    """Raised when orchestration inputs are empty or out of range."""


class ModelCompatibilityError(ValueError):
    """Raised when models with different layer widths meet in one operation."""


class FLHyperParams(SchemaModel):
    """Per-strategy federation settings. FLAD bounds default to 25 / 1..5 / 10..1000."""

    name: str = Field(default="", max_length=64, pattern=r"^[A-Za-z0-9_.-]*$")
    strategy: StrategyName = "flad"
    patience: int = Field(default=25, ge=1)
    e_min: int = Field(default=1, ge=1)
    e_max: int = Field(default=5, ge=1)
    s_min: int = Field(default=10, ge=1)
    s_max: int = Field(default=1000, ge=1)
    client_fraction: float = Field(default=0.8, gt=0.0, le=1.0)
    fixed_epochs: int = Field(default=1, ge=1)
    batch_size: int = Field(default=50, ge=1)
    learning_rate: float = Field(default=0.01, gt=0.0)
    max_rounds: int | None = Field(default=None, ge=1)
    hidden_layers: int = Field(default=2, ge=1)
    neurons_per_layer: int = Field(default=32, ge=1)

    @model_validator(mode="after")
    def _check_bounds(self) -> FLHyperParams:
        if self.e_min > self.e_max:
            raise ValueError(f"e_min ({self.e_min}) must not exceed e_max ({self.e_max})")
        if self.s_min > self.s_max:
            raise ValueError(f"s_min ({self.s_min}) must not exceed s_max ({self.s_max})")
        if not self.name:
            self.name = self.strategy
        return self


@dataclass(frozen=True)
class TrainingSchedule:
    """Local budget for one round; unselected clients hold the zero schedule."""

    epochs: int
    steps: int
    selected: bool
    batch_size: int | None = None

    def __post_init__(self) -> None:
        if self.selected and (self.epochs < 1 or self.steps < 1):
            raise FederationInputError(
                f"selected schedule needs epochs and steps >= 1, got ({self.epochs}, {self.steps})"
            )
        if not self.selected and (self.epochs != 0 or self.steps != 0):
            raise FederationInputError("unselected schedule must have zero epochs and steps")

    @property
    def mbgd_steps(self) -> int:
        return self.epochs * self.steps


IDLE = TrainingSchedule(epochs=0, steps=0, selected=False)


@dataclass(eq=False)
class ClientState:
    """One federation participant: its data, timing model and the models it holds."""

    client_id: str
    train_inputs: FloatArray
    train_labels: LabelArray
    validation_inputs: FloatArray
    validation_labels: LabelArray
    test_inputs: FloatArray | None = None
    test_labels: LabelArray | None = None
    test_tags: tuple[str, ...] = ()
    attack_tags: tuple[str, ...] = ()
    gamma: float = 1.0
    step_time: float = 1e-3
    network_time: float = 0.0
    rng_seed: int = 0
    current_model: ModelParams | None = None
    last_update: ModelParams | None = None
    local_model: ModelParams | None = None
    schedule: TrainingSchedule = IDLE
    last_accuracy: float = 0.0

    def __post_init__(self) -> None:
        if not self.client_id:
            raise FederationInputError("client id must not be empty")
        if not 0.0 <= self.gamma <= 1.0:
            raise FederationInputError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.step_time > 0.0:
            raise FederationInputError(f"step_time must be > 0, got {self.step_time}")
        if not self.network_time >= 0.0:
            raise FederationInputError(f"network_time must be >= 0, got {self.network_time}")
        if self.train_inputs.ndim != 2 or self.validation_inputs.ndim != 2:
            raise FederationInputError(f"client '{self.client_id}' inputs must be 2-D matrices")
        if len(self.train_labels) != len(self.train_inputs):
            raise FederationInputError(f"client '{self.client_id}' train labels do not match")
        if len(self.validation_labels) != len(self.validation_inputs):
            raise FederationInputError(f"client '{self.client_id}' validation labels do not match")
        if len(self.validation_inputs) == 0:
            raise FederationInputError(f"client '{self.client_id}' has an empty validation set")

    @property
    def n_train(self) -> int:
        return int(self.train_inputs.shape[0])

    @property
    def input_width(self) -> int:
        return int(self.train_inputs.shape[1])


@dataclass(frozen=True)
class ClientUpdate:
    model: ModelParams
    local_model: ModelParams | None = None


@dataclass(frozen=True)
class ClientRoundRecord:
    client_id: str
    accuracy: float
    epochs: int
    steps: int
    selected: bool
    simulated_seconds: float

    def to_record(self) -> dict[str, Any]:
        return {
            "client_id": self.client_id,
            "accuracy": self.accuracy,
            "epochs": self.epochs,
            "steps": self.steps,
            "selected": self.selected,
            "simulated_seconds": self.simulated_seconds,
        }


@dataclass(frozen=True)
class RoundReport:
    """Everything observed in one round; wall-clock fields stay out of `to_record`."""

    round_index: int
    selected: tuple[str, ...]
    clients: tuple[ClientRoundRecord, ...]
    mean_accuracy: float
    accuracy_std: float
    best_accuracy: float
    stop_counter: int
    improved: bool
    simulated_seconds: float
    cumulative_simulated_seconds: float
    mbgd_steps: int
    model_digest: str
    truncated: bool = False
    wall_seconds: float = 0.0
    cumulative_wall_seconds: float = 0.0

    def accuracies(self) -> dict[str, float]:
        return {record.client_id: record.accuracy for record in self.clients}

    def to_record(self) -> dict[str, Any]:
        return {
            "round": self.round_index,
            "selected": list(self.selected),
            "mean_accuracy": self.mean_accuracy,
            "accuracy_std": self.accuracy_std,
            "best_accuracy": self.best_accuracy,
            "stop_counter": self.stop_counter,
            "improved": self.improved,
            "simulated_seconds": self.simulated_seconds,
            "cumulative_simulated_seconds": self.cumulative_simulated_seconds,
            "mbgd_steps": self.mbgd_steps,
            "model_digest": self.model_digest,
            "truncated": self.truncated,
            "clients": [record.to_record() for record in self.clients],
        }


@dataclass(frozen=True, eq=False)
class FederationResult:
    best_model: ModelParams
    best_round: int
    best_accuracy: float
    initial_model: ModelParams
    final_model: ModelParams
    reports: tuple[RoundReport, ...]
    truncated: bool
    wall_seconds: float = 0.0

    @property
    def rounds(self) -> int:
        return len(self.reports)

    @property
    def total_simulated_seconds(self) -> float:
        return self.reports[-1].cumulative_simulated_seconds if self.reports else 0.0

    @property
    def total_mbgd_steps(self) -> int:
        return sum(report.mbgd_steps for report in self.reports)

    def selection_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for report in self.reports:
            for record in report.clients:
                counts.setdefault(record.client_id, 0)
                if record.selected:
                    counts[record.client_id] += 1
        return counts


Evaluator = Callable[[ClientState, ModelParams, int], float]
RoundCallback = Callable[[RoundReport], None]


def select_clients(
    accuracies: Mapping[str, float], hp: FLHyperParams
) -> dict[str, TrainingSchedule]:
    """Pick clients at or below the mean accuracy and scale their budget by distance.

    Comparisons run on exact rationals of the reported floats. The least accurate
    selected client gets (e_max, s_max); the most accurate gets (e_min, s_min), or the
    maximum budget when every selected client reports the same value.
    """
    if not accuracies:
        raise FederationInputError("client selection needs at least one accuracy")
    exact: dict[str, Fraction] = {}
    for client_id, accuracy in accuracies.items():
        if not (math.isfinite(accuracy) and 0.0 <= accuracy <= 1.0):
            raise FederationInputError(
                f"accuracy of client '{client_id}' must lie in [0, 1], got {accuracy}"
            )
        exact[client_id] = Fraction(accuracy)
    total = sum(exact.values(), Fraction(0))
    count = len(exact)
    chosen = [client_id for client_id, value in exact.items() if count * value <= total]
    highest = max(exact[client_id] for client_id in chosen)
    lowest = min(exact[client_id] for client_id in chosen)

    schedules: dict[str, TrainingSchedule] = {}
    for client_id in accuracies:
        if client_id not in chosen:
            schedules[client_id] = IDLE
            continue
        if highest == lowest:
            sigma = Fraction(1)
        else:
            sigma = (highest - exact[client_id]) / (highest - lowest)
        schedules[client_id] = TrainingSchedule(
            epochs=_scaled_budget(hp.e_min, hp.e_max, sigma),
            steps=_scaled_budget(hp.s_min, hp.s_max, sigma),
            selected=True,
        )
    return schedules


def aggregate_mean(models: Sequence[ModelParams]) -> ModelParams:
    """Elementwise arithmetic mean, accumulated in float64 in the given order."""
    _require_compatible(models)
    count = len(models)
    return _weighted_sum(models, [1.0] * count, divisor=float(count))


def fedavg_weights(sample_counts: Sequence[int]) -> npt.NDArray[np.float64]:
    if not sample_counts:
        raise FederationInputError("FedAvg needs at least one sample count")
    if any(count < 1 for count in sample_counts):
        raise FederationInputError(f"sample counts must be >= 1, got {list(sample_counts)}")
    counts = np.asarray(sample_counts, dtype=np.float64)
    return counts / counts.sum()


def aggregate_fedavg(models: Sequence[ModelParams], sample_counts: Sequence[int]) -> ModelParams:
    """Sample-count-weighted average over every client, stale models included."""
    if len(models) != len(sample_counts):
        raise FederationInputError(
            f"{len(models)} models but {len(sample_counts)} sample counts"
        )
    weights = fedavg_weights(sample_counts)
    _require_compatible(models)
    return _weighted_sum(models, [float(w) for w in weights], divisor=1.0)


def flddos_personalize(
    global_model: ModelParams, local_model: ModelParams, gamma: float
) -> ModelParams:
    """Blend `gamma * global + (1 - gamma) * local`; the endpoints return an input unchanged."""
    if not 0.0 <= gamma <= 1.0:
        raise FederationInputError(f"gamma must lie in [0, 1], got {gamma}")
    _require_compatible([global_model, local_model])
    if gamma == 1.0:
        return global_model
    if gamma == 0.0:
        return local_model
    return _weighted_sum([global_model, local_model], [gamma, 1.0 - gamma], divisor=1.0)


def client_train_seed(client: ClientState, round_index: int) -> int:
    return derive_seed(client.rng_seed, "train", round_index)


def client_update(
    client: ClientState,
    global_model: ModelParams,
    schedule: TrainingSchedule,
    hp: FLHyperParams,
    *,
    round_index: int = 1,
) -> ClientUpdate:
    """Local training from the global model; FLDDoS also advances the client's local model."""
    if not schedule.selected:
        raise FederationInputError(f"client '{client.client_id}' is not selected this round")
    cfg = TrainConfig(
        learning_rate=hp.learning_rate,
        epochs=schedule.epochs,
        mbgd_steps=schedule.steps,
        batch_size=schedule.batch_size,
    )
    trained = mbgd_fit(
        global_model,
        client.train_inputs,
        client.train_labels,
        cfg,
        client_train_seed(client, round_index),
    )
    if hp.strategy != "flddos" or client.gamma == 1.0:
        return ClientUpdate(model=trained, local_model=client.local_model)
    local_cfg = TrainConfig(
        learning_rate=hp.learning_rate,
        epochs=hp.fixed_epochs,
        batch_size=hp.batch_size,
    )
    local = mbgd_fit(
        client.local_model if client.local_model is not None else global_model,
        client.train_inputs,
        client.train_labels,
        local_cfg,
        derive_seed(client.rng_seed, "local", round_index),
    )
    return ClientUpdate(model=flddos_personalize(trained, local, client.gamma), local_model=local)


def evaluate_client(client: ClientState, model: ModelParams, threshold: float = 0.5) -> float:
    """F1 score of `model` on the client's validation set."""
    if len(client.validation_inputs) == 0:
        raise EmptyDatasetError(f"client '{client.client_id}' has no validation samples")
    probs = forward(model, client.validation_inputs)
    return f1_score(confusion(probs, client.validation_labels, threshold))


def client_round_seconds(client: ClientState, schedule: TrainingSchedule) -> float:
    return client.network_time + schedule.epochs * schedule.steps * client.step_time


def simulated_round_time(
    selected: Sequence[ClientState], schedules: Mapping[str, TrainingSchedule]
) -> float:
    """Round duration: the slowest selected client's network plus training time."""
    if not selected:
        raise FederationInputError("round time needs at least one selected client")
    return max(client_round_seconds(client, schedules[client.client_id]) for client in selected)


def baseline_schedule(client: ClientState, hp: FLHyperParams) -> TrainingSchedule:
    """Fixed E epochs at batch B, i.e. ceil(n / B) steps per epoch."""
    return TrainingSchedule(
        epochs=hp.fixed_epochs,
        steps=math.ceil(client.n_train / hp.batch_size),
        selected=True,
        batch_size=hp.batch_size,
    )


def baseline_selection_size(client_count: int, client_fraction: float) -> int:
    return max(1, math.ceil(Fraction(str(client_fraction)) * client_count))


def run_federation(
    clients: Sequence[ClientState],
    hp: FLHyperParams,
    seed: int,
    *,
    initial_model: ModelParams | None = None,
    evaluator: Evaluator | None = None,
    fixed_rounds: int | None = None,
    on_round: RoundCallback | None = None,
    parallel_clients: bool = False,
    max_workers: int | None = None,
) -> FederationResult:
    """Train until the mean validation F1 stops improving for more than `patience` rounds.

    With `fixed_rounds` the loop runs exactly that many rounds instead. The returned best
    model is the aggregate from the round with the strictly highest mean F1, or the
    initial model when no round beats zero.
    """
    ordered = _validated_clients(clients)
    if fixed_rounds is not None and fixed_rounds < 1:
        raise FederationInputError(f"fixed_rounds must be >= 1, got {fixed_rounds}")
    input_width = ordered[0].input_width
    if initial_model is None:
        dims = mlp_layer_dims(input_width, hp.hidden_layers, hp.neurons_per_layer)
        initial_model = init_model(dims, derive_seed(seed, "init"))
    if initial_model.layer_dims[0] != input_width:
        raise ModelCompatibilityError(
            f"model input width {initial_model.layer_dims[0]} does not match data width {input_width}"
        )
    evaluate: Evaluator = evaluator or (lambda client, model, _round: evaluate_client(client, model))
    server_rng = rng_for(seed, "server-selection")
    for client in ordered:
        client.current_model = initial_model
        client.last_update = initial_model
        client.local_model = None
        client.schedule = IDLE
        client.last_accuracy = 0.0

    executor = ThreadPoolExecutor(max_workers=max_workers) if parallel_clients else None
    started = time.perf_counter()
    global_model = initial_model
    best_model = initial_model
    best_round = 0
    best_accuracy = 0.0
    stop_counter = 0
    cumulative_simulated = 0.0
    reports: list[RoundReport] = []
    round_index = 0
    truncated = False
    try:
        while True:
            round_index += 1
            round_started = time.perf_counter()
            schedules = _round_schedules(ordered, hp, round_index, server_rng)
            chosen = [client for client in ordered if schedules[client.client_id].selected]

            trained = _train_selected(chosen, global_model, schedules, hp, round_index, executor)
            for client in ordered:
                client.schedule = schedules[client.client_id]
                if client.client_id in trained:
                    client.last_update = trained[client.client_id].model
                    client.local_model = trained[client.client_id].local_model

            if hp.strategy == "flad":
                contributions = [
                    trained[c.client_id].model if c.client_id in trained else c.current_model
                    for c in ordered
                ]
                global_model = aggregate_mean([_held(model) for model in contributions])
            else:
                global_model = aggregate_fedavg(
                    [_held(client.last_update) for client in ordered],
                    [client.n_train for client in ordered],
                )
            for client in ordered:
                client.current_model = global_model

            accuracies = _evaluate_all(ordered, global_model, evaluate, round_index, executor)
            for client, accuracy in zip(ordered, accuracies, strict=True):
                client.last_accuracy = accuracy
            mean_accuracy = float(np.mean(accuracies))
            improved = mean_accuracy > best_accuracy
            if improved:
                best_accuracy = mean_accuracy
                best_model = global_model
                best_round = round_index
                stop_counter = 0
            else:
                stop_counter += 1

            round_seconds = simulated_round_time(chosen, schedules)
            cumulative_simulated += round_seconds
            if fixed_rounds is not None:
                done = round_index >= fixed_rounds
            else:
                done = stop_counter > hp.patience
            truncated = not done and hp.max_rounds is not None and round_index >= hp.max_rounds
            report = RoundReport(
                round_index=round_index,
                selected=tuple(client.client_id for client in chosen),
                clients=tuple(
                    ClientRoundRecord(
                        client_id=client.client_id,
                        accuracy=accuracy,
                        epochs=schedules[client.client_id].epochs,
                        steps=schedules[client.client_id].steps,
                        selected=schedules[client.client_id].selected,
                        simulated_seconds=(
                            client_round_seconds(client, schedules[client.client_id])
                            if schedules[client.client_id].selected
                            else 0.0
                        ),
                    )
                    for client, accuracy in zip(ordered, accuracies, strict=True)
                ),
                mean_accuracy=mean_accuracy,
                accuracy_std=float(np.std(accuracies)),
                best_accuracy=best_accuracy,
                stop_counter=stop_counter,
                improved=improved,
                simulated_seconds=round_seconds,
                cumulative_simulated_seconds=cumulative_simulated,
                mbgd_steps=sum(schedules[client.client_id].mbgd_steps for client in chosen),
                model_digest=global_model.digest(),
                truncated=truncated,
                wall_seconds=time.perf_counter() - round_started,
                cumulative_wall_seconds=time.perf_counter() - started,
            )
            reports.append(report)
            logger.info(
                "federation.round strategy=%s t=%d mean_f1=%.4f std=%.4f selected=%d sc=%d",
                hp.name,
                round_index,
                mean_accuracy,
                report.accuracy_std,
                len(chosen),
                stop_counter,
            )
            if on_round is not None:
                on_round(report)
            if done or truncated:
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    wall_seconds = time.perf_counter() - started
    logger.info(
        "federation.done strategy=%s rounds=%d best_round=%d best_f1=%.4f truncated=%s",
        hp.name,
        round_index,
        best_round,
        best_accuracy,
        truncated,
    )
    return FederationResult(
        best_model=best_model,
        best_round=best_round,
        best_accuracy=best_accuracy,
        initial_model=initial_model,
        final_model=global_model,
        reports=tuple(reports),
        truncated=truncated,
        wall_seconds=wall_seconds,
    )


def _round_schedules(
    ordered: Sequence[ClientState],
    hp: FLHyperParams,
    round_index: int,
    server_rng: np.random.Generator,
) -> dict[str, TrainingSchedule]:
    if hp.strategy == "flad":
        if round_index == 1:
            first = TrainingSchedule(epochs=hp.e_max, steps=hp.s_max, selected=True)
            return {client.client_id: first for client in ordered}
        return select_clients({c.client_id: c.last_accuracy for c in ordered}, hp)
    size = baseline_selection_size(len(ordered), hp.client_fraction)
    picked = {int(index) for index in server_rng.choice(len(ordered), size=size, replace=False)}
    return {
        client.client_id: baseline_schedule(client, hp) if index in picked else IDLE
        for index, client in enumerate(ordered)
    }


def _train_selected(
    chosen: Sequence[ClientState],
    global_model: ModelParams,
    schedules: Mapping[str, TrainingSchedule],
    hp: FLHyperParams,
    round_index: int,
    executor: ThreadPoolExecutor | None,
) -> dict[str, ClientUpdate]:
    train = partial(
        _train_one, global_model=global_model, schedules=schedules, hp=hp, round_index=round_index
    )
    updates = list(executor.map(train, chosen)) if executor else [train(c) for c in chosen]
    return {client.client_id: update for client, update in zip(chosen, updates, strict=True)}


def _train_one(
    client: ClientState,
    *,
    global_model: ModelParams,
    schedules: Mapping[str, TrainingSchedule],
    hp: FLHyperParams,
    round_index: int,
) -> ClientUpdate:
    return client_update(
        client, global_model, schedules[client.client_id], hp, round_index=round_index
    )


def _evaluate_all(
    ordered: Sequence[ClientState],
    model: ModelParams,
    evaluate: Evaluator,
    round_index: int,
    executor: ThreadPoolExecutor | None,
) -> list[float]:
    def _score(client: ClientState) -> float:
        return float(evaluate(client, model, round_index))

    if executor is None:
        return [_score(client) for client in ordered]
    return list(executor.map(_score, ordered))


def _validated_clients(clients: Sequence[ClientState]) -> list[ClientState]:
    if not clients:
        raise FederationInputError("federation needs at least one client")
    ids = [client.client_id for client in clients]
    if len(set(ids)) != len(ids):
        raise FederationInputError(f"client ids must be unique, got {ids}")
    widths = {client.input_width for client in clients}
    if len(widths) != 1:
        raise FederationInputError(f"clients disagree on input width: {sorted(widths)}")
    for client in clients:
        if client.n_train == 0:
            raise FederationInputError(f"client '{client.client_id}' has an empty training set")
    return sorted(clients, key=lambda client: client.client_id)


def _held(model: ModelParams | None) -> ModelParams:
    if model is None:
        raise FederationInputError("client holds no model")
    return model


def _scaled_budget(low: int, high: int, sigma: Fraction) -> int:
    value = math.floor(low + (high - low) * sigma + Fraction(1, 2))
    return min(max(value, low), high)


def _require_compatible(models: Sequence[ModelParams]) -> None:
    if not models:
        raise FederationInputError("aggregation needs at least one model")
    first = models[0]
    for model in models[1:]:
        if not first.is_compatible(model):
            raise ModelCompatibilityError(
                f"layer widths {model.layer_dims} differ from {first.layer_dims}"
            )


def _weighted_sum(
    models: Sequence[ModelParams], weights: Sequence[float], *, divisor: float
) -> ModelParams:
    dtype = models[0].dtype
    summed_w = [np.zeros(w.shape, dtype=np.float64) for w in models[0].weights]
    summed_b = [np.zeros(b.shape, dtype=np.float64) for b in models[0].biases]
    for model, weight in zip(models, weights, strict=True):
        for layer in range(len(summed_w)):
            summed_w[layer] += weight * model.weights[layer].astype(np.float64)
            summed_b[layer] += weight * model.biases[layer].astype(np.float64)
    return ModelParams(
        layer_dims=models[0].layer_dims,
        weights=tuple((w / divisor).astype(dtype) for w in summed_w),
        biases=tuple((b / divisor).astype(dtype) for b in summed_b),
    )
