"""Framework-free MLP used as every client's local trainer.

Hidden layers use ReLU, the single output neuron uses a sigmoid, and training is
plain mini-batch gradient descent on the binary cross-entropy loss.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from hashlib import sha256
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.special import expit

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.floating[Any]]
LabelArray = npt.NDArray[np.integer[Any]]

LOSS_EPSILON = 1e-7
DEFAULT_LEARNING_RATE = 0.01


class InvalidArchitectureError(ValueError):
    """Raised when layer widths do not describe a usable MLP."""


class ShapeMismatchError(ValueError):
    """Raised when tensors do not line up with the model or with each other."""


class EmptyDatasetError(ValueError):
    """Raised when training or evaluation is asked to run on no samples."""


class ModelDivergedError(RuntimeError):
    """Raised when a parameter update produces NaN or Inf values."""


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Weights and biases of the MLP, one matrix and one vector per layer."""

    layer_dims: tuple[int, ...]
    weights: tuple[FloatArray, ...]
    biases: tuple[FloatArray, ...]

    def __post_init__(self) -> None:
        expected_layers = len(self.layer_dims) - 1
        if len(self.weights) != expected_layers or len(self.biases) != expected_layers:
            raise ShapeMismatchError(
                f"expected {expected_layers} layers for dims {self.layer_dims}, "
                f"got {len(self.weights)} weight and {len(self.biases)} bias tensors"
            )
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases, strict=True)):
            fan_in, fan_out = self.layer_dims[index], self.layer_dims[index + 1]
            if weight.shape != (fan_out, fan_in):
                raise ShapeMismatchError(
                    f"layer {index} weight shape {weight.shape} != {(fan_out, fan_in)}"
                )
            if bias.shape != (fan_out,):
                raise ShapeMismatchError(f"layer {index} bias shape {bias.shape} != {(fan_out,)}")

    @property
    def dtype(self) -> np.dtype[Any]:
        return self.weights[0].dtype

    @property
    def layer_count(self) -> int:
        return len(self.weights)

    def is_compatible(self, other: ModelParams) -> bool:
        return self.layer_dims == other.layer_dims

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(t))) for t in (*self.weights, *self.biases))

    def astype(self, dtype: npt.DTypeLike) -> ModelParams:
        """Copy the parameters into another float type (float64 for shadow checks)."""
        return ModelParams(
            layer_dims=self.layer_dims,
            weights=tuple(np.array(w, dtype=dtype) for w in self.weights),
            biases=tuple(np.array(b, dtype=dtype) for b in self.biases),
        )

    def copy(self) -> ModelParams:
        return self.astype(self.dtype)

    def bitwise_equal(self, other: ModelParams) -> bool:
        if not self.is_compatible(other) or self.dtype != other.dtype:
            return False
        pairs = zip((*self.weights, *self.biases), (*other.weights, *other.biases), strict=True)
        return all(left.tobytes() == right.tobytes() for left, right in pairs)

    def digest(self) -> str:
        """SHA-256 of the float32 little-endian parameter bytes plus layer widths."""
        hasher = sha256(",".join(str(d) for d in self.layer_dims).encode("ascii"))
        for weight, bias in zip(self.weights, self.biases, strict=True):
            hasher.update(np.ascontiguousarray(weight, dtype="<f4").tobytes())
            hasher.update(np.ascontiguousarray(bias, dtype="<f4").tobytes())
        return hasher.hexdigest()


@dataclass(frozen=True, eq=False)
class Gradients:
    """Loss gradients shaped like the `ModelParams` they were computed for."""

    weights: tuple[FloatArray, ...]
    biases: tuple[FloatArray, ...]

    def norm(self) -> float:
        total = sum(float(np.sum(np.square(t, dtype=np.float64))) for t in self.weights)
        total += sum(float(np.sum(np.square(t, dtype=np.float64))) for t in self.biases)
        return math.sqrt(total)


@dataclass(frozen=True, eq=False)
class Batch:
    """Flattened flow samples and their binary labels (benign=0, DDoS=1)."""

    inputs: FloatArray
    labels: LabelArray

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2:
            raise ShapeMismatchError(f"batch inputs must be 2-D, got {self.inputs.ndim}-D")
        if self.inputs.shape[0] < 1:
            raise EmptyDatasetError("batch must contain at least one sample")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeMismatchError(
                f"batch labels shape {self.labels.shape} does not match "
                f"{self.inputs.shape[0]} input rows"
            )

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])


@dataclass(frozen=True)
class TrainConfig:
    """Local training budget: learning rate, epochs and MBGD steps per epoch.

    `batch_size` overrides the steps-derived batch size; the FedAvg-style baselines
    use it to train with a fixed B.
    """

    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = 1
    mbgd_steps: int = 1
    batch_size: int | None = None

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0.0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.mbgd_steps < 1:
            raise ValueError(f"mbgd_steps must be >= 1, got {self.mbgd_steps}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def resolve_batch_size(self, sample_count: int) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return max(sample_count // self.mbgd_steps, 1)


def init_model(layer_dims: Sequence[int], seed: int) -> ModelParams:
    """Glorot-uniform weights and zero biases, deterministic for a given seed."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 3:
        raise InvalidArchitectureError(
            f"an MLP needs input, at least one hidden and an output layer, got dims {dims}"
        )
    if any(d < 1 for d in dims):
        raise InvalidArchitectureError(f"layer widths must be positive, got dims {dims}")
    rng = np.random.default_rng(seed)
    weights: list[FloatArray] = []
    biases: list[FloatArray] = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:], strict=True):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(np.float32))
        biases.append(np.zeros(fan_out, dtype=np.float32))
    return ModelParams(layer_dims=dims, weights=tuple(weights), biases=tuple(biases))


def mlp_layer_dims(input_width: int, hidden_layers: int, neurons_per_layer: int) -> tuple[int, ...]:
    """Layer widths for `hidden_layers` hidden layers of equal width and one output."""
    return (input_width, *([neurons_per_layer] * hidden_layers), 1)


def forward(params: ModelParams, inputs: FloatArray) -> FloatArray:
    """Predicted DDoS probability for every input row, strictly inside (0, 1)."""
    x = _as_model_inputs(params, inputs)
    _, _, probs = _forward_pass(params.weights, params.biases, x)
    return np.clip(probs, LOSS_EPSILON, 1.0 - LOSS_EPSILON)


def bce_loss(probs: FloatArray, labels: npt.ArrayLike) -> float:
    """Mean binary cross-entropy with log arguments clamped to [eps, 1-eps]."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ShapeMismatchError(f"probs length {p.size} != labels length {y.size}")
    if p.size < 1:
        raise ShapeMismatchError("loss needs at least one prediction")
    p = np.clip(p, LOSS_EPSILON, 1.0 - LOSS_EPSILON)
    losses = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return max(float(np.mean(losses)), 0.0)


def backward(params: ModelParams, batch: Batch) -> Gradients:
    """Exact batch-mean gradients of `bce_loss(forward(...))` for every tensor."""
    x = _as_model_inputs(params, batch.inputs)
    y = np.asarray(batch.labels, dtype=params.dtype)
    grad_w, grad_b = _backprop(params.weights, params.biases, x, y)
    return Gradients(weights=tuple(grad_w), biases=tuple(grad_b))


def mbgd_fit(
    params: ModelParams,
    train_inputs: FloatArray,
    train_labels: LabelArray,
    cfg: TrainConfig,
    seed: int,
) -> ModelParams:
    """Run `cfg.epochs` epochs of mini-batch gradient descent and return new parameters.

    Batch size is `max(floor(n / mbgd_steps), 1)` unless the config fixes it; each epoch
    reshuffles the data once from a generator seeded with `seed` and walks through
    `ceil(n / batch_size)` batches.
    """
    sample_count = int(train_inputs.shape[0]) if train_inputs.ndim >= 1 else 0
    if sample_count == 0:
        raise EmptyDatasetError("cannot train on an empty training set")
    x = _as_model_inputs(params, train_inputs)
    y = np.asarray(train_labels, dtype=params.dtype).ravel()
    if y.shape != (sample_count,):
        raise ShapeMismatchError(f"labels length {y.size} != {sample_count} training rows")

    batch_size = cfg.resolve_batch_size(sample_count)
    weights = [w.copy() for w in params.weights]
    biases = [b.copy() for b in params.biases]
    rng = np.random.default_rng(seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(sample_count)
        for start in range(0, sample_count, batch_size):
            index = order[start : start + batch_size]
            grad_w, grad_b = _backprop(weights, biases, x[index], y[index])
            for layer in range(len(weights)):
                weights[layer] -= cfg.learning_rate * grad_w[layer]
                biases[layer] -= cfg.learning_rate * grad_b[layer]
        if not all(np.all(np.isfinite(t)) for t in (*weights, *biases)):
            raise ModelDivergedError(
                f"non-finite parameters after epoch {epoch + 1} "
                f"(learning_rate={cfg.learning_rate}, batch_size={batch_size})"
            )
    logger.debug(
        "nn.fit samples=%d epochs=%d batch_size=%d", sample_count, cfg.epochs, batch_size
    )
    return ModelParams(layer_dims=params.layer_dims, weights=tuple(weights), biases=tuple(biases))


def predict_labels(params: ModelParams, inputs: FloatArray, threshold: float = 0.5) -> LabelArray:
    return (forward(params, inputs) >= threshold).astype(np.uint8)


def _as_model_inputs(params: ModelParams, inputs: npt.ArrayLike) -> FloatArray:
    x = np.asarray(inputs, dtype=params.dtype)
    if x.ndim != 2:
        raise ShapeMismatchError(f"inputs must be a 2-D matrix, got {x.ndim}-D")
    if x.shape[1] != params.layer_dims[0]:
        raise ShapeMismatchError(
            f"inputs have {x.shape[1]} columns, model expects {params.layer_dims[0]}"
        )
    return x


def _forward_pass(
    weights: Sequence[FloatArray], biases: Sequence[FloatArray], x: FloatArray
) -> tuple[list[FloatArray], list[FloatArray], FloatArray]:
    # activations[i] feeds layer i; pre_activations[i] is the hidden layer i output before ReLU
    activations: list[FloatArray] = [x]
    pre_activations: list[FloatArray] = []
    hidden = x
    for weight, bias in zip(weights[:-1], biases[:-1], strict=True):
        z = hidden @ weight.T + bias
        pre_activations.append(z)
        hidden = np.maximum(z, 0)
        activations.append(hidden)
    logits = (hidden @ weights[-1].T + biases[-1]).ravel()
    probs: FloatArray = expit(logits)
    return activations, pre_activations, probs


def _backprop(
    weights: Sequence[FloatArray],
    biases: Sequence[FloatArray],
    x: FloatArray,
    y: FloatArray,
) -> tuple[list[FloatArray], list[FloatArray]]:
    activations, pre_activations, probs = _forward_pass(weights, biases, x)
    batch_size = x.shape[0]
    delta = ((probs - y) / batch_size)[:, np.newaxis]
    grad_w: list[FloatArray] = [np.empty(0)] * len(weights)
    grad_b: list[FloatArray] = [np.empty(0)] * len(weights)
    for layer in range(len(weights) - 1, -1, -1):
        grad_w[layer] = delta.T @ activations[layer]
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer]) * (pre_activations[layer - 1] > 0)
    return grad_w, grad_b
