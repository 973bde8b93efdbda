"""FLMP binary format for MLP parameters."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from flad_sim.core.nn_core import FloatArray, ModelParams, ShapeMismatchError

MODEL_MAGIC = b"FLMP"
_FORMAT_VERSION = 1
_HEADER_STRUCT = struct.Struct("<4sHH")
_DIM_STRUCT = struct.Struct("<I")
_TRAILER_STRUCT = struct.Struct("<I")
_FLOAT = np.dtype("<f4")


class ModelCodecError(RuntimeError):
    """Raised when a model record cannot be encoded or decoded."""


def encode_model(params: ModelParams) -> bytes:
    """Serialize parameters as little-endian float32, weights then biases per layer."""
    header = _HEADER_STRUCT.pack(MODEL_MAGIC, _FORMAT_VERSION, len(params.layer_dims))
    dims = b"".join(_DIM_STRUCT.pack(dim) for dim in params.layer_dims)
    tensors: list[bytes] = []
    for weight, bias in zip(params.weights, params.biases, strict=True):
        tensors.append(np.ascontiguousarray(weight, dtype=_FLOAT).tobytes())
        tensors.append(np.ascontiguousarray(bias, dtype=_FLOAT).tobytes())
    payload = b"".join([header, dims, *tensors])
    return payload + _TRAILER_STRUCT.pack(zlib.crc32(payload))


def decode_model(record: bytes) -> ModelParams:
    """Parse and validate an FLMP record."""
    if len(record) < _HEADER_STRUCT.size + _TRAILER_STRUCT.size:
        raise ModelCodecError("model record is too small")
    magic, version, dim_count = _HEADER_STRUCT.unpack_from(record, 0)
    if magic != MODEL_MAGIC:
        raise ModelCodecError("invalid model magic")
    if version != _FORMAT_VERSION:
        raise ModelCodecError(f"unsupported model format version: {version}")
    if dim_count < 2:
        raise ModelCodecError(f"model declares {dim_count} layer widths, need at least 2")

    dims_end = _HEADER_STRUCT.size + dim_count * _DIM_STRUCT.size
    if len(record) < dims_end + _TRAILER_STRUCT.size:
        raise ModelCodecError("model record truncated inside layer widths")
    dims = tuple(
        _DIM_STRUCT.unpack_from(record, _HEADER_STRUCT.size + i * _DIM_STRUCT.size)[0]
        for i in range(dim_count)
    )
    if any(dim < 1 for dim in dims):
        raise ModelCodecError(f"layer widths must be positive, got {dims}")
    value_count = sum(fan_out * fan_in + fan_out for fan_in, fan_out in zip(dims[:-1], dims[1:]))
    expected_size = dims_end + value_count * _FLOAT.itemsize + _TRAILER_STRUCT.size
    if len(record) != expected_size:
        raise ModelCodecError(
            f"model record length {len(record)} does not match layer widths (expected {expected_size})"
        )

    payload = record[: -_TRAILER_STRUCT.size]
    (stored_crc,) = _TRAILER_STRUCT.unpack_from(record, len(payload))
    if zlib.crc32(payload) != stored_crc:
        raise ModelCodecError("model checksum mismatch")

    offset = dims_end
    weights: list[FloatArray] = []
    biases: list[FloatArray] = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:], strict=True):
        weight = np.frombuffer(record, dtype=_FLOAT, count=fan_out * fan_in, offset=offset)
        offset += weight.nbytes
        bias = np.frombuffer(record, dtype=_FLOAT, count=fan_out, offset=offset)
        offset += bias.nbytes
        weights.append(weight.reshape(fan_out, fan_in).astype(np.float32))
        biases.append(bias.astype(np.float32))
    try:
        return ModelParams(layer_dims=dims, weights=tuple(weights), biases=tuple(biases))
    except ShapeMismatchError as exc:
        raise ModelCodecError(str(exc)) from exc


def save_model(params: ModelParams, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_model(params))


def load_model(path: Path) -> ModelParams:
    try:
        record = path.read_bytes()
    except OSError as exc:
        raise ModelCodecError(f"cannot read model file {path}: {exc}") from exc
    return decode_model(record)
