"""FLND binary format for split flow datasets."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from flad_sim.core.datagen import DatasetSplit, FlowArrays

DATASET_MAGIC = b"FLND"
_FORMAT_VERSION = 1
_HEADER_STRUCT = struct.Struct("<4sHHHI")
_COUNT_STRUCT = struct.Struct("<H")
_TRAILER_STRUCT = struct.Struct("<I")

MEMBERSHIP_TRAIN = 0
MEMBERSHIP_VALIDATION = 1
MEMBERSHIP_TEST = 2


class DatasetFormatError(RuntimeError):
    """Raised when a dataset record cannot be decoded; `offset` locates the bad section."""

    def __init__(self, message: str, offset: int = 0) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def record_dtype(packets: int, features: int) -> np.dtype[np.void]:
    """Packed per-sample record: tag index, label, row-major features."""
    return np.dtype(
        [("tag", "<u2"), ("label", "u1"), ("features", "<f4", (packets * features,))]
    )


def encode_dataset(split: DatasetSplit) -> bytes:
    parts = (split.train, split.validation, split.test)
    merged = FlowArrays.concat(parts)
    packets, features = merged.flow_shape if len(merged) else split.train.flow_shape
    membership = np.concatenate(
        [
            np.full(len(part), code, dtype=np.uint8)
            for code, part in zip(
                (MEMBERSHIP_TRAIN, MEMBERSHIP_VALIDATION, MEMBERSHIP_TEST), parts, strict=True
            )
        ]
    )
    tag_table = (split.attack_tag, *merged.tag_names)
    if len(tag_table) > 0xFFFF:
        raise DatasetFormatError(f"too many tags: {len(tag_table)}", 0)

    records = np.zeros(len(merged), dtype=record_dtype(packets, features))
    records["tag"] = merged.tag_ids.astype(np.uint32) + 1
    records["label"] = merged.labels
    records["features"] = merged.features.reshape(len(merged), packets * features)

    header = _HEADER_STRUCT.pack(DATASET_MAGIC, _FORMAT_VERSION, packets, features, len(merged))
    payload = b"".join(
        [header, membership.tobytes(), _encode_tag_table(tag_table), records.tobytes()]
    )
    return payload + _TRAILER_STRUCT.pack(zlib.crc32(payload))


def decode_dataset(record: bytes) -> DatasetSplit:
    """Parse an FLND record, checking each section's bounds before reading it."""
    if len(record) < _HEADER_STRUCT.size + _TRAILER_STRUCT.size:
        raise DatasetFormatError("dataset record is too small for header and checksum", 0)
    magic, version, packets, features, count = _HEADER_STRUCT.unpack_from(record, 0)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError("invalid dataset magic", 0)
    if version != _FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset format version: {version}", 4)
    if packets < 1 or features < 1:
        raise DatasetFormatError(f"invalid flow shape {packets}x{features}", 6)
    body_end = len(record) - _TRAILER_STRUCT.size

    offset = _HEADER_STRUCT.size
    if offset + count > body_end:
        raise DatasetFormatError("dataset record truncated inside membership bytes", offset)
    membership = np.frombuffer(record, dtype=np.uint8, count=count, offset=offset)
    membership_offset = offset
    offset += count

    tag_table_offset = offset
    tag_table, offset = _decode_tag_table(record, offset, body_end)

    dtype = record_dtype(packets, features)
    records_size = count * dtype.itemsize
    if offset + records_size != body_end:
        raise DatasetFormatError(
            f"sample section holds {body_end - offset} bytes, expected {records_size}", offset
        )
    records_offset = offset

    (stored_crc,) = _TRAILER_STRUCT.unpack_from(record, body_end)
    if zlib.crc32(record[:body_end]) != stored_crc:
        raise DatasetFormatError("dataset checksum mismatch", body_end)

    if np.any(membership > MEMBERSHIP_TEST):
        raise DatasetFormatError("invalid split membership byte", membership_offset)
    if np.any(np.diff(membership.astype(np.int16)) < 0):
        raise DatasetFormatError(
            "samples are not stored in train, validation, test order", membership_offset
        )
    if not tag_table:
        raise DatasetFormatError("tag table must name the dataset", tag_table_offset)

    records = np.frombuffer(record, dtype=dtype, count=count, offset=records_offset)
    tag_index = records["tag"].astype(np.int64)
    if count and (tag_index.min() < 1 or tag_index.max() >= len(tag_table)):
        raise DatasetFormatError("sample tag index outside the tag table", records_offset)
    labels = records["label"]
    if np.any(labels > 1):
        raise DatasetFormatError("sample label must be 0 or 1", records_offset)

    arrays = FlowArrays(
        features=records["features"].reshape(count, packets, features).astype(np.float32),
        labels=labels.astype(np.uint8),
        tag_ids=(tag_index - 1).astype(np.uint16),
        tag_names=tuple(tag_table[1:]),
    )
    return DatasetSplit(
        attack_tag=tag_table[0],
        train=arrays.take(np.flatnonzero(membership == MEMBERSHIP_TRAIN)),
        validation=arrays.take(np.flatnonzero(membership == MEMBERSHIP_VALIDATION)),
        test=arrays.take(np.flatnonzero(membership == MEMBERSHIP_TEST)),
    )


def save_dataset(split: DatasetSplit, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_dataset(split))


def load_dataset(path: Path) -> DatasetSplit:
    try:
        record = path.read_bytes()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read dataset file {path}: {exc}", 0) from exc
    return decode_dataset(record)


def _encode_tag_table(tags: tuple[str, ...]) -> bytes:
    chunks = [_COUNT_STRUCT.pack(len(tags))]
    for tag in tags:
        raw = tag.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DatasetFormatError(f"tag is too long: {tag[:40]!r}", 0)
        chunks.append(_COUNT_STRUCT.pack(len(raw)))
        chunks.append(raw)
    return b"".join(chunks)


def _decode_tag_table(record: bytes, offset: int, end: int) -> tuple[list[str], int]:
    if offset + _COUNT_STRUCT.size > end:
        raise DatasetFormatError("dataset record truncated inside tag table", offset)
    (entries,) = _COUNT_STRUCT.unpack_from(record, offset)
    offset += _COUNT_STRUCT.size
    tags: list[str] = []
    for _ in range(entries):
        if offset + _COUNT_STRUCT.size > end:
            raise DatasetFormatError("dataset record truncated inside tag table", offset)
        (length,) = _COUNT_STRUCT.unpack_from(record, offset)
        offset += _COUNT_STRUCT.size
        if offset + length > end:
            raise DatasetFormatError("dataset record truncated inside tag string", offset)
        try:
            tags.append(record[offset : offset + length].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DatasetFormatError("tag string is not valid UTF-8", offset) from exc
        offset += length
    return tags, offset
