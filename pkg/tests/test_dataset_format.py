from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

from flad_sim.core.attack_specs import load_attack_library
from flad_sim.core.datagen import DatasetSplit, FlowArrays, generate_attack_datasets
from flad_sim.core.dataset_format import (
    DATASET_MAGIC,
    DatasetFormatError,
    decode_dataset,
    encode_dataset,
    load_dataset,
    save_dataset,
)


def _split() -> DatasetSplit:
    library = load_attack_library()
    specs = library.select(["WebDDoS", "NTP"])
    splits = generate_attack_datasets(specs, 20, seed=8, benign=library.benign)
    return DatasetSplit.merge("WebDDoS+NTP", splits)


def _with_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


def test_decoded_split_keeps_membership_tags_and_features(tmp_path: Path) -> None:
    split = _split()
    path = tmp_path / "datasets" / "00_pair.flnd"
    save_dataset(split, path)
    decoded = load_dataset(path)
    assert decoded.attack_tag == "WebDDoS+NTP"
    for original, restored in zip(
        (split.train, split.validation, split.test),
        (decoded.train, decoded.validation, decoded.test),
        strict=True,
    ):
        assert np.array_equal(original.features, restored.features)
        assert np.array_equal(original.labels, restored.labels)
        assert original.tags == restored.tags
    assert set(decoded.attack_tags) == {"WebDDoS", "NTP"}


def test_header_fields_describe_the_record() -> None:
    split = _split()
    record = encode_dataset(split)
    magic, version, packets, features, count = struct.unpack_from("<4sHHHI", record, 0)
    assert magic == DATASET_MAGIC
    assert (version, packets, features, count) == (1, 10, 11, len(split))
    assert record[14 : 14 + len(split)] == bytes(
        [0] * len(split.train) + [1] * len(split.validation) + [2] * len(split.test)
    )


def test_decode_rejects_wrong_magic_and_version() -> None:
    record = encode_dataset(_split())
    with pytest.raises(DatasetFormatError, match="magic") as error:
        decode_dataset(b"FLMP" + record[4:])
    assert error.value.offset == 0
    bumped = bytearray(record)
    bumped[4] = 2
    with pytest.raises(DatasetFormatError, match="version 2|version: 2"):
        decode_dataset(bytes(bumped))


def test_decode_rejects_checksum_and_size_errors() -> None:
    record = encode_dataset(_split())
    corrupted = bytearray(record)
    corrupted[-10] ^= 0x01
    with pytest.raises(DatasetFormatError, match="checksum"):
        decode_dataset(bytes(corrupted))
    with pytest.raises(DatasetFormatError, match="sample section"):
        decode_dataset(_with_crc(record[:-8]))
    with pytest.raises(DatasetFormatError, match="too small"):
        decode_dataset(record[:10])


def test_decode_rejects_out_of_order_membership() -> None:
    split = _split()
    record = bytearray(encode_dataset(split))
    record[14] = 2
    with pytest.raises(DatasetFormatError, match="order") as error:
        decode_dataset(_with_crc(bytes(record[:-4])))
    assert error.value.offset == 14
    assert "(at byte 14)" in str(error.value)


def test_load_dataset_reports_missing_file(tmp_path: Path) -> None:
    with pytest.raises(DatasetFormatError, match="cannot read"):
        load_dataset(tmp_path / "missing.flnd")


_TAG_POOL = ("Syn", "NTP", "WebDDoS", "LDAP", "Benign", "ünïcode-tag", "")


def _random_part(rng: np.random.Generator, flow_shape: tuple[int, int]) -> FlowArrays:
    count = int(rng.integers(0, 6))
    names = tuple(str(name) for name in rng.choice(_TAG_POOL, size=int(rng.integers(1, 4)), replace=False))
    return FlowArrays(
        features=rng.normal(size=(count, *flow_shape)).astype(np.float32),
        labels=rng.integers(0, 2, size=count).astype(np.uint8),
        tag_ids=rng.integers(0, len(names), size=count).astype(np.uint16),
        tag_names=names,
    )


def _random_split(rng: np.random.Generator) -> DatasetSplit:
    flow_shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    return DatasetSplit(
        attack_tag=str(rng.choice(["WebDDoS+NTP", "Syn", "mixed/ü"])),
        train=_random_part(rng, flow_shape),
        validation=_random_part(rng, flow_shape),
        test=_random_part(rng, flow_shape),
    )


def test_random_splits_survive_encode_decode_and_reject_damage() -> None:
    rng = np.random.default_rng(41)
    for _ in range(1000):
        split = _random_split(rng)
        record = encode_dataset(split)
        decoded = decode_dataset(record)
        assert decoded.attack_tag == split.attack_tag
        assert encode_dataset(decoded) == record
        for original, restored in zip(
            (split.train, split.validation, split.test),
            (decoded.train, decoded.validation, decoded.test),
            strict=True,
        ):
            assert np.array_equal(original.features, restored.features)
            assert np.array_equal(original.labels, restored.labels)
            assert original.tags == restored.tags

        damaged = bytearray(record)
        damaged[int(rng.integers(len(record)))] ^= int(rng.integers(1, 256))
        with pytest.raises(DatasetFormatError):
            decode_dataset(bytes(damaged))
        with pytest.raises(DatasetFormatError):
            decode_dataset(record[: int(rng.integers(len(record)))])


def test_empty_split_round_trips() -> None:
    empty = DatasetSplit(
        attack_tag="idle",
        train=FlowArrays.empty(),
        validation=FlowArrays.empty(),
        test=FlowArrays.empty(),
    )
    record = encode_dataset(empty)
    assert struct.unpack_from("<4sHHHI", record, 0)[2:] == (10, 11, 0)
    decoded = decode_dataset(record)
    assert decoded.attack_tag == "idle"
    assert len(decoded) == 0
    assert decoded.train.flow_shape == (10, 11)
    assert encode_dataset(decoded) == record
