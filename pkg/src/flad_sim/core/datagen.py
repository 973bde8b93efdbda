"""Flow-sample model, synthetic non-IID generation, stratified splits and CSV ingestion."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from flad_sim.core.attack_specs import SyntheticAttackSpec, load_attack_library
from flad_sim.core.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

PACKETS_PER_FLOW = 10
FEATURE_NAMES: tuple[str, ...] = (
    "time",
    "packet_length",
    "highest_protocol",
    "ip_flags",
    "protocols",
    "tcp_length",
    "tcp_ack",
    "tcp_flags",
    "tcp_window_size",
    "udp_length",
    "icmp_type",
)
FEATURES_PER_PACKET = len(FEATURE_NAMES)
FLOW_LENGTH_FEATURE = "flow_length"
ANALYSIS_FEATURES: tuple[str, ...] = (*FEATURE_NAMES, FLOW_LENGTH_FEATURE)
BENIGN_TAG = "benign"
DEFAULT_MAX_PER_CLASS = 65536
MIN_BASE_COUNT = 20

_COLUMN = {name: index for index, name in enumerate(FEATURE_NAMES)}
_TCP_HEADER_BYTES = 40
_UDP_HEADER_BYTES = 20
_IP_FLAG_DONT_FRAGMENT = 2.0

FloatArray = npt.NDArray[np.floating[Any]]


class DatagenError(ValueError):
    """Raised when dataset generation or ingestion inputs are invalid."""


class CapacityError(DatagenError):
    """Raised when more clients are requested than distinct attack groupings exist."""


class StratificationError(DatagenError):
    """Raised when a sample set cannot be split per label."""


class CsvSchemaError(DatagenError):
    """Raised when an ingested CSV file does not follow the flow schema."""


def real_row_mask(features: FloatArray) -> npt.NDArray[np.bool_]:
    """True for packet rows that are not zero padding, shape (samples, packets)."""
    return np.any(features != 0, axis=-1)


def padding_violations(features: FloatArray) -> npt.NDArray[np.bool_]:
    """True for samples where a real packet row follows a padding row."""
    rows = real_row_mask(features)
    return np.any(~rows[:, :-1] & rows[:, 1:], axis=1)


@dataclass(frozen=True, eq=False)
class FlowSample:
    """One n x f flow array, zero-padded below the last packet, with its label."""

    features: FloatArray
    label: int
    attack_tag: str

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise DatagenError(f"flow sample must be a 2-D array, got shape {self.features.shape}")
        if self.label not in (0, 1):
            raise DatagenError(f"flow label must be 0 or 1, got {self.label}")
        if not self.attack_tag:
            raise DatagenError("flow sample needs a non-empty attack tag")
        if bool(padding_violations(self.features[np.newaxis])[0]):
            raise DatagenError("flow sample has a packet row after a padding row")

    @property
    def flow_length(self) -> int:
        return int(real_row_mask(self.features).sum())

    def flatten(self) -> FloatArray:
        """Row-major vector: packets lined up one after another in arrival order."""
        return self.features.reshape(-1)


@dataclass(frozen=True, eq=False)
class FlowArrays:
    """Columnar batch of flow samples sharing one tag table."""

    features: FloatArray
    labels: npt.NDArray[np.uint8]
    tag_ids: npt.NDArray[np.uint16]
    tag_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.features.ndim != 3:
            raise DatagenError(f"features must have shape (samples, n, f), got {self.features.shape}")
        count = self.features.shape[0]
        if self.labels.shape != (count,) or self.tag_ids.shape != (count,):
            raise DatagenError("labels and tag ids must have one entry per sample")
        if count and int(self.tag_ids.max()) >= len(self.tag_names):
            raise DatagenError("tag id outside the tag table")

    @classmethod
    def empty(
        cls, packets: int = PACKETS_PER_FLOW, features: int = FEATURES_PER_PACKET
    ) -> FlowArrays:
        return cls(
            features=np.zeros((0, packets, features), dtype=np.float32),
            labels=np.zeros(0, dtype=np.uint8),
            tag_ids=np.zeros(0, dtype=np.uint16),
            tag_names=(),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[FlowSample]) -> FlowArrays:
        if not samples:
            return cls.empty()
        names: dict[str, int] = {}
        tag_ids = [names.setdefault(sample.attack_tag, len(names)) for sample in samples]
        return cls(
            features=np.stack([sample.features for sample in samples]).astype(np.float32),
            labels=np.array([sample.label for sample in samples], dtype=np.uint8),
            tag_ids=np.array(tag_ids, dtype=np.uint16),
            tag_names=tuple(names),
        )

    @staticmethod
    def concat(parts: Sequence[FlowArrays]) -> FlowArrays:
        """Join batches in order, merging tag tables by first appearance."""
        if not parts:
            return FlowArrays.empty()
        names: dict[str, int] = {}
        remapped: list[npt.NDArray[np.uint16]] = []
        for part in parts:
            lookup = np.array(
                [names.setdefault(name, len(names)) for name in part.tag_names], dtype=np.uint16
            )
            remapped.append(lookup[part.tag_ids] if len(part) else part.tag_ids)
        return FlowArrays(
            features=np.concatenate([part.features for part in parts]).astype(np.float32),
            labels=np.concatenate([part.labels for part in parts]).astype(np.uint8),
            tag_ids=np.concatenate(remapped).astype(np.uint16),
            tag_names=tuple(names),
        )

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def flow_shape(self) -> tuple[int, int]:
        return (int(self.features.shape[1]), int(self.features.shape[2]))

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(self.tag_names[int(i)] for i in self.tag_ids)

    def sample(self, index: int) -> FlowSample:
        return FlowSample(
            features=self.features[index].copy(),
            label=int(self.labels[index]),
            attack_tag=self.tag_names[int(self.tag_ids[index])],
        )

    def to_samples(self) -> list[FlowSample]:
        return [self.sample(index) for index in range(len(self))]

    def flat_inputs(self) -> FloatArray:
        packets, features = self.flow_shape
        return self.features.reshape(len(self), packets * features)

    def take(self, indices: npt.ArrayLike) -> FlowArrays:
        index = np.asarray(indices, dtype=np.intp)
        return FlowArrays(
            features=self.features[index],
            labels=self.labels[index],
            tag_ids=self.tag_ids[index],
            tag_names=self.tag_names,
        )

    def with_label(self, label: int) -> FlowArrays:
        return self.take(np.flatnonzero(self.labels == label))

    def with_tag(self, tag: str) -> FlowArrays:
        if tag not in self.tag_names:
            return self.take(np.zeros(0, dtype=np.intp))
        return self.take(np.flatnonzero(self.tag_ids == self.tag_names.index(tag)))

    def class_counts(self) -> dict[int, int]:
        return {label: int(np.count_nonzero(self.labels == label)) for label in (0, 1)}


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """Train / validation / test partition of one client's or one attack's samples."""

    attack_tag: str
    train: FlowArrays
    validation: FlowArrays
    test: FlowArrays

    def __len__(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)

    @property
    def class_counts(self) -> dict[int, int]:
        counts = {0: 0, 1: 0}
        for part in (self.train, self.validation, self.test):
            for label, count in part.class_counts().items():
                counts[label] += count
        return counts

    @property
    def attack_tags(self) -> tuple[str, ...]:
        """Distinct DDoS tags present in the split, in tag-table order."""
        tags: dict[str, None] = {}
        for part in (self.train, self.validation, self.test):
            for tag in part.with_label(1).tags:
                tags.setdefault(tag, None)
        return tuple(tags)

    def all_samples(self) -> FlowArrays:
        return FlowArrays.concat([self.train, self.validation, self.test])

    @staticmethod
    def merge(attack_tag: str, splits: Sequence[DatasetSplit]) -> DatasetSplit:
        return DatasetSplit(
            attack_tag=attack_tag,
            train=FlowArrays.concat([split.train for split in splits]),
            validation=FlowArrays.concat([split.validation for split in splits]),
            test=FlowArrays.concat([split.test for split in splits]),
        )


def generate_flows(spec: SyntheticAttackSpec, count: int, rng: np.random.Generator) -> FlowArrays:
    """Draw `count` flows from one traffic profile."""
    if count < 0:
        raise DatagenError(f"sample count must be non-negative, got {count}")
    packets, width = PACKETS_PER_FLOW, FEATURES_PER_PACKET
    flow_weights = np.zeros(packets)
    flow_weights[: len(spec.flow_length_weights)] = spec.flow_length_weights
    lengths = rng.choice(np.arange(1, packets + 1), size=count, p=flow_weights / flow_weights.sum())

    gaps = rng.exponential(spec.inter_arrival_mean, size=(count, packets))
    gaps[:, 0] = 0.0
    component_weights = np.array([component.weight for component in spec.packet_length])
    component_choice = rng.choice(
        len(spec.packet_length), size=(count, packets), p=component_weights / component_weights.sum()
    )
    packet_lengths = np.zeros((count, packets))
    for index, component in enumerate(spec.packet_length):
        chosen = component_choice == index
        low, high = component.support()
        if low == high:
            packet_lengths[chosen] = low
        else:
            packet_lengths[chosen] = rng.integers(low, high, size=int(chosen.sum()), endpoint=True)

    features = np.zeros((count, packets, width))
    features[..., _COLUMN["time"]] = np.cumsum(gaps, axis=1)
    features[..., _COLUMN["packet_length"]] = packet_lengths
    features[..., _COLUMN["highest_protocol"]] = spec.highest_protocol
    features[..., _COLUMN["ip_flags"]] = np.where(
        rng.random((count, packets)) < spec.ip_flags_df_probability, _IP_FLAG_DONT_FRAGMENT, 0.0
    )
    features[..., _COLUMN["protocols"]] = spec.protocols
    if spec.protocol_class == "TCP":
        assert spec.tcp_window is not None
        features[..., _COLUMN["tcp_length"]] = np.maximum(packet_lengths - _TCP_HEADER_BYTES, 0.0)
        features[..., _COLUMN["tcp_ack"]] = rng.random((count, packets)) < spec.tcp_ack_probability
        features[..., _COLUMN["tcp_flags"]] = rng.choice(
            np.array(spec.tcp_flags, dtype=np.float64), size=(count, packets)
        )
        features[..., _COLUMN["tcp_window_size"]] = rng.integers(
            spec.tcp_window[0], spec.tcp_window[1], size=(count, packets), endpoint=True
        )
    else:
        features[..., _COLUMN["udp_length"]] = np.maximum(packet_lengths - _UDP_HEADER_BYTES, 0.0)
    features[..., _COLUMN["icmp_type"]] = spec.icmp_type

    real_rows = np.arange(packets)[np.newaxis, :] < lengths[:, np.newaxis]
    features *= real_rows[..., np.newaxis]
    return FlowArrays(
        features=features.astype(np.float32),
        labels=np.full(count, spec.label, dtype=np.uint8),
        tag_ids=np.zeros(count, dtype=np.uint16),
        tag_names=(spec.name,),
    )


def attack_sample_counts(
    attack_count: int, base_count: int, max_per_class: int = DEFAULT_MAX_PER_CLASS
) -> list[int]:
    """DDoS sample count per attack: doubling from `base_count`, capped per class."""
    return [min(base_count * 2**index, max_per_class) for index in range(attack_count)]


def federation_capacity(attack_count: int, attacks_per_client: int) -> int:
    if attacks_per_client == 1:
        return attack_count
    return attack_count + math.comb(attack_count, 2)


def client_attack_groups(
    attack_count: int, attacks_per_client: int, clients: int, seed: int
) -> list[tuple[int, ...]]:
    """Attack indices held by each client.

    One attack per client maps clients to attacks in order. Two attacks per client
    draws from every unordered pair (seeded shuffle) followed by the single attacks.
    """
    if attacks_per_client not in (1, 2):
        raise DatagenError(f"attacks_per_client must be 1 or 2, got {attacks_per_client}")
    if clients < 1:
        raise DatagenError(f"at least one client is required, got {clients}")
    capacity = federation_capacity(attack_count, attacks_per_client)
    if clients > capacity:
        if attacks_per_client == 1:
            detail = f"{attack_count} attacks"
        else:
            detail = (
                f"{attack_count} single attacks + {math.comb(attack_count, 2)} pairs "
                f"= {capacity}"
            )
        raise CapacityError(f"{clients} clients exceed federation capacity {capacity} ({detail})")
    singles = [(index,) for index in range(attack_count)]
    if attacks_per_client == 1:
        return singles[:clients]
    pairs = list(combinations(range(attack_count), 2))
    order = rng_for(seed, "client-pairs").permutation(len(pairs))
    pool: list[tuple[int, ...]] = [pairs[int(i)] for i in order]
    pool.extend(singles)
    return pool[:clients]


def generate_attack_datasets(
    specs: Sequence[SyntheticAttackSpec],
    base_count: int,
    seed: int,
    *,
    benign: SyntheticAttackSpec | None = None,
    max_per_class: int = DEFAULT_MAX_PER_CLASS,
) -> list[DatasetSplit]:
    """One balanced, split dataset per attack profile."""
    if not specs:
        raise DatagenError("at least one attack profile is required")
    if base_count < MIN_BASE_COUNT:
        raise DatagenError(f"base_count must be >= {MIN_BASE_COUNT}, got {base_count}")
    if max_per_class < 1:
        raise DatagenError(f"max_per_class must be >= 1, got {max_per_class}")
    benign_spec = benign if benign is not None else load_attack_library().benign
    counts = attack_sample_counts(len(specs), base_count, max_per_class)
    splits: list[DatasetSplit] = []
    for spec, count in zip(specs, counts, strict=True):
        if spec.sample_count is not None:
            count = min(spec.sample_count, max_per_class)
        attack = generate_flows(spec, count, rng_for(seed, "attack", spec.name))
        normal = generate_flows(benign_spec, count, rng_for(seed, "benign", spec.name))
        pool = FlowArrays.concat([attack, normal])
        split = split_dataset(pool, derive_seed(seed, "split", spec.name), attack_tag=spec.name)
        logger.info(
            "datagen.attack name=%s samples=%d train=%d validation=%d test=%d",
            spec.name,
            len(pool),
            len(split.train),
            len(split.validation),
            len(split.test),
        )
        splits.append(split)
    return splits


def client_dataset(attack_splits: Sequence[DatasetSplit], group: Sequence[int]) -> DatasetSplit:
    """Union of the attack datasets a client holds, tagged `A+B` for pairs."""
    members = [attack_splits[index] for index in group]
    return DatasetSplit.merge("+".join(split.attack_tag for split in members), members)


def generate_federation_data(
    specs: Sequence[SyntheticAttackSpec],
    base_count: int,
    clients: int,
    attacks_per_client: int,
    seed: int,
    *,
    benign: SyntheticAttackSpec | None = None,
    max_per_class: int = DEFAULT_MAX_PER_CLASS,
) -> list[DatasetSplit]:
    """Per-client datasets for a non-IID, unbalanced federation."""
    groups = client_attack_groups(len(specs), attacks_per_client, clients, seed)
    attack_splits = generate_attack_datasets(
        specs, base_count, seed, benign=benign, max_per_class=max_per_class
    )
    return [client_dataset(attack_splits, group) for group in groups]


def split_dataset(
    samples: FlowArrays,
    seed: int,
    *,
    attack_tag: str | None = None,
    test_fraction: float = 0.1,
    validation_fraction: float = 0.1,
) -> DatasetSplit:
    """Stratified split: test share of the whole set, validation share of the rest.

    Totals are rounded half-up from exact fractions and shared out per label by
    largest remainder, so each part is within one sample of its nominal size.
    """
    total = len(samples)
    if total < 10:
        raise StratificationError(f"need at least 10 samples to split, got {total}")
    labels_present = sorted(int(label) for label in np.unique(samples.labels))
    if len(labels_present) < 2:
        raise StratificationError(
            f"cannot stratify a single-class sample set (label {labels_present[0]})"
        )
    rng = np.random.default_rng(seed)
    by_label = {
        label: rng.permutation(np.flatnonzero(samples.labels == label)) for label in labels_present
    }
    sizes = {label: len(indices) for label, indices in by_label.items()}

    test_total = _round_half_up(Fraction(total) * Fraction(str(test_fraction)))
    test_quota = _largest_remainder(test_total, sizes)
    remaining = {label: sizes[label] - test_quota[label] for label in labels_present}
    validation_total = _round_half_up(
        Fraction(total - test_total) * Fraction(str(validation_fraction))
    )
    validation_quota = _largest_remainder(validation_total, remaining)

    test_parts, validation_parts, train_parts = [], [], []
    for label in labels_present:
        indices = by_label[label]
        test_end = test_quota[label]
        validation_end = test_end + validation_quota[label]
        test_parts.append(indices[:test_end])
        validation_parts.append(indices[test_end:validation_end])
        train_parts.append(indices[validation_end:])

    def _part(parts: list[npt.NDArray[np.intp]]) -> FlowArrays:
        return samples.take(rng.permutation(np.concatenate(parts)))

    return DatasetSplit(
        attack_tag=attack_tag if attack_tag is not None else _dataset_tag(samples),
        train=_part(train_parts),
        validation=_part(validation_parts),
        test=_part(test_parts),
    )


def ingest_csv(path: Path, schema: Sequence[str] | None = None) -> FlowArrays:
    """Parse pre-featurized flows: `attack_tag,label` then n*f values in row-major order."""
    feature_names = tuple(schema) if schema is not None else FEATURE_NAMES
    if not feature_names:
        raise CsvSchemaError("schema must name at least one per-packet feature")
    expected_columns = PACKETS_PER_FLOW * len(feature_names)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise CsvSchemaError(f"cannot read CSV {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise CsvSchemaError(f"{path}: file is empty, expected a header row")
        if len(header) < 2 or header[0].strip() != "attack_tag" or header[1].strip() != "label":
            raise CsvSchemaError(f"{path}: header must start with 'attack_tag,label'")
        found_columns = len(header) - 2
        if found_columns != expected_columns:
            raise CsvSchemaError(
                f"{path}: expected {expected_columns} feature columns, found {found_columns}"
            )
        tags: list[str] = []
        labels: list[int] = []
        rows: list[list[float]] = []
        line_numbers: list[int] = []
        for line_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise CsvSchemaError(
                    f"{path}:{line_number}: expected {len(header)} columns, found {len(row)}"
                )
            tag = row[0].strip()
            if not tag:
                raise CsvSchemaError(f"{path}:{line_number}: empty attack_tag")
            label_text = row[1].strip()
            if label_text not in ("0", "1"):
                raise CsvSchemaError(
                    f"{path}:{line_number}: label must be 0 or 1, got {label_text!r}"
                )
            values: list[float] = []
            for column, cell in enumerate(row[2:], start=2):
                try:
                    value = float(cell)
                except ValueError:
                    raise CsvSchemaError(
                        f"{path}:{line_number}: non-numeric value {cell!r} in column "
                        f"'{header[column]}'"
                    ) from None
                if not math.isfinite(value):
                    raise CsvSchemaError(
                        f"{path}:{line_number}: non-finite value in column '{header[column]}'"
                    )
                values.append(value)
            tags.append(tag)
            labels.append(int(label_text))
            rows.append(values)
            line_numbers.append(line_number)

    features = np.array(rows, dtype=np.float32).reshape(
        len(rows), PACKETS_PER_FLOW, len(feature_names)
    )
    violations = np.flatnonzero(padding_violations(features)) if rows else np.zeros(0, np.intp)
    if violations.size:
        bad_lines = ", ".join(str(line_numbers[int(i)]) for i in violations)
        raise CsvSchemaError(f"{path}: padding rows are not contiguous on lines {bad_lines}")
    names: dict[str, int] = {}
    tag_ids = [names.setdefault(tag, len(names)) for tag in tags]
    logger.info("datagen.ingest path=%s samples=%d tags=%d", path, len(rows), len(names))
    return FlowArrays(
        features=features,
        labels=np.array(labels, dtype=np.uint8),
        tag_ids=np.array(tag_ids, dtype=np.uint16),
        tag_names=tuple(names),
    )


@dataclass(frozen=True, eq=False)
class FeatureScaler:
    """Per-feature min-max scaling to [0, 1] fitted on real packet rows only."""

    minimums: FloatArray
    maximums: FloatArray

    @classmethod
    def fit(cls, parts: Sequence[FlowArrays]) -> FeatureScaler:
        rows = [part.features[real_row_mask(part.features)] for part in parts if len(part)]
        stacked = np.concatenate(rows) if rows else np.zeros((0, FEATURES_PER_PACKET))
        if stacked.shape[0] == 0:
            width = parts[0].flow_shape[1] if parts else FEATURES_PER_PACKET
            return cls(minimums=np.zeros(width), maximums=np.ones(width))
        return cls(
            minimums=stacked.min(axis=0).astype(np.float64),
            maximums=stacked.max(axis=0).astype(np.float64),
        )

    def transform(self, arrays: FlowArrays) -> FlowArrays:
        span = self.maximums - self.minimums
        span = np.where(span > 0, span, 1.0)
        scaled = np.clip((arrays.features - self.minimums) / span, 0.0, 1.0)
        scaled *= real_row_mask(arrays.features)[..., np.newaxis]
        return FlowArrays(
            features=scaled.astype(np.float32),
            labels=arrays.labels,
            tag_ids=arrays.tag_ids,
            tag_names=arrays.tag_names,
        )

    def transform_split(self, split: DatasetSplit) -> DatasetSplit:
        return DatasetSplit(
            attack_tag=split.attack_tag,
            train=self.transform(split.train),
            validation=self.transform(split.validation),
            test=self.transform(split.test),
        )


def feature_values(features: FloatArray, feature: str) -> npt.NDArray[np.float64]:
    """Values of one named feature over real packet rows, or flow lengths per sample."""
    mask = real_row_mask(features)
    if feature == FLOW_LENGTH_FEATURE:
        return mask.sum(axis=1).astype(np.float64)
    if feature not in _COLUMN:
        raise DatagenError(f"unknown feature '{feature}'; known: {list(ANALYSIS_FEATURES)}")
    return features[mask][:, _COLUMN[feature]].astype(np.float64)


def _dataset_tag(samples: FlowArrays) -> str:
    attack_tags = [tag for tag in samples.with_label(1).tag_names if tag != BENIGN_TAG]
    seen = [tag for tag in dict.fromkeys(samples.with_label(1).tags) if tag in attack_tags]
    return "+".join(seen) if seen else BENIGN_TAG


def _round_half_up(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


def _largest_remainder(total: int, sizes: dict[int, int]) -> dict[int, int]:
    population = sum(sizes.values())
    if population == 0:
        return {label: 0 for label in sizes}
    exact = {label: Fraction(total * size, population) for label, size in sizes.items()}
    quota = {label: math.floor(share) for label, share in exact.items()}
    leftover = total - sum(quota.values())
    by_remainder = sorted(sizes, key=lambda label: (-(exact[label] - quota[label]), label))
    for label in by_remainder[:leftover]:
        quota[label] += 1
    return quota
