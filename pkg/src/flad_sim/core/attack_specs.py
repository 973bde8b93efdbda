"""Declarative profiles for synthetic benign and DDoS flow generation."""

from __future__ import annotations

import json
from hashlib import sha256
from importlib import resources
from pathlib import Path
from typing import Literal

from pydantic import Field, ValidationError, field_validator, model_validator

from flad_sim.core.schema import SchemaModel

LIBRARY_SCHEMA_VERSION = "attack_library.v1"
DEFAULT_LIBRARY_RESOURCE = "attack_library.v1.json"
MAX_FLOW_PACKETS = 10

ProtocolClass = Literal["TCP", "UDP"]


class AttackLibraryError(ValueError):
    """Raised when an attack library file is missing or invalid."""


class PacketLengthComponent(SchemaModel):
    """One mixture component of the packet-length distribution, in bytes."""

    kind: Literal["point", "uniform"]
    weight: float = Field(gt=0.0)
    value: int | None = Field(default=None, ge=1, le=65535)
    low: int | None = Field(default=None, ge=1, le=65535)
    high: int | None = Field(default=None, ge=1, le=65535)

    @model_validator(mode="after")
    def _check_shape(self) -> PacketLengthComponent:
        if self.kind == "point":
            if self.value is None or self.low is not None or self.high is not None:
                raise ValueError("point component needs 'value' only")
        else:
            if self.low is None or self.high is None or self.value is not None:
                raise ValueError("uniform component needs 'low' and 'high' only")
            if self.low >= self.high:
                raise ValueError(f"uniform component needs low < high, got {self.low}..{self.high}")
        return self

    def support(self) -> tuple[int, int]:
        if self.kind == "point":
            assert self.value is not None
            return (self.value, self.value)
        assert self.low is not None and self.high is not None
        return (self.low, self.high)


class SyntheticAttackSpec(SchemaModel):
    """Generator profile for one traffic class."""

    name: str = Field(min_length=1, max_length=40, pattern=r"^[A-Za-z][A-Za-z0-9_-]*$")
    label: Literal[0, 1] = 1
    protocol_class: ProtocolClass
    packet_length: list[PacketLengthComponent] = Field(min_length=1)
    flow_length_weights: list[float] = Field(min_length=1, max_length=MAX_FLOW_PACKETS)
    inter_arrival_mean: float = Field(gt=0.0)
    highest_protocol: int = Field(ge=0, le=255)
    protocols: int = Field(ge=0, le=255)
    ip_flags_df_probability: float = Field(ge=0.0, le=1.0)
    tcp_flags: list[int] = Field(default_factory=list)
    tcp_ack_probability: float = Field(default=0.0, ge=0.0, le=1.0)
    tcp_window: tuple[int, int] | None = None
    icmp_type: int = Field(default=0, ge=0, le=255)
    # fixed DDoS flow count in place of the doubling schedule, still capped per class
    sample_count: int | None = Field(default=None, ge=1)

    @field_validator("packet_length")
    @classmethod
    def _normalize_mixture(cls, components: list[PacketLengthComponent]) -> list[PacketLengthComponent]:
        total = sum(component.weight for component in components)
        return [
            component.model_copy(update={"weight": component.weight / total})
            for component in components
        ]

    @field_validator("flow_length_weights")
    @classmethod
    def _normalize_flow_lengths(cls, weights: list[float]) -> list[float]:
        if any(weight < 0.0 for weight in weights):
            raise ValueError("flow length weights must be non-negative")
        total = sum(weights)
        if total <= 0.0:
            raise ValueError("flow length weights must not all be zero")
        return [weight / total for weight in weights]

    @model_validator(mode="after")
    def _check_tcp_fields(self) -> SyntheticAttackSpec:
        if self.protocol_class == "TCP":
            if not self.tcp_flags:
                raise ValueError(f"TCP profile '{self.name}' needs tcp_flags")
            if self.tcp_window is None:
                raise ValueError(f"TCP profile '{self.name}' needs tcp_window")
        if self.tcp_window is not None and self.tcp_window[0] > self.tcp_window[1]:
            raise ValueError(f"tcp_window must be ordered, got {self.tcp_window}")
        return self

    def packet_length_support(self) -> list[tuple[int, int]]:
        """Closed byte intervals covered by the packet-length mixture."""
        return sorted(component.support() for component in self.packet_length)

    def packet_length_gap(self, other: SyntheticAttackSpec) -> int | None:
        """Smallest byte distance between the two supports, or None when they overlap."""
        gaps: list[int] = []
        for low, high in self.packet_length_support():
            for other_low, other_high in other.packet_length_support():
                if low <= other_high and other_low <= high:
                    return None
                gaps.append(other_low - high if other_low > high else low - other_high)
        return min(gaps)


class AttackLibrary(SchemaModel):
    """Versioned set of attack profiles plus the benign profile used to balance them."""

    library_version: Literal["attack_library.v1"]
    benign: SyntheticAttackSpec
    attacks: list[SyntheticAttackSpec] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_labels(self) -> AttackLibrary:
        if self.benign.label != 0:
            raise ValueError("benign profile must have label 0")
        names = [attack.name for attack in self.attacks]
        if len(set(names)) != len(names):
            raise ValueError(f"attack names must be unique, got {names}")
        if self.benign.name in names:
            raise ValueError(f"benign profile name '{self.benign.name}' collides with an attack")
        for attack in self.attacks:
            if attack.label != 1:
                raise ValueError(f"attack profile '{attack.name}' must have label 1")
        return self

    @property
    def attack_names(self) -> tuple[str, ...]:
        return tuple(attack.name for attack in self.attacks)

    def select(self, names: list[str] | None = None) -> list[SyntheticAttackSpec]:
        """Attack profiles in the requested order, or the full library order."""
        if names is None:
            return list(self.attacks)
        by_name = {attack.name: attack for attack in self.attacks}
        unknown = [name for name in names if name not in by_name]
        if unknown:
            raise AttackLibraryError(f"unknown attacks {unknown}; library has {list(by_name)}")
        return [by_name[name] for name in names]

    def digest(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return sha256(canonical.encode("utf-8")).hexdigest()


def load_attack_library(path: Path | None = None) -> AttackLibrary:
    """Load a library file, defaulting to the one shipped with the package."""
    try:
        if path is None:
            resource = resources.files("flad_sim") / "data" / DEFAULT_LIBRARY_RESOURCE
            raw = resource.read_text(encoding="utf-8")
        else:
            raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise AttackLibraryError(f"cannot read attack library {path}: {exc}") from exc
    try:
        return AttackLibrary.model_validate_json(raw)
    except ValidationError as exc:
        source = path if path is not None else DEFAULT_LIBRARY_RESOURCE
        raise AttackLibraryError(f"invalid attack library {source}: {exc}") from exc
