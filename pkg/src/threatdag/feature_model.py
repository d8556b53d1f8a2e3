"""Binary feature schema for attack steps and bit-vector similarity measures."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import TYPE_CHECKING, Iterable, Iterator

from .errors import LengthMismatch

if TYPE_CHECKING:
    from .attack_graph import StepNode


@dataclass(frozen=True)
class BitVector:
    """Fixed-length sequence of 0/1 values.

    ``mask`` packs the bits into an int (bit ``i`` of the vector is bit
    ``len - 1 - i`` of the mask) so distance computations are a single popcount.
    """

    bits: tuple[int, ...]
    mask: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = 0
        for b in self.bits:
            if b not in (0, 1):
                raise ValueError(f"bits must be 0 or 1, got {self.bits!r}")
            m = (m << 1) | b
        object.__setattr__(self, "mask", m)

    @classmethod
    def from_string(cls, text: str) -> "BitVector":
        if not text or any(c not in "01" for c in text):
            raise ValueError(f"not a bit string: {text!r}")
        return cls(tuple(int(c) for c in text))

    @classmethod
    def zeros(cls, n: int) -> "BitVector":
        return cls((0,) * n)

    def popcount(self) -> int:
        return sum(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __iter__(self) -> Iterator[int]:
        return iter(self.bits)

    def __getitem__(self, i: int) -> int:
        return self.bits[i]

    def __add__(self, other: "BitVector") -> "BitVector":
        return BitVector(self.bits + other.bits)

    def __str__(self) -> str:
        return "".join(map(str, self.bits))


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[tuple[str, str], ...]
    version: str

    def __post_init__(self):
        names = [n for n, _ in self.features]
        if any(not n for n in names):
            raise ValueError("feature names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.features]

    def __len__(self) -> int:
        return len(self.features)

    @property
    def length(self) -> int:
        return len(self.features)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def vector(self, names: Iterable[str]) -> BitVector:
        """Vector with exactly the named features set."""
        on = set(names)
        unknown = on - set(self.names)
        if unknown:
            raise KeyError(f"unknown features: {sorted(unknown)}")
        return BitVector(tuple(int(n in on) for n in self.names))

    def to_json(self) -> str:
        return json.dumps([{"name": n, "description": d} for n, d in self.features], indent=2)

    @classmethod
    def from_json(cls, text: str, version: str) -> "FeatureSchema":
        return cls(tuple((o["name"], o["description"]) for o in json.loads(text)), version)


_V1 = (
    ("requires_local_access", "attacker needs code execution or physical access on the target device or host"),
    ("requires_network_position", "attacker needs a position on a network path (channel tap, host port, SS7 access)"),
    ("requires_malicious_app", "attacker runs a malicious or compromised controller/device application"),
    ("requires_compromised_switch", "attacker controls a switch or emulates one towards the controller"),
    ("requires_root_or_kernel", "step needs root, kernel, or controller-host system privileges"),
    ("exploits_missing_auth", "relies on absent or weak authentication/authorization"),
    ("exploits_missing_encryption", "relies on data or messages being unencrypted"),
    ("exploits_resource_limits", "exhausts a bounded resource (CPU, memory, table capacity)"),
    ("exploits_protocol_flaw", "abuses protocol or implementation behaviour (malformed input, spoofed fields)"),
    ("exploits_shared_storage", "abuses storage shared between applications"),
    ("targets_control_plane", "acts on the controller, its apps, or the control channel"),
    ("targets_data_plane", "acts on switches, flow tables, or forwarded traffic"),
    ("targets_application_layer", "acts on an end-user application or its data"),
    ("effect_dos", "causes loss of availability"),
    ("effect_integrity", "causes unauthorized modification"),
    ("effect_confidentiality", "causes disclosure of information"),
)


@lru_cache(maxsize=None)
def default_schema() -> FeatureSchema:
    return FeatureSchema(_V1, "v1")


SCHEMAS = {"v1": default_schema}


def schema_for(version: str) -> FeatureSchema:
    try:
        return SCHEMAS[version]()
    except KeyError:
        raise KeyError(f"unknown feature schema version {version!r}") from None


def _check(a: BitVector, b: BitVector) -> None:
    if len(a) != len(b):
        raise LengthMismatch(f"bit vectors differ in length: {len(a)} vs {len(b)}")


def hamming(a: BitVector, b: BitVector) -> int:
    _check(a, b)
    return (a.mask ^ b.mask).bit_count()


def jaccard(a: BitVector, b: BitVector) -> Fraction:
    """|a AND b| / |a OR b|, with the all-zero pair defined as identical (1)."""
    _check(a, b)
    union = (a.mask | b.mask).bit_count()
    if union == 0:
        return Fraction(1)
    return Fraction((a.mask & b.mask).bit_count(), union)


def edge_features(u: "StepNode", v: "StepNode", schema: FeatureSchema) -> BitVector:
    """``u.features + v.features + [same layer] + [jaccard >= 1/2]``; length ``2n + 2``."""
    n = len(schema)
    if len(u.features) != n or len(v.features) != n:
        raise LengthMismatch(
            f"node features ({len(u.features)}, {len(v.features)}) do not match schema length {n}"
        )
    same_layer = int(u.layer == v.layer)
    similar = int(jaccard(u.features, v.features) >= Fraction(1, 2))
    return BitVector(u.features.bits + v.features.bits + (same_layer, similar))
