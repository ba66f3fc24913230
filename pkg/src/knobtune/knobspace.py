"""Tunable knob definitions and the three configuration encodings.

A configuration exists in three interchangeable forms:

* raw values (``Configuration``): what the database engine would receive,
* normalized values in [0,1] (``NormalizedConfiguration``): min-max scaled
  per knob, categorical knobs by ordinal index,
* decile buckets 0..9 (``BucketedConfiguration``): the predictor's output
  alphabet, bucket b covering [b/10, (b+1)/10) with 1.0 clamped into 9.

All conversions are pure and deterministic; the bucket decoder maps a bucket
to its midpoint fraction (b*10% + 5%) before denormalizing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import DomainError, ParseError

# Assigned when a numeric knob declares no range.
UNBOUNDED_MIN = 0
UNBOUNDED_MAX = 2**31 - 1

NUMERIC_KINDS = ("continuous", "integer")
KNOB_KINDS = NUMERIC_KINDS + ("categorical",)

N_BUCKETS = 10


def round_half_up(x: float) -> int:
    """Round to nearest integer, ties away from the floor (2.5 -> 3, -2.5 -> -2)."""
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class KnobSpec:
    """One tunable knob: numeric with a [min, max] range or categorical."""

    name: str
    kind: str
    min: float | None = None
    max: float | None = None
    categories: tuple[str, ...] = ()
    default: float | str = 0
    restart_required: bool = False

    def __post_init__(self):
        if self.kind not in KNOB_KINDS:
            raise DomainError(f"knob {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.categories:
                raise DomainError(f"knob {self.name!r}: categorical without categories")
            if len(set(self.categories)) != len(self.categories):
                raise DomainError(f"knob {self.name!r}: duplicate categories")
            if self.default not in self.categories:
                raise DomainError(f"knob {self.name!r}: default {self.default!r} not a category")
        else:
            lo = UNBOUNDED_MIN if self.min is None else self.min
            hi = UNBOUNDED_MAX if self.max is None else self.max
            object.__setattr__(self, "min", float(lo))
            object.__setattr__(self, "max", float(hi))
            if not self.min < self.max:
                raise DomainError(f"knob {self.name!r}: min {self.min} must be < max {self.max}")
            if not self.min <= float(self.default) <= self.max:
                raise DomainError(f"knob {self.name!r}: default {self.default} outside [{self.min}, {self.max}]")

    @property
    def is_numeric(self) -> bool:
        return self.kind in NUMERIC_KINDS

    @property
    def span(self) -> float:
        return self.max - self.min

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return value in self.categories
        try:
            v = float(value)
        except (TypeError, ValueError):
            return False
        if self.kind == "integer" and v != int(v):
            return False
        return self.min <= v <= self.max


@dataclass(frozen=True)
class KnobSpace:
    """Ordered knob catalog; the order is canonical for every vector encoding."""

    knobs: tuple[KnobSpec, ...]

    def __post_init__(self):
        names = [k.name for k in self.knobs]
        if len(set(names)) != len(names):
            raise DomainError("duplicate knob names in space")

    @property
    def n(self) -> int:
        return len(self.knobs)

    def names(self) -> list[str]:
        return [k.name for k in self.knobs]

    def index_of(self, name: str) -> int:
        for i, k in enumerate(self.knobs):
            if k.name == name:
                return i
        raise KeyError(name)

    def default_configuration(self) -> "Configuration":
        return Configuration(tuple(k.default for k in self.knobs))

    def validate(self, cfg: "Configuration") -> None:
        if len(cfg.values) != self.n:
            raise DomainError(f"configuration length {len(cfg.values)} != space size {self.n}")
        for knob, value in zip(self.knobs, cfg.values):
            if not knob.contains(value):
                raise DomainError(f"knob {knob.name!r}: value {value!r} outside permissible range")

    def subset(self, names: list[str]) -> "KnobSpace":
        by_name = {k.name: k for k in self.knobs}
        return KnobSpace(tuple(by_name[n] for n in names))


@dataclass(frozen=True)
class Configuration:
    """Raw knob values aligned with a KnobSpace order."""

    values: tuple

    def as_dict(self, space: KnobSpace) -> dict:
        return dict(zip(space.names(), self.values))


@dataclass(frozen=True)
class NormalizedConfiguration:
    """Per-knob min-max scaled values, every component in [0,1]."""

    values: tuple[float, ...]

    def __post_init__(self):
        for i, v in enumerate(self.values):
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"normalized component {i} = {v} outside [0,1]")


@dataclass(frozen=True)
class BucketedConfiguration:
    """Decile bucket indices, every entry in 0..9."""

    buckets: tuple[int, ...]

    def __post_init__(self):
        for i, b in enumerate(self.buckets):
            if not (isinstance(b, int) and 0 <= b < N_BUCKETS):
                raise DomainError(f"bucket {i} = {b!r} outside 0..{N_BUCKETS - 1}")


def normalize(space: KnobSpace, cfg: Configuration) -> NormalizedConfiguration:
    """Min-max scale each knob value into [0,1].

    Numeric knobs map linearly over [min, max]; categorical knobs map to
    ordinal index / (n_categories - 1), or 0.0 for a single category.
    """
    space.validate(cfg)
    out = []
    for knob, value in zip(space.knobs, cfg.values):
        if knob.kind == "categorical":
            if len(knob.categories) == 1:
                out.append(0.0)
            else:
                out.append(knob.categories.index(value) / (len(knob.categories) - 1))
        else:
            out.append((float(value) - knob.min) / knob.span)
    return NormalizedConfiguration(tuple(out))


def denormalize(space: KnobSpace, ncfg: NormalizedConfiguration) -> Configuration:
    """Invert normalize: scale back to raw values.

    Integer knobs round half-up; categorical knobs take the nearest index.
    """
    if len(ncfg.values) != space.n:
        raise DomainError(f"normalized length {len(ncfg.values)} != space size {space.n}")
    out = []
    for knob, v in zip(space.knobs, ncfg.values):
        if knob.kind == "categorical":
            idx = round_half_up(v * (len(knob.categories) - 1)) if len(knob.categories) > 1 else 0
            out.append(knob.categories[idx])
        elif knob.kind == "integer":
            out.append(int(min(knob.max, max(knob.min, round_half_up(knob.min + v * knob.span)))))
        else:
            out.append(knob.min + v * knob.span)
    return Configuration(tuple(out))


def bucketize(ncfg: NormalizedConfiguration) -> BucketedConfiguration:
    """Discretize each normalized component into its decile bucket."""
    return BucketedConfiguration(
        tuple(min(N_BUCKETS - 1, math.floor(v * N_BUCKETS)) for v in ncfg.values)
    )


def bucket_midpoint(bucket: int) -> float:
    """Midpoint fraction of a decile bucket: bucket 3 ("30% to 40%") -> 0.35."""
    if not 0 <= bucket < N_BUCKETS:
        raise DomainError(f"bucket {bucket} outside 0..{N_BUCKETS - 1}")
    return (bucket * 10 + 5) / 100


def bucket_to_value(space: KnobSpace, bcfg: BucketedConfiguration) -> Configuration:
    """Decode buckets to raw values via each bucket's midpoint fraction."""
    if len(bcfg.buckets) != space.n:
        raise DomainError(f"bucket vector length {len(bcfg.buckets)} != space size {space.n}")
    fractions = NormalizedConfiguration(tuple(bucket_midpoint(b) for b in bcfg.buckets))
    return denormalize(space, fractions)


# --- knob catalog file -------------------------------------------------
#
# One JSON record per line: {"name", "kind", "min", "max", "categories",
# "default", "restart_required"}. "min"/"max" may be omitted for numeric
# knobs (the unbounded default range applies); "categories" only for
# categorical knobs. Unknown kinds are rejected.

def parse_catalog_record(record: dict) -> KnobSpec:
    kind = record.get("kind")
    if kind not in KNOB_KINDS:
        raise ParseError(f"knob record {record.get('name')!r}: unknown kind {kind!r}")
    return KnobSpec(
        name=record["name"],
        kind=kind,
        min=record.get("min"),
        max=record.get("max"),
        categories=tuple(record.get("categories", ())),
        default=record["default"],
        restart_required=bool(record.get("restart_required", False)),
    )


def load_catalog(path: str | Path) -> KnobSpace:
    """Load a knob catalog from a JSONL file (one knob per line)."""
    knobs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            knobs.append(parse_catalog_record(record))
    if not knobs:
        raise ParseError(f"{path}: empty knob catalog")
    return KnobSpace(tuple(knobs))


def dump_catalog(space: KnobSpace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k in space.knobs:
            record = {"name": k.name, "kind": k.kind, "default": k.default,
                      "restart_required": k.restart_required}
            if k.kind == "categorical":
                record["categories"] = list(k.categories)
            else:
                record["min"] = k.min
                record["max"] = k.max
            fh.write(json.dumps(record) + "\n")
