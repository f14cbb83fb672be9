"""Input schemas, model inputs and countable output spaces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from ..errors import SchemaError


@dataclass(frozen=True)
class NumericFeature:
    low: float = -math.inf
    high: float = math.inf

    kind = "numeric"

    def check(self, name: str, value: Any) -> None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"feature {name!r} must be numeric, got {value!r}", field=name)
        if not math.isfinite(value) or not (self.low <= value <= self.high):
            raise SchemaError(
                f"feature {name!r}={value!r} outside [{self.low}, {self.high}]", field=name
            )

    def to_dict(self) -> dict:
        return {"kind": "numeric", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class CategoricalFeature:
    levels: tuple[str, ...]

    kind = "categorical"

    def check(self, name: str, value: Any) -> None:
        if value not in self.levels:
            raise SchemaError(
                f"feature {name!r}={value!r} not among levels {list(self.levels)}", field=name
            )

    def to_dict(self) -> dict:
        return {"kind": "categorical", "levels": list(self.levels)}


Feature = NumericFeature | CategoricalFeature


@dataclass(frozen=True)
class ModelInput:
    """One query point: named feature values plus an optional group label."""

    features: Mapping[str, Any] = field(default_factory=dict)
    group: str | None = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = dict(self.features)
        if self.group is not None:
            out["group"] = self.group
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelInput":
        data = dict(data)
        group = data.pop("group", None)
        return cls(features=data, group=group)


@dataclass(frozen=True)
class InputSchema:
    features: Mapping[str, Feature] = field(default_factory=dict)
    groups: tuple[str, ...] | None = None

    def validate(self, x: ModelInput) -> None:
        names = list(x.features)
        for name in names:
            if name not in self.features:
                raise SchemaError(f"unexpected feature {name!r}", field=name)
        for name, spec in self.features.items():
            if name not in x.features:
                raise SchemaError(f"missing feature {name!r}", field=name)
            spec.check(name, x.features[name])
        if self.groups is None:
            if x.group is not None:
                raise SchemaError("model declares no groups but input carries one", field="group")
        elif x.group is not None and x.group not in self.groups:
            raise SchemaError(
                f"group {x.group!r} not in declared groups {list(self.groups)}", field="group"
            )

    def numeric_names(self) -> list[str]:
        return [n for n, f in self.features.items() if isinstance(f, NumericFeature)]

    def to_dict(self) -> dict:
        return {
            "features": {n: f.to_dict() for n, f in self.features.items()},
            "groups": None if self.groups is None else list(self.groups),
        }


class OutputSpace:
    """A countable set of admissible outputs."""

    def contains(self, value: Any) -> bool:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class FiniteOutputs(OutputSpace):
    values: tuple[Any, ...]

    def contains(self, value: Any) -> bool:
        if isinstance(value, bool):
            return False
        return value in self.values

    def to_dict(self) -> dict:
        return {"kind": "finite", "values": list(self.values)}


BINARY = FiniteOutputs((0, 1))


@dataclass(frozen=True)
class ScoreGrid(OutputSpace):
    """Scores ``low + k * resolution`` for integer ``k``, capped at ``high``.

    ``resolution=None`` admits every double in ``[low, high]``; that set is
    still finite, and leaving scores unrounded keeps difference quotients exact.
    """

    low: float
    high: float
    resolution: float | None

    def __post_init__(self):
        if (self.resolution is not None and not self.resolution > 0) or not self.high >= self.low:
            raise ValueError("ScoreGrid needs resolution > 0 and high >= low")

    def snap(self, value: float) -> float:
        if self.resolution is None:
            return min(max(float(value), self.low), self.high)
        k = round((min(max(value, self.low), self.high) - self.low) / self.resolution)
        return min(self.low + k * self.resolution, self.high)

    def contains(self, value: Any) -> bool:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        if not (self.low - 1e-12 <= value <= self.high + 1e-12):
            return False
        if self.resolution is None:
            return math.isfinite(value)
        k = (value - self.low) / self.resolution
        return abs(k - round(k)) <= 1e-6 or abs(value - self.high) <= 1e-12

    def to_dict(self) -> dict:
        return {"kind": "grid", "low": self.low, "high": self.high, "resolution": self.resolution}


def output_space_from_dict(data: Mapping[str, Any]) -> OutputSpace:
    kind = data.get("kind")
    if kind == "finite":
        return FiniteOutputs(tuple(data["values"]))
    if kind == "grid":
        res = data.get("resolution")
        return ScoreGrid(float(data["low"]), float(data["high"]), None if res is None else float(res))
    raise SchemaError(f"unknown output space kind {kind!r}", field="kind")


def schema_from_dict(data: Mapping[str, Any]) -> InputSchema:
    feats: dict[str, Feature] = {}
    for name, spec in data.get("features", {}).items():
        if spec.get("kind") == "numeric":
            feats[name] = NumericFeature(float(spec.get("low", -math.inf)), float(spec.get("high", math.inf)))
        elif spec.get("kind") == "categorical":
            feats[name] = CategoricalFeature(tuple(spec["levels"]))
        else:
            raise SchemaError(f"feature {name!r} has unknown kind {spec.get('kind')!r}", field=name)
    groups = data.get("groups")
    return InputSchema(feats, None if groups is None else tuple(groups))


def numeric_matrix(inputs: Sequence[ModelInput], names: Iterable[str]) -> np.ndarray:
    names = list(names)
    return np.array([[float(x.features[n]) for n in names] for x in inputs], dtype=float).reshape(
        len(inputs), len(names)
    )
