"""A zoo of synthetic models whose compliance gap is known in closed form.

The harness keeps the :class:`SyntheticModelSpec`; audit code only ever
receives the :class:`BlackBoxModel` built from it, which carries no ground
truth.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import SchemaError
from ..seeding import unit_uniform
from .model import BlackBoxModel
from .schema import (
    BINARY,
    CategoricalFeature,
    Feature,
    InputSchema,
    ModelInput,
    NumericFeature,
    ScoreGrid,
)

_GT_TOL = 1e-9


@dataclass(frozen=True)
class GroupThreshold:
    """Selects a member of ``groups[k]`` with probability ``p_k``, independently per query."""

    p_1: float
    p_2: float
    eta: float
    groups: tuple[str, str] = ("G1", "G2")
    #: extra features the model accepts and ignores
    features: Mapping[str, Feature] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("p_1", "p_2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a probability")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if len(self.groups) != 2 or self.groups[0] == self.groups[1]:
            raise ValueError("GroupThreshold needs two distinct groups")

    def true_g(self) -> float:
        return round(abs(self.p_1 - self.p_2) - self.eta, 12)


@dataclass(frozen=True)
class ScoreFunction:
    """Piecewise-linear score of the numeric feature ``feature``.

    ``knots_x`` must be strictly increasing; between knots the score is the
    linear interpolant, so the best Lipschitz constant is the steepest slope.
    """

    knots_x: tuple[float, ...]
    knots_y: tuple[float, ...]
    lipschitz: float
    feature: str = "x"
    resolution: float | None = None

    def __post_init__(self):
        if len(self.knots_x) < 2 or len(self.knots_x) != len(self.knots_y):
            raise ValueError("need at least two knots with matching y values")
        if any(b <= a for a, b in zip(self.knots_x, self.knots_x[1:])):
            raise ValueError("knots_x must be strictly increasing")
        if not self.lipschitz > 0:
            raise ValueError("lipschitz must be positive")

    @classmethod
    def linear(cls, slope: float, intercept: float = 0.0, low: float = 0.0, high: float = 1.0,
               lipschitz: float = 1.0, **kw) -> "ScoreFunction":
        return cls((low, high), (slope * low + intercept, slope * high + intercept), lipschitz, **kw)

    @property
    def best_constant(self) -> float:
        x = np.asarray(self.knots_x, dtype=float)
        y = np.asarray(self.knots_y, dtype=float)
        return float(np.max(np.abs(np.diff(y) / np.diff(x))))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        if len(self.knots_x) == 2:
            (x0, x1), (y0, y1) = self.knots_x, self.knots_y
            slope = (y1 - y0) / (x1 - x0)
            intercept = y0 - slope * x0
            # pure scaling keeps quotients exact for f(x) = a*x
            return slope * xs + intercept if intercept != 0.0 else slope * xs
        return np.interp(xs, self.knots_x, self.knots_y)

    def true_g(self) -> float:
        return round(self.best_constant - self.lipschitz, 12)


@dataclass(frozen=True)
class LossPlant:
    """Loss-valued model over inputs ``0..size-1`` of feature ``feature``.

    Every input scores a background loss no larger than ``background``
    except ``location``, which scores ``planted``.
    """

    size: int
    location: int
    planted: float
    background: float
    eta: float
    feature: str = "x"
    resolution: float = 0.001

    def __post_init__(self):
        if self.size < 1 or not 0 <= self.location < self.size:
            raise ValueError("location must index one of size inputs")
        if not 0.0 <= self.background <= self.planted <= 1.0:
            raise ValueError("need 0 <= background <= planted <= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    def loss_at(self, i: int) -> float:
        if i == self.location:
            return self.planted
        return self.background * ((i * 5) % 7) / 6.0

    def true_g(self) -> float:
        return round(max(self.loss_at(i) for i in range(self.size)) - self.eta, 12)


Kind = GroupThreshold | ScoreFunction | LossPlant


@dataclass(frozen=True)
class SyntheticModelSpec:
    """A synthetic model plus the true value of its designated criterion.

    Designated criteria: statistical parity for GroupThreshold, individual
    fairness (absolute-value metrics) for ScoreFunction, maximum loss with
    the identity loss over all inputs for LossPlant.
    """

    kind: Kind
    ground_truth_g: float | None = None

    def __post_init__(self):
        truth = self.kind.true_g()
        if self.ground_truth_g is None:
            object.__setattr__(self, "ground_truth_g", truth)
        elif not math.isclose(self.ground_truth_g, truth, rel_tol=0.0, abs_tol=_GT_TOL):
            raise ValueError(
                f"ground_truth_g={self.ground_truth_g} inconsistent with parameters (expected {truth})"
            )

    @property
    def compliant(self) -> bool:
        return self.ground_truth_g <= 0

    def to_dict(self) -> dict:
        kind = asdict(self.kind)
        if "features" in kind:
            kind["features"] = {n: f.to_dict() for n, f in self.kind.features.items()}
        return {"kind": type(self.kind).__name__, "params": kind, "ground_truth_g": self.ground_truth_g}


class _SyntheticModel(BlackBoxModel):
    def __init__(self, kind: Kind):
        self._kind = kind
        if isinstance(kind, GroupThreshold):
            self.schema = InputSchema(dict(kind.features), tuple(kind.groups))
            self.output_space = BINARY
            self.stochastic = True
        elif isinstance(kind, ScoreFunction):
            lo, hi = kind.knots_x[0], kind.knots_x[-1]
            self.schema = InputSchema({kind.feature: NumericFeature(lo, hi)})
            ys = kind.knots_y
            self.output_space = ScoreGrid(min(ys), max(ys), kind.resolution)
            self.stochastic = False
        else:
            self.schema = InputSchema({kind.feature: NumericFeature(0, kind.size - 1)})
            self.output_space = ScoreGrid(0.0, 1.0, kind.resolution)
            self.stochastic = False
        blob = json.dumps(SyntheticModelSpec(kind).to_dict()["params"], sort_keys=True, default=str)
        self._id = hashlib.sha256(blob.encode()).hexdigest()[:16]

    def descriptor(self) -> dict:
        return {"source": "synthetic", "family": type(self._kind).__name__, "id": self._id}

    def _predict(self, inputs: Sequence[ModelInput], seeds: Sequence[int]) -> list[Any]:
        k = self._kind
        if isinstance(k, GroupThreshold):
            if any(x.group is None for x in inputs):
                raise SchemaError("GroupThreshold inputs must carry a group", field="group")
            p = np.array([k.p_1 if x.group == k.groups[0] else k.p_2 for x in inputs])
            u = unit_uniform(np.asarray(seeds, dtype=np.uint64)) if len(inputs) else np.empty(0)
            return [int(v) for v in (u < p)]
        if isinstance(k, ScoreFunction):
            xs = np.array([x.features[k.feature] for x in inputs], dtype=float)
            grid = self.output_space
            return [grid.snap(float(v)) for v in k.evaluate(xs)]
        out = []
        for x in inputs:
            v = x.features[k.feature]
            if float(v) != int(v):
                raise SchemaError(f"LossPlant input {k.feature!r} must be an integer", field=k.feature)
            out.append(self.output_space.snap(k.loss_at(int(v))))
        return out


def make_synthetic(spec: SyntheticModelSpec) -> BlackBoxModel:
    """Build the black-box model described by ``spec``."""
    return _SyntheticModel(spec.kind)


def group_threshold_with_features(p_1: float, p_2: float, eta: float, groups: tuple[str, str],
                                  levels: Mapping[str, Sequence[str]]) -> GroupThreshold:
    """GroupThreshold that also accepts categorical features (e.g. demographics)."""
    feats = {name: CategoricalFeature(tuple(v)) for name, v in levels.items()}
    return GroupThreshold(p_1, p_2, eta, tuple(groups), feats)
