"""Compliance criteria g and their finite-sample estimators.

A model is compliant with a criterion when ``g <= 0``. Estimators return a
:class:`CriterionEstimate`; its ``lower_bound`` flag marks estimates that can
only ever under-state g (so they may support a finding of non-compliance but
never a confirmation of compliance).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .blackbox.model import BlackBoxModel
from .blackbox.schema import ModelInput
from .errors import BudgetExceeded, EstimationError
from .evidence import Evidence, QueryBudget
from .metrics import Metric, pair_quotients
from .seeding import derive_seeds

# -- criteria ------------------------------------------------------------------

LOSSES = ("output", "abs_error")


@dataclass(frozen=True)
class MaxLoss:
    """``g = max_{x in S} loss(f(x), x) - eta``.

    ``loss`` is ``"output"`` (the output is the loss), ``"abs_error"``
    (``|f(x) - x[feature]|``) or a callable ``loss(y, x) -> float``.
    """

    loss: str | Callable[[Any, ModelInput], float]
    S: tuple[ModelInput, ...]
    eta: float
    feature: str = "x"
    kind = "max_loss"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.S:
            raise ValueError("S must be a nonempty finite set")
        if isinstance(self.loss, str) and self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {LOSSES} or pass a callable")

    def loss_value(self, y: Any, x: ModelInput) -> float:
        if callable(self.loss):
            return float(self.loss(y, x))
        if self.loss == "output":
            return float(y)
        return abs(float(y) - float(x.features[self.feature]))

    def describe(self) -> dict:
        return {"kind": self.kind, "eta": self.eta, "size_S": len(self.S),
                "loss": self.loss if isinstance(self.loss, str) else getattr(self.loss, "__name__", "callable")}


@dataclass(frozen=True)
class StatisticalParity:
    """``g = |P(f=1 | group_1) - P(f=1 | group_2)| - eta`` for a binary classifier."""

    group_1: str
    group_2: str
    eta: float
    kind = "statistical_parity"

    def __post_init__(self):
        if self.group_1 == self.group_2:
            raise ValueError("statistical parity compares two distinct groups")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    def describe(self) -> dict:
        return {"kind": self.kind, "group_1": self.group_1, "group_2": self.group_2, "eta": self.eta}


@dataclass(frozen=True)
class IndividualFairness:
    """``g = sup D(f(x), f(x')) / d(x, x') - L``; ``features`` restricts ``d`` to named inputs."""

    lipschitz: float
    output_metric: Metric = "absolute"
    input_metric: Metric = "l1"
    features: tuple[str, ...] | None = None
    kind = "individual_fairness"

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise ValueError("Lipschitz constant must be positive")

    def describe(self) -> dict:
        name = lambda m: m if isinstance(m, str) else getattr(m, "__name__", "callable")  # noqa: E731
        return {"kind": self.kind, "lipschitz": self.lipschitz, "output_metric": name(self.output_metric),
                "input_metric": name(self.input_metric)}


@dataclass(frozen=True)
class ImpactMetrics:
    """Selection rates, scoring rates, median scores and impact ratios per category."""

    axes: tuple[str, ...]
    selected_field: str = "selected"
    score_field: str = "score"
    intersectional: bool = True
    #: declared category levels per axis; cells with no members are still reported
    levels: Mapping[str, Sequence[str]] = field(default_factory=dict)
    kind = "impact_metrics"

    def __post_init__(self):
        if not self.axes:
            raise ValueError("at least one category axis is required")

    def describe(self) -> dict:
        return {"kind": self.kind, "axes": list(self.axes), "intersectional": self.intersectional}


ComplianceCriterion = MaxLoss | StatisticalParity | IndividualFairness | ImpactMetrics


@dataclass(frozen=True)
class CriterionEstimate:
    kind: str
    g_hat: float
    counts: Mapping[str, int] = field(default_factory=dict)
    rates: Mapping[str, float] = field(default_factory=dict)
    standard_error: float | None = None
    lower_bound: bool = False
    witness: Mapping[str, Any] | None = None
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(self.g_hat):
            d["g_hat"] = "inf" if self.g_hat > 0 else "-inf"
        return d


# -- estimators ------------------------------------------------------------------


def eval_max_loss(model: BlackBoxModel, criterion: MaxLoss, budget: QueryBudget, seed: int) -> CriterionEstimate:
    """Exhaustively query every point of S and take the worst loss."""
    S = list(criterion.S)
    if budget.affordable(model.cost_per_query) < len(S):
        raise BudgetExceeded(
            f"exhaustive max-loss evaluation needs {len(S)} queries; budget admits "
            f"{budget.affordable(model.cost_per_query)}"
        )
    seeds = [int(s) for s in derive_seeds(seed, "max-loss", np.arange(len(S)))]
    outputs = model.query_batch(S, seeds)
    budget.charge(len(S), model.cost_per_query)
    losses = [criterion.loss_value(y, x) for y, x in zip(outputs, S)]
    k = int(np.argmax(losses))
    return CriterionEstimate(
        criterion.kind, losses[k] - criterion.eta, counts={"queried": len(S), "size_S": len(S)},
        lower_bound=False, witness={"input": S[k].to_dict(), "output": outputs[k], "loss": losses[k]},
    )


def estimate_max_loss(evidence: Evidence, criterion: MaxLoss) -> CriterionEstimate:
    """Max loss over the logged records that fall in S.

    The estimate is exact when every point of S was queried and a lower
    bound otherwise.
    """
    keys = {json.dumps(x.to_dict(), sort_keys=True): x for x in criterion.S}
    best: tuple[float, Any, Any] | None = None
    seen = set()
    for r in evidence.records:
        key = json.dumps(r.input.to_dict(), sort_keys=True)
        if key not in keys:
            continue
        seen.add(key)
        loss = criterion.loss_value(r.output, r.input)
        if best is None or loss > best[0]:
            best = (loss, r.input, r.output)
    if best is None:
        raise EstimationError("evidence contains no point of S")
    return CriterionEstimate(
        criterion.kind, best[0] - criterion.eta, counts={"queried": len(seen), "size_S": len(keys)},
        lower_bound=len(seen) < len(keys),
        witness={"input": best[1].to_dict(), "output": best[2], "loss": best[0]},
    )


def group_counts(evidence: Evidence, groups: Sequence[str]) -> dict[str, tuple[int, int]]:
    """``{group: (selected, total)}`` over binary outputs."""
    tally = {g: [0, 0] for g in groups}
    for r in evidence.records:
        if r.input.group in tally:
            if r.output not in (0, 1):
                raise EstimationError(f"record {r.index} has non-binary output {r.output!r}")
            t = tally[r.input.group]
            t[0] += int(r.output)
            t[1] += 1
    return {g: (k, n) for g, (k, n) in tally.items()}


def estimate_statistical_parity(evidence: Evidence, criterion: StatisticalParity) -> CriterionEstimate:
    c = group_counts(evidence, (criterion.group_1, criterion.group_2))
    for g in (criterion.group_1, criterion.group_2):
        if c[g][1] == 0:
            raise EstimationError(f"group {g!r} is absent from the evidence")
    (k1, n1), (k2, n2) = c[criterion.group_1], c[criterion.group_2]
    r1, r2 = k1 / n1, k2 / n2
    se = math.sqrt(r1 * (1 - r1) / n1 + r2 * (1 - r2) / n2)
    return CriterionEstimate(
        criterion.kind, abs(r1 - r2) - criterion.eta,
        counts={"k_1": k1, "n_1": n1, "k_2": k2, "n_2": n2},
        rates={"r_1": r1, "r_2": r2, "difference": r1 - r2},
        standard_error=se,
    )


def lipschitz_lower_bound(evidence: Evidence, criterion: IndividualFairness) -> CriterionEstimate:
    """Steepest logged difference quotient minus L; always a lower bound on g."""
    if evidence.N < 2:
        raise EstimationError("need at least two records to form a pair")
    first = evidence.records[0].input
    names = list(criterion.features) if criterion.features else [
        k for k, v in first.features.items() if isinstance(v, (int, float)) and not isinstance(v, bool)
    ]
    if callable(criterion.input_metric):
        X = [r.input for r in evidence.records]
    else:
        X = np.array([[float(r.input.features[k]) for k in names] for r in evidence.records]).reshape(evidence.N, -1)
    y = [r.output for r in evidence.records]
    i, j, D, d = pair_quotients(X, y, criterion.output_metric, criterion.input_metric)
    degenerate = d <= 0
    violation = degenerate & (D > 0)
    diag = {"pairs": int(len(d)), "degenerate_pairs": int(degenerate.sum())}
    if violation.any():
        k = int(np.flatnonzero(violation)[0])
        return CriterionEstimate(
            criterion.kind, math.inf, lower_bound=True,
            witness={"i": int(i[k]), "j": int(j[k]), "quotient": "inf", "output_distance": float(D[k]),
                     "input_distance": 0.0, "reason": "identical inputs with different outputs"},
            diagnostics=diag,
        )
    if degenerate.all():
        raise EstimationError(f"all {len(d)} pairs have zero input distance; no quotient is defined")
    q = np.where(degenerate, -np.inf, D / np.where(degenerate, 1.0, d))
    k = int(np.argmax(q))
    return CriterionEstimate(
        criterion.kind, float(q[k]) - criterion.lipschitz, lower_bound=True,
        witness={"i": int(i[k]), "j": int(j[k]), "quotient": float(q[k]),
                 "output_distance": float(D[k]), "input_distance": float(d[k])},
        diagnostics=diag,
    )


# -- impact metrics (selection rates, scoring rates, medians) ---------------------

METRIC_COLUMNS = (
    "axis", "category", "n", "n_selection", "n_selected", "selection_rate", "impact_ratio_selection",
    "n_scored", "median_score", "n_above_median", "scoring_rate", "impact_ratio_scoring",
)


def median(values: Sequence[float]) -> float:
    """Median; for an even count, the mean of the two central order statistics."""
    s = sorted(values)
    if not s:
        raise ValueError("median of an empty sequence")
    m = len(s) // 2
    return s[m] if len(s) % 2 else (s[m - 1] + s[m]) / 2


@dataclass
class MetricRow:
    axis: str
    category: str
    n: int = 0
    n_selection: int = 0
    n_selected: int = 0
    selection_rate: float | None = None
    impact_ratio_selection: float | None = None
    n_scored: int = 0
    median_score: float | None = None
    n_above_median: int = 0
    scoring_rate: float | None = None
    impact_ratio_scoring: float | None = None

    @property
    def empty(self) -> bool:
        return self.n == 0


@dataclass
class MetricTable:
    rows: list[MetricRow]
    pooled_median: float | None
    total: int

    def for_axis(self, axis: str) -> list[MetricRow]:
        return [r for r in self.rows if r.axis == axis]

    def to_records(self) -> list[dict]:
        return [asdict(r) for r in self.rows]

    def to_json(self) -> str:
        return json.dumps({"pooled_median_score": self.pooled_median, "total": self.total,
                           "rows": self.to_records()}, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.to_records():
            w.writerow({k: "" if r[k] is None else r[k] for k in METRIC_COLUMNS})
        return buf.getvalue()


def _rows_from_evidence(evidence: Evidence, criterion: ImpactMetrics) -> list[dict]:
    rows = []
    for r in evidence.records:
        row = dict(r.input.features)
        if r.input.group is not None:
            row.setdefault("group", r.input.group)
        row[criterion.selected_field] = r.output
        rows.append(row)
    return rows


def _selected(v: Any) -> int | None:
    if v is None or v == "":
        return None
    return int(v)


def _score(v: Any) -> float | None:
    if v is None or v == "":
        return None
    return float(v)


def _fill(row: MetricRow, members: list[Mapping], crit: ImpactMetrics, pooled: float | None) -> None:
    row.n = len(members)
    sel = [s for s in (_selected(m.get(crit.selected_field)) for m in members) if s is not None]
    sc = [s for s in (_score(m.get(crit.score_field)) for m in members) if s is not None]
    row.n_selection = len(sel)
    row.n_selected = sum(sel)
    if sel:
        row.selection_rate = row.n_selected / row.n_selection
    row.n_scored = len(sc)
    if sc:
        row.median_score = median(sc)
        row.n_above_median = sum(1 for s in sc if s > pooled)
        row.scoring_rate = row.n_above_median / row.n_scored


def _ratios(rows: list[MetricRow]) -> None:
    for rate, ratio in (("selection_rate", "impact_ratio_selection"), ("scoring_rate", "impact_ratio_scoring")):
        vals = [getattr(r, rate) for r in rows if getattr(r, rate) is not None]
        top = max(vals, default=None)
        for r in rows:
            v = getattr(r, rate)
            setattr(r, ratio, None if v is None or not top else v / top)


def impact_metrics(data: Evidence | Sequence[Mapping[str, Any]], criterion: ImpactMetrics) -> MetricTable:
    """Per-category metric table, including intersectional cells.

    Scoring rate is the share of a category scoring strictly above the median
    score of the whole table. Impact ratios divide by the highest category
    rate on the same axis.
    """
    rows = _rows_from_evidence(data, criterion) if isinstance(data, Evidence) else list(data)
    if not rows:
        raise EstimationError("no rows to compute impact metrics from")
    for axis in criterion.axes:
        if any(axis not in r for r in rows):
            raise EstimationError(f"category axis {axis!r} is absent from the data")
    scores = [s for s in (_score(r.get(criterion.score_field)) for r in rows) if s is not None]
    pooled = median(scores) if scores else None

    def levels(axis: str) -> list[str]:
        declared = list(criterion.levels.get(axis, []))
        observed = sorted({str(r[axis]) for r in rows} - set(declared))
        return declared + observed

    groups: list[tuple[str, list[tuple[str, Callable[[Mapping], bool]]]]] = []
    for axis in criterion.axes:
        groups.append((axis, [(lv, (lambda r, a=axis, v=lv: str(r[a]) == v)) for lv in levels(axis)]))
    if criterion.intersectional and len(criterion.axes) > 1:
        combos: list[list[str]] = [[]]
        for axis in criterion.axes:
            combos = [c + [lv] for c in combos for lv in levels(axis)]
        name = " / ".join(criterion.axes)
        cells = []
        for combo in combos:
            def match(r, combo=tuple(combo)):
                return all(str(r[a]) == v for a, v in zip(criterion.axes, combo))
            cells.append((" / ".join(combo), match))
        groups.append((name, cells))

    out: list[MetricRow] = []
    for axis, cells in groups:
        axis_rows = []
        for label, match in cells:
            row = MetricRow(axis, label)
            _fill(row, [r for r in rows if match(r)], criterion, pooled)
            axis_rows.append(row)
        _ratios(axis_rows)
        out.extend(axis_rows)
    return MetricTable(out, pooled, len(rows))
