"""Test data: stratified synthetic applicants queried through the audited model.

Test data is a fallback. It is generated only when usable historical data
leaves some demographic cell below the configured minimum, and only by
querying the actual model, never by fabricating outcomes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..blackbox import BlackBoxModel, FiniteOutputs, ModelInput, ScoreGrid
from ..errors import ConfigError, MethodNotApplicable
from ..evidence import Design, Evidence, QueryBudget, collect
from .config import AXES, LL144Config
from .records import HistoricalRecord

SOURCE = "test-data"


def cell_counts(records: Sequence[HistoricalRecord], levels: Mapping[str, Sequence[str]]) -> dict[tuple[str, str], int]:
    counts = {cell: 0 for cell in itertools.product(*(levels[a] for a in AXES))}
    for r in records:
        key = (r.race_ethnicity, r.sex)
        if key in counts:
            counts[key] += 1
    return counts


def insufficient_cells(records: Sequence[HistoricalRecord], levels: Mapping[str, Sequence[str]],
                       minimum: int) -> list[dict]:
    """Intersectional cells whose usable record count is below ``minimum``."""
    return [{"race_ethnicity": r, "sex": s, "n": n, "minimum": minimum}
            for (r, s), n in cell_counts(records, levels).items() if n < minimum]


def stratify(n: int, cells: Sequence) -> list[int]:
    """Split ``n`` evenly over ``cells``; the remainder goes to the first cells."""
    base, extra = divmod(n, len(cells))
    return [base + (1 if i < extra else 0) for i in range(len(cells))]


@dataclass(frozen=True)
class TestDataDisclosure:
    __test__ = False

    job_category: str
    method: str
    seed: int
    n: int
    per_cell: tuple[dict, ...]
    trigger: tuple[dict, ...]
    model: Mapping
    anomalies: int

    def to_dict(self) -> dict:
        return {"job_category": self.job_category, "method": self.method, "seed": self.seed, "n": self.n,
                "per_cell": list(self.per_cell), "trigger": list(self.trigger), "model": dict(self.model),
                "anomalies": self.anomalies}


def _outcome_field(model: BlackBoxModel) -> str:
    space = model.output_space
    if isinstance(space, ScoreGrid):
        return "score"
    if isinstance(space, FiniteOutputs) and set(space.values) <= {0, 1}:
        return "selected"
    raise ConfigError("test data needs a model with binary selections or scores in [0, 1]", field="model")


def generate_test_data(model: BlackBoxModel | None, config: LL144Config, n: int, seed: int, *,
                       levels: Mapping[str, Sequence[str]], historical: Sequence[HistoricalRecord] = (),
                       job_category: str = "") -> tuple[list[HistoricalRecord], Evidence, TestDataDisclosure]:
    """Query ``model`` on ``n`` applicants stratified over race/ethnicity x sex.

    Refuses (``MethodNotApplicable``) when no model is available or when
    ``historical`` already meets the per-cell minimum in every cell.
    """
    if model is None:
        raise MethodNotApplicable("no model available: test data cannot be fabricated without querying the tool")
    trigger = insufficient_cells(historical, levels, config.min_cell_count)
    if not trigger:
        raise MethodNotApplicable("historical data sufficient: every demographic cell meets the minimum")
    if n < 1:
        raise ValueError("n must be positive")
    cells = list(itertools.product(*(levels[a] for a in AXES)))
    if not cells:
        raise ConfigError("no demographic levels to stratify over", field="levels")
    quotas = stratify(n, cells)
    field_name = _outcome_field(model)
    declared = model.schema.features
    unsupplied = sorted(set(declared) - {*AXES, "job_category"})
    if unsupplied:
        raise ConfigError(f"model requires feature {unsupplied[0]!r}, which test data cannot supply",
                          field="model")
    inputs: list[ModelInput] = []
    for (race, sex), q in zip(cells, quotas):
        cell = {"race_ethnicity": race, "sex": sex, "job_category": job_category}
        feats = {k: v for k, v in cell.items() if k in declared}
        group = cell[config.group_axis] if model.schema.groups else None
        inputs.extend(ModelInput(feats, group) for _ in range(q))
    budget = QueryBudget(n * model.cost_per_query or 1.0)
    evidence = collect(model, Design(tuple(inputs), "ll144-test-data"), n, budget, seed)
    # Design queries keep their order, so record k maps back to its planned cell
    planned = [c for c, q in zip(cells, quotas) for _ in range(q)]
    bad = {a["query"] for a in evidence.anomalies}
    kept = [c for k, c in enumerate(planned) if k not in bad]
    records = []
    for rec, (race, sex) in zip(evidence.records, kept):
        value = rec.output
        records.append(HistoricalRecord(
            f"test-{rec.index:06d}", job_category, race, sex, SOURCE,
            int(value) if field_name == "selected" else None,
            float(value) if field_name == "score" else None,
        ))
    disclosure = TestDataDisclosure(
        job_category=job_category,
        method=("stratified synthetic applicants, an equal share per race/ethnicity x sex cell "
                "(remainder to the first cells), each queried once through the audited model"),
        seed=seed,
        n=n,
        per_cell=tuple({"race_ethnicity": r, "sex": s, "n": q} for (r, s), q in zip(cells, quotas)),
        trigger=tuple(trigger),
        model=model.descriptor(),
        anomalies=len(evidence.anomalies),
    )
    return records, evidence, disclosure
