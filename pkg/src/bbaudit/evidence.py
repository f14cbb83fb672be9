"""Gathering the auditor's evidence: sampling strategies, budgets and the query log."""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Mapping, Sequence

import numpy as np

from .blackbox.model import BlackBoxModel
from .blackbox.schema import ModelInput
from .errors import BudgetExceeded, NonConformantOutput, SchemaError
from .metrics import input_distance, pair_quotients
from .seeding import derive_seed, derive_seeds, rng

SCHEMA_VERSION = 1


# -- distributions -----------------------------------------------------------


@dataclass(frozen=True)
class Categorical:
    probs: Mapping[Any, float]

    def __post_init__(self):
        total = sum(self.probs.values())
        if not self.probs or any(p < 0 for p in self.probs.values()) or not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"categorical probabilities must be nonnegative and sum to 1, got {dict(self.probs)}")

    def sample(self, gen: np.random.Generator, n: int) -> list:
        levels = list(self.probs)
        idx = gen.choice(len(levels), size=n, p=np.array([self.probs[k] for k in levels]))
        return [levels[i] for i in idx]

    def to_dict(self) -> dict:
        return {"kind": "categorical", "probs": dict(self.probs)}


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("Uniform needs high > low")

    def sample(self, gen: np.random.Generator, n: int) -> list:
        return [float(v) for v in gen.uniform(self.low, self.high, size=n)]

    def to_dict(self) -> dict:
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class PointMass:
    value: Any

    def sample(self, gen: np.random.Generator, n: int) -> list:
        return [self.value] * n

    def to_dict(self) -> dict:
        return {"kind": "point", "value": self.value}


Marginal = Categorical | Uniform | PointMass


def marginal_from_dict(data: Mapping[str, Any]) -> Marginal:
    kind = data.get("kind")
    if kind == "categorical":
        return Categorical(dict(data["probs"]))
    if kind == "uniform":
        return Uniform(float(data["low"]), float(data["high"]))
    if kind == "point":
        return PointMass(data["value"])
    raise ValueError(f"unknown distribution kind {kind!r}")


@dataclass(frozen=True)
class ProductDistribution:
    """Independent marginals per feature, plus an optional group marginal."""

    features: Mapping[str, Marginal] = field(default_factory=dict)
    group: Categorical | None = None

    def sample(self, gen: np.random.Generator, n: int, group: str | None = None) -> list[ModelInput]:
        cols = {name: m.sample(gen, n) for name, m in self.features.items()}
        if group is not None:
            groups = [group] * n
        elif self.group is not None:
            groups = self.group.sample(gen, n)
        else:
            groups = [None] * n
        return [ModelInput({k: cols[k][i] for k in cols}, groups[i]) for i in range(n)]

    @property
    def declared_groups(self) -> tuple[str, ...]:
        return tuple(self.group.probs) if self.group is not None else ()

    def to_dict(self) -> dict:
        return {
            "features": {k: m.to_dict() for k, m in self.features.items()},
            "group": None if self.group is None else self.group.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProductDistribution":
        grp = data.get("group")
        return cls(
            {k: marginal_from_dict(v) for k, v in data.get("features", {}).items()},
            None if grp is None else Categorical(dict(grp["probs"])),
        )


# -- strategies ----------------------------------------------------------------


@dataclass(frozen=True)
class IID:
    dist: ProductDistribution
    tag = "iid"

    def to_dict(self) -> dict:
        return {"kind": "iid", "tag": self.tag, "distribution": self.dist.to_dict()}


@dataclass(frozen=True)
class Stratified:
    dist: ProductDistribution
    quotas: Mapping[str, int]
    tag = "stratified"

    def __post_init__(self):
        if any(q < 0 for q in self.quotas.values()):
            raise ValueError("quotas must be nonnegative")

    def to_dict(self) -> dict:
        return {"kind": "stratified", "tag": self.tag, "quotas": dict(self.quotas),
                "distribution": self.dist.to_dict()}


@dataclass(frozen=True)
class AdaptivePairSearch:
    """Hill-climb on the difference quotient with seeded random restarts.

    Each batch spends ``2 * restarts`` queries on fresh random pairs and the
    rest on Gaussian perturbations (clipped to ``radius`` in the input metric,
    projected onto the feature box) around the two ends of the steepest pair
    seen so far. Every feature must be Uniform or a point mass.
    """

    dist: ProductDistribution
    radius: float
    restarts: int = 1
    batch_size: int = 8
    output_metric: str = "absolute"
    input_metric: str = "l1"
    tag = "adaptive-pair-search"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("perturbation radius must be positive")
        if self.batch_size < 2 or self.restarts < 0 or 2 * self.restarts > self.batch_size // 2:
            raise ValueError("restart pairs may use at most half of each batch")
        for name, m in self.dist.features.items():
            if not isinstance(m, (Uniform, PointMass)):
                raise ValueError(f"adaptive search needs numeric features; {name!r} is {type(m).__name__}")

    @property
    def numeric(self) -> list[str]:
        return [k for k, m in self.dist.features.items() if isinstance(m, Uniform)]

    def to_dict(self) -> dict:
        return {"kind": "adaptive", "tag": self.tag, "radius": self.radius, "restarts": self.restarts,
                "batch_size": self.batch_size, "output_metric": self.output_metric,
                "input_metric": self.input_metric, "distribution": self.dist.to_dict()}


@dataclass(frozen=True)
class Design:
    """A fixed, pre-planned list of inputs queried in order."""

    inputs: tuple[ModelInput, ...]
    label: str = "design"
    tag = "design"

    def to_dict(self) -> dict:
        return {"kind": "design", "tag": self.tag, "label": self.label, "size": len(self.inputs)}


SamplingStrategy = IID | Stratified | AdaptivePairSearch | Design


def strategy_from_dict(data: Mapping[str, Any]) -> SamplingStrategy:
    dist = ProductDistribution.from_dict(data.get("distribution", {}))
    kind = data.get("kind")
    if kind == "iid":
        return IID(dist)
    if kind == "stratified":
        return Stratified(dist, {k: int(v) for k, v in data["quotas"].items()})
    if kind == "adaptive":
        return AdaptivePairSearch(dist, float(data["radius"]), int(data.get("restarts", 1)),
                                  int(data.get("batch_size", 8)), data.get("output_metric", "absolute"),
                                  data.get("input_metric", "l1"))
    raise ValueError(f"unknown strategy kind {kind!r}")


@dataclass
class QueryBudget:
    max_queries: float
    spent: float = 0.0

    def __post_init__(self):
        if not self.max_queries > 0:
            raise ValueError("max_queries must be positive")
        if self.spent > self.max_queries:
            raise BudgetExceeded("budget already overspent")

    @property
    def remaining(self) -> float:
        return self.max_queries - self.spent

    def affordable(self, cost_per_query: float) -> int:
        if cost_per_query <= 0:
            return 2**62
        return int(math.floor(self.remaining / cost_per_query + 1e-9))

    def charge(self, queries: int, cost_per_query: float) -> None:
        if queries > self.affordable(cost_per_query):
            raise BudgetExceeded(f"{queries} queries exceed the remaining budget {self.remaining}")
        self.spent += queries * cost_per_query


# -- evidence ----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class QueryRecord:
    index: int
    input: ModelInput
    output: Any
    strategy_tag: str
    seed: int
    replayable: bool = True

    def to_dict(self) -> dict:
        return {"index": self.index, "input": self.input.to_dict(), "output": self.output,
                "strategy_tag": self.strategy_tag, "seed": self.seed, "replayable": self.replayable}


@dataclass(frozen=True)
class Evidence:
    """An append-only log of query records with provenance."""

    records: tuple[QueryRecord, ...] = ()
    provenance: Mapping[str, Any] = field(default_factory=dict)
    truncated: bool = False
    anomalies: tuple[Mapping[str, Any], ...] = ()

    def __post_init__(self):
        for k, r in enumerate(self.records):
            if r.index != k:
                raise ValueError(f"record indices must be contiguous from 0; found {r.index} at {k}")

    @property
    def N(self) -> int:
        return len(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, records: Iterable[QueryRecord], anomalies: Iterable[Mapping] = ()) -> "Evidence":
        return Evidence(self.records + tuple(records), self.provenance, self.truncated,
                        self.anomalies + tuple(anomalies))

    def header(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "N": self.N, "truncated": self.truncated,
                "anomalies": list(self.anomalies), "provenance": dict(self.provenance)}

    def dump(self, fh: IO[str]) -> None:
        fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
        for r in self.records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")

    def dumps(self) -> str:
        buf = io.StringIO()
        self.dump(buf)
        return buf.getvalue()

    @classmethod
    def load(cls, fh: IO[str]) -> "Evidence":
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty evidence stream")
        head = json.loads(lines[0])
        if head.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported evidence schema_version {head.get('schema_version')!r}")
        records = []
        for ln in lines[1:]:
            d = json.loads(ln)
            records.append(QueryRecord(d["index"], ModelInput.from_dict(d["input"]), d["output"],
                                       d["strategy_tag"], d["seed"], d["replayable"]))
        ev = cls(tuple(records), head["provenance"], head["truncated"], tuple(head["anomalies"]))
        if ev.N != head["N"]:
            raise ValueError(f"header declares N={head['N']} but {ev.N} records follow")
        return ev

    @classmethod
    def from_pairs(cls, inputs: Sequence[ModelInput], outputs: Sequence[Any], tag: str,
                   provenance: Mapping[str, Any] | None = None) -> "Evidence":
        """Wrap data gathered outside :func:`collect` (e.g. historical tables)."""
        recs = tuple(QueryRecord(i, x, y, tag, 0, False) for i, (x, y) in enumerate(zip(inputs, outputs)))
        prov = {"strategy": {"kind": "external", "tag": tag}}
        prov.update(provenance or {})
        return cls(recs, prov)


# -- drawing and collecting ------------------------------------------------------


def draw_inputs(strategy: SamplingStrategy, n: int, seed: int) -> list[ModelInput]:
    """Draw ``n`` inputs for a non-adaptive plan (or a cold-start adaptive batch)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if isinstance(strategy, Design):
        if n != len(strategy.inputs):
            raise ValueError(f"the design has {len(strategy.inputs)} inputs, not the requested n={n}")
        return list(strategy.inputs)
    gen = rng(seed, "draw")
    if isinstance(strategy, IID):
        return strategy.dist.sample(gen, n)
    if isinstance(strategy, Stratified):
        declared = strategy.dist.declared_groups
        for g, q in strategy.quotas.items():
            if g not in declared:
                raise SchemaError(f"quota group {g!r} is not in the declared group set {list(declared)}",
                                  field=str(g))
        if sum(strategy.quotas.values()) != n:
            raise ValueError(f"quotas sum to {sum(strategy.quotas.values())}, not the requested n={n}")
        out: list[ModelInput] = []
        for g, q in strategy.quotas.items():
            out.extend(strategy.dist.sample(gen, q, group=g))
        return out
    batch = adaptive_next(Evidence(), strategy, seed)
    while len(batch) < n:
        batch.extend(adaptive_next(Evidence(), strategy, derive_seed(seed, "cold", len(batch))))
    return batch[:n]


def _box(strategy: AdaptivePairSearch) -> tuple[np.ndarray, np.ndarray]:
    feats = [strategy.dist.features[k] for k in strategy.numeric]
    return np.array([f.low for f in feats]), np.array([f.high for f in feats])


def _to_input(strategy: AdaptivePairSearch, v: np.ndarray) -> ModelInput:
    feats: dict[str, Any] = {}
    it = iter(v)
    for k, m in strategy.dist.features.items():
        feats[k] = float(next(it)) if isinstance(m, Uniform) else m.value
    return ModelInput(feats)


def _perturb(strategy: AdaptivePairSearch, gen: np.random.Generator, centers: np.ndarray) -> np.ndarray:
    lo, hi = _box(strategy)
    step = gen.normal(0.0, strategy.radius / 2.0, size=centers.shape)
    norm = input_distance(step, np.zeros_like(step), strategy.input_metric)
    scale = np.where(norm > strategy.radius, strategy.radius / np.maximum(norm, 1e-300), 1.0)
    return np.clip(centers + step * scale[:, None], lo, hi)


def _restart_pairs(strategy: AdaptivePairSearch, gen: np.random.Generator, pairs: int) -> np.ndarray:
    lo, hi = _box(strategy)
    base = gen.uniform(lo, hi, size=(pairs, len(lo)))
    partner = _perturb(strategy, gen, base)
    return np.stack([base, partner], axis=1).reshape(2 * pairs, len(lo))


def best_pair(evidence: Evidence, strategy: AdaptivePairSearch) -> tuple[int, int, float] | None:
    """Indices and quotient of the steepest nondegenerate logged pair."""
    if evidence.N < 2:
        return None
    names = strategy.numeric
    X = np.array([[float(r.input.features[k]) for k in names] for r in evidence.records]).reshape(evidence.N, -1)
    y = [r.output for r in evidence.records]
    i, j, D, d = pair_quotients(X, y, strategy.output_metric, strategy.input_metric)
    ok = d > 0
    if not ok.any():
        return None
    q = np.where(ok, D / np.where(ok, d, 1.0), -np.inf)
    k = int(np.argmax(q))
    return int(i[k]), int(j[k]), float(q[k])


def adaptive_next(evidence: Evidence, strategy: AdaptivePairSearch, seed: int) -> list[ModelInput]:
    """Propose the next batch from the evidence so far.

    The proposal is a function of ``(evidence, seed)`` only. With fewer than
    two informative records the whole batch is random restart pairs.
    """
    if not isinstance(strategy, AdaptivePairSearch):
        raise TypeError("adaptive_next needs an AdaptivePairSearch strategy")
    gen = rng(seed, "adaptive", evidence.N)
    best = best_pair(evidence, strategy)
    if best is None:
        pts = _restart_pairs(strategy, gen, strategy.batch_size // 2)
        return [_to_input(strategy, v) for v in pts]
    a, b, _ = best
    names = strategy.numeric
    ends = np.array([[float(evidence.records[k].input.features[n]) for n in names] for k in (a, b)])
    n_local = strategy.batch_size - 2 * strategy.restarts
    centers = ends[np.arange(n_local) % 2]
    local = _perturb(strategy, gen, centers)
    pts = local if strategy.restarts == 0 else np.vstack([local, _restart_pairs(strategy, gen, strategy.restarts)])
    return [_to_input(strategy, v) for v in pts]


def _run_queries(model: BlackBoxModel, inputs: Sequence[ModelInput], seeds: Sequence[int],
                 workers: int, chunk: int = 256) -> tuple[list[Any], dict[int, Any]]:
    spans = [(s, min(s + chunk, len(inputs))) for s in range(0, len(inputs), chunk)]

    def run(span):
        lo, hi = span
        try:
            return model.query_batch(inputs[lo:hi], seeds[lo:hi]), {}
        except NonConformantOutput as exc:
            return exc.outputs, {lo + k: v for k, v in exc.bad.items()}

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(s) for s in spans]
    outputs: list[Any] = []
    bad: dict[int, Any] = {}
    for outs, b in parts:
        outputs.extend(outs)
        bad.update(b)
    return outputs, bad


def _commit(model, strategy, inputs, outputs, bad, seeds, start_index, start_query):
    records, anomalies = [], []
    idx = start_index
    for k, (x, y, s) in enumerate(zip(inputs, outputs, seeds)):
        if k in bad:
            anomalies.append({"query": start_query + k, "input": x.to_dict(), "raw_output": bad[k],
                              "kind": "non-conformant-output"})
            continue
        records.append(QueryRecord(idx, x, y, strategy.tag, int(s), model.replayable))
        idx += 1
    return records, anomalies


def collect(model: BlackBoxModel, strategy: SamplingStrategy, n: int, budget: QueryBudget,
            seed: int, workers: int = 1) -> Evidence:
    """Query ``model`` on ``n`` inputs chosen by ``strategy``.

    If the budget runs out first, the evidence gathered so far is returned
    with ``truncated=True``. Outputs outside the model's declared output
    space are logged as anomalies rather than records.
    """
    allowed = min(n, budget.affordable(model.cost_per_query))
    provenance = {
        "audit_seed": seed,
        "model": model.descriptor(),
        "strategy": strategy.to_dict(),
        "requested_n": n,
        "budget": {"max_queries": budget.max_queries, "spent_before": budget.spent},
        "replayable": bool(model.replayable),
        "exclusions": [],
    }
    records: list[QueryRecord] = []
    anomalies: list[dict] = []
    if isinstance(strategy, AdaptivePairSearch):
        ev = Evidence()
        done = 0
        while done < allowed:
            batch = adaptive_next(ev, strategy, seed)[: allowed - done]
            seeds = [int(s) for s in derive_seeds(seed, "query", np.arange(done, done + len(batch)))]
            outs, bad = _run_queries(model, batch, seeds, workers)
            recs, anoms = _commit(model, strategy, batch, outs, bad, seeds, ev.N, done)
            ev = ev.append(recs, anoms)
            done += len(batch)
        records, anomalies = list(ev.records), list(ev.anomalies)
    else:
        inputs = draw_inputs(strategy, n, seed)[:allowed]
        seeds = [int(s) for s in derive_seeds(seed, "query", np.arange(len(inputs)))]
        outs, bad = _run_queries(model, inputs, seeds, workers)
        records, anomalies = _commit(model, strategy, inputs, outs, bad, seeds, 0, 0)
    budget.charge(allowed, model.cost_per_query)
    provenance["budget"]["spent_after"] = budget.spent
    return Evidence(tuple(records), provenance, allowed < n, tuple(anomalies))
