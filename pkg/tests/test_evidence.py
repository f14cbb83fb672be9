import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bbaudit.blackbox import GroupThreshold, ModelInput, ScoreFunction, SyntheticModelSpec, make_synthetic
from bbaudit.errors import BudgetExceeded, SchemaError
from bbaudit.evidence import (
    IID,
    AdaptivePairSearch,
    Categorical,
    Design,
    Evidence,
    PointMass,
    ProductDistribution,
    QueryBudget,
    QueryRecord,
    Stratified,
    Uniform,
    adaptive_next,
    best_pair,
    collect,
    draw_inputs,
)
from bbaudit.seeding import derive_seed, rng

GROUPS = ProductDistribution({}, Categorical({"G1": 0.5, "G2": 0.5}))
UNIT = ProductDistribution({"x": Uniform(0.0, 1.0)})


def _parity_model(p1=0.5, p2=0.5):
    return make_synthetic(SyntheticModelSpec(GroupThreshold(p1, p2, 0.1)))


def _steep_model(slope=2.0):
    return make_synthetic(SyntheticModelSpec(ScoreFunction.linear(slope, lipschitz=1.0)))


class TestDraw:
    def test_stratified_quotas(self):
        xs = draw_inputs(Stratified(GROUPS, {"G1": 30, "G2": 20}), 50, seed=1)
        assert [x.group for x in xs].count("G1") == 30
        assert [x.group for x in xs].count("G2") == 20

    def test_point_mass(self):
        dist = ProductDistribution({"x": PointMass(0.25)})
        assert {x.features["x"] for x in draw_inputs(IID(dist), 40, seed=3)} == {0.25}

    def test_iid_frequency(self):
        dist = ProductDistribution({"b": Categorical({0: 0.5, 1: 0.5})})
        n = 20_000
        share = np.mean([x.features["b"] for x in draw_inputs(IID(dist), n, seed=9)])
        assert abs(share - 0.5) < 3 * np.sqrt(0.25 / n)

    def test_quota_for_undeclared_group(self):
        with pytest.raises(SchemaError) as exc:
            draw_inputs(Stratified(GROUPS, {"G1": 5, "G3": 5}), 10, seed=0)
        assert exc.value.field == "G3"

    def test_quotas_must_sum_to_n(self):
        with pytest.raises(ValueError):
            draw_inputs(Stratified(GROUPS, {"G1": 5, "G2": 5}), 11, seed=0)

    def test_seed_determines_draws(self):
        a = draw_inputs(IID(UNIT), 25, seed=4)
        assert a == draw_inputs(IID(UNIT), 25, seed=4)
        assert a != draw_inputs(IID(UNIT), 25, seed=5)


class TestCollect:
    def test_zero_queries(self):
        ev = collect(_parity_model(), IID(GROUPS), 0, QueryBudget(10), seed=0)
        assert ev.N == 0 and not ev.truncated

    def test_budget_truncates(self):
        budget = QueryBudget(5)
        ev = collect(_parity_model(), IID(GROUPS), 10, budget, seed=0)
        assert ev.truncated and ev.N == 5
        assert budget.spent == 5

    def test_query_cost_respected(self):
        model = _parity_model()
        model.cost_per_query = 2.5
        budget = QueryBudget(11)
        ev = collect(model, IID(GROUPS), 10, budget, seed=0)
        assert ev.N == 4 and budget.spent == 10

    def test_adaptive_finds_steep_pair(self):
        ev = collect(_steep_model(), AdaptivePairSearch(UNIT, radius=0.05), 200, QueryBudget(200), seed=11)
        assert best_pair(ev, AdaptivePairSearch(UNIT, radius=0.05))[2] >= 1.9

    @pytest.mark.parametrize("strategy", [IID(GROUPS), Stratified(GROUPS, {"G1": 300, "G2": 300})])
    def test_worker_count_does_not_matter(self, strategy):
        runs = [collect(_parity_model(0.6, 0.4), strategy, 600, QueryBudget(600), seed=21, workers=w).dumps()
                for w in (1, 4)]
        assert runs[0] == runs[1]

    def test_adaptive_worker_count_does_not_matter(self):
        s = AdaptivePairSearch(UNIT, radius=0.1, batch_size=16)
        runs = [collect(_steep_model(), s, 64, QueryBudget(64), seed=2, workers=w).dumps() for w in (1, 3)]
        assert runs[0] == runs[1]

    def test_records_resolve_to_strategy(self):
        ev = collect(_parity_model(), Stratified(GROUPS, {"G1": 3, "G2": 3}), 6, QueryBudget(6), seed=1)
        assert {r.strategy_tag for r in ev.records} == {ev.provenance["strategy"]["tag"]}
        assert ev.provenance["audit_seed"] == 1
        assert [r.index for r in ev.records] == list(range(6))

    def test_records_replay(self):
        model = _parity_model(0.3, 0.6)
        ev = collect(model, IID(GROUPS), 50, QueryBudget(50), seed=8)
        assert all(model.query(r.input, r.seed) == r.output for r in ev.records)

    def test_design_queries_in_order(self):
        xs = tuple(ModelInput({"x": v}) for v in (0.1, 0.9, 0.5))
        ev = collect(_steep_model(0.5), Design(xs), 3, QueryBudget(3), seed=0)
        assert [r.input for r in ev.records] == list(xs)


@given(budget=st.integers(1, 60), n=st.integers(0, 60), cost=st.sampled_from([0.5, 1.0, 3.0]))
def test_budget_is_never_exceeded(budget, n, cost):
    model = _parity_model()
    model.cost_per_query = cost
    b = QueryBudget(budget)
    ev = collect(model, IID(GROUPS), n, b, seed=n)
    assert b.spent <= budget
    assert ev.N * cost <= budget
    assert ev.truncated == (ev.N < n)


def test_budget_charge_beyond_remaining():
    b = QueryBudget(3)
    with pytest.raises(BudgetExceeded):
        b.charge(4, 1.0)


class TestAdaptiveNext:
    def test_cold_start_is_random(self):
        s = AdaptivePairSearch(UNIT, radius=0.05)
        batch = adaptive_next(Evidence(), s, seed=1)
        assert len(batch) == s.batch_size
        assert batch == adaptive_next(Evidence(), s, seed=1)
        assert batch != adaptive_next(Evidence(), s, seed=2)

    def test_concentrates_near_best_pair(self):
        s = AdaptivePairSearch(UNIT, radius=0.05, batch_size=16)
        xs = [0.1, 0.2, 0.6, 0.7, 0.3, 0.9]
        ys = [0.1, 0.2, 0.6, 0.78, 0.3, 0.9]  # (0.6, 0.7) has quotient 1.8, every other pair at most 1
        ev = Evidence.from_pairs([ModelInput({"x": x}) for x in xs], ys, "seeded")
        assert best_pair(ev, s)[:2] == (2, 3)
        for seed in range(20):
            batch = adaptive_next(ev, s, seed)
            near = [x for x in batch if min(abs(x.features["x"] - 0.6), abs(x.features["x"] - 0.7)) <= 0.05]
            assert len(near) >= len(batch) / 2

    def test_proposal_depends_only_on_evidence_and_seed(self):
        s = AdaptivePairSearch(UNIT, radius=0.05)
        ev = collect(_steep_model(), s, 40, QueryBudget(40), seed=3)
        assert adaptive_next(ev, s, 9) == adaptive_next(Evidence.load(io.StringIO(ev.dumps())), s, 9)

    def test_beats_random_pairs(self):
        # a score with one steep stretch of width 0.04; elsewhere the slope is 0.2
        kind = ScoreFunction((0.0, 0.48, 0.52, 1.0), (0.0, 0.096, 0.216, 0.312), lipschitz=1.0)
        model = make_synthetic(SyntheticModelSpec(kind))
        s = AdaptivePairSearch(UNIT, radius=0.05)
        wins = 0
        for t in range(100):
            seed = derive_seed(77, "run", t)
            adaptive = best_pair(collect(model, s, 200, QueryBudget(200), seed), s)[2]
            gen = rng(seed, "random-pairs")
            a, b = gen.uniform(0, 1, 100), gen.uniform(0, 1, 100)
            fa = kind.evaluate(a)
            fb = kind.evaluate(b)
            random_best = float(np.max(np.abs(fa - fb) / np.abs(a - b)))
            wins += adaptive >= random_best
        assert wins >= 90


class TestSerialization:
    def test_round_trip(self):
        ev = collect(_parity_model(0.7, 0.2), Stratified(GROUPS, {"G1": 5, "G2": 4}), 9, QueryBudget(6), seed=3)
        text = ev.dumps()
        back = Evidence.load(io.StringIO(text))
        assert back == ev
        assert back.dumps() == text

    def test_header_first(self):
        ev = collect(_parity_model(), IID(GROUPS), 3, QueryBudget(3), seed=0)
        head = json.loads(ev.dumps().splitlines()[0])
        assert head["schema_version"] == 1 and head["N"] == 3

    def test_unknown_schema_version(self):
        with pytest.raises(ValueError, match="schema_version"):
            Evidence.load(io.StringIO(json.dumps({"schema_version": 99}) + "\n"))

    def test_count_mismatch(self):
        ev = collect(_parity_model(), IID(GROUPS), 3, QueryBudget(3), seed=0)
        lines = ev.dumps().splitlines()
        with pytest.raises(ValueError, match="N=3"):
            Evidence.load(io.StringIO("\n".join(lines[:-1])))

    def test_indices_contiguous(self):
        rec = QueryRecord(1, ModelInput({}, "G1"), 0, "t", 0)
        with pytest.raises(ValueError):
            Evidence((rec,))

    def test_append_only(self):
        ev = Evidence()
        grown = ev.append([QueryRecord(0, ModelInput({}, "G1"), 1, "t", 0)])
        assert ev.N == 0 and grown.N == 1
