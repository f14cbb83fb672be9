"""Bias audit of historical (or disclosed test) data, and its public summary."""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from ..blackbox import BlackBoxModel, ModelInput
from ..criteria import ImpactMetrics, MetricRow, MetricTable, StatisticalParity, impact_metrics
from ..errors import ConfigError, InsufficientEvidence, MethodNotApplicable
from ..evidence import Categorical, Evidence, ProductDistribution
from ..seeding import derive_seed
from ..testing import AuditSpec, ModelAssumptions, adjust_multiplicity, bootstrap_ci, run_audit
from .config import AXES, LL144Config
from .records import ExclusionEntry, HistoricalRecord, IngestReport, apply_exclusions, observed_levels
from .testdata import generate_test_data, insufficient_cells

SUMMARY_SCHEMA_VERSION = 1
INTERSECTION = " / ".join(AXES)
INSUFFICIENT = "insufficient data"
MISSING_CATEGORY = "(missing job_category)"
RATES = (("selection", "selection_rate", "n_selection"), ("scoring", "scoring_rate", "n_scored"))


def _members(records: Sequence[HistoricalRecord], levels: Mapping[str, Sequence[str]]) -> dict:
    """(axis, category label) -> records in that cell, for every declared cell."""
    out: dict[tuple[str, str], list[HistoricalRecord]] = {}
    for axis in AXES:
        for lv in levels[axis]:
            out[(axis, lv)] = [r for r in records if getattr(r, axis) == lv]
    for combo in itertools.product(*(levels[a] for a in AXES)):
        out[(INTERSECTION, " / ".join(combo))] = [
            r for r in records if (r.race_ethnicity, r.sex) == combo
        ]
    return out


def _table(records: Sequence[HistoricalRecord], levels: Mapping[str, Sequence[str]]):
    crit = ImpactMetrics(AXES, levels=levels)
    if records:
        return impact_metrics([r.as_row() for r in records], crit)
    rows = [MetricRow(axis, lv) for axis in AXES for lv in levels[axis]]
    rows += [MetricRow(INTERSECTION, " / ".join(c)) for c in itertools.product(*(levels[a] for a in AXES))]
    return MetricTable(rows, None, 0)


def _indicator(records: Sequence[HistoricalRecord], rate: str, pooled: float | None) -> list[int]:
    if rate == "selection":
        return [r.selected for r in records if r.selected is not None]
    return [int(r.score > pooled) for r in records if r.score is not None]


def _interval(values: list[int], cfg: LL144Config, seed: int) -> dict:
    ci = bootstrap_ci(np.asarray(values, dtype=float), lambda b: b.mean(axis=1), cfg.bootstrap_resamples,
                      cfg.significance, seed, vectorized=True)
    return {"low": ci.low, "high": ci.high, "level": ci.level, "resamples": ci.resamples}


def _pair_audit(ref: str, ref_y: list[int], other: str, other_y: list[int], cfg: LL144Config,
                provenance: Mapping[str, Any], seed: int) -> dict:
    inputs = [ModelInput({}, ref)] * len(ref_y) + [ModelInput({}, other)] * len(other_y)
    ev = Evidence.from_pairs(inputs, ref_y + other_y, provenance["tag"], provenance)
    n = len(inputs)
    dist = ProductDistribution({}, Categorical({ref: len(ref_y) / n, other: len(other_y) / n}))
    assumptions = ModelAssumptions(dist, "recorded decisions of the audited tool",
                                   ("applicants independent", "outcomes as recorded"))
    spec = AuditSpec(StatisticalParity(ref, other, cfg.eta), cfg.presumption, cfg.significance, cfg.method,
                     assumptions, cfg.bootstrap_resamples)
    try:
        outcome = run_audit(ev, spec, seed)
    except (InsufficientEvidence, MethodNotApplicable) as exc:
        return {"status": "withheld", "withheld_reason": str(exc),
                "recommended_n": getattr(exc, "recommended_n", None), "p_value": None, "decision": None,
                "outcome": None}
    return {"status": "completed", "withheld_reason": None, "recommended_n": None, "p_value": outcome.p_value,
            "decision": outcome.decision.value, "outcome": outcome.to_dict()}


def analyse(records: Sequence[HistoricalRecord], cfg: LL144Config, levels: Mapping[str, Sequence[str]],
            job_category: str, source: str, model: Mapping[str, Any] | None = None) -> dict:
    """Metric tables, pairwise parity tests and rate intervals for one job category."""
    table = _table(records, levels)
    members = _members(records, levels)
    pooled = table.pooled_median
    tables: dict[str, list[dict]] = {}
    for row in table.rows:
        d = asdict(row)
        cell = members.get((row.axis, row.category), [])
        for rate, attr, count in RATES:
            ok = getattr(row, count) >= cfg.min_cell_count and getattr(row, attr) is not None
            d[f"{rate}_status"] = "ok" if ok else INSUFFICIENT
            d[f"{rate}_rate_ci"] = (
                _interval(_indicator(cell, rate, pooled), cfg,
                          derive_seed(cfg.seed, "ll144", "ci", source, job_category, row.axis, row.category, rate))
                if ok else None
            )
        tables.setdefault(row.axis, []).append(d)

    provenance = {"tag": source, "model": model, "replayable": False, "exclusions": [],
                  "strategy": {"kind": "external", "tag": source}}
    tests, not_run = [], []
    for axis, rows in tables.items():
        for rate, attr, _ in RATES:
            ok = [r for r in rows if r[f"{rate}_status"] == "ok"]
            if len(ok) < 2:
                not_run.append({"axis": axis, "rate": rate,
                                "reason": "fewer than two categories with sufficient data"})
                continue
            ref = max(ok, key=lambda r: r[attr])
            ref_y = _indicator(members[(axis, ref["category"])], rate, pooled)
            for other in ok:
                if other is ref:
                    continue
                y = _indicator(members[(axis, other["category"])], rate, pooled)
                seed = derive_seed(cfg.seed, "ll144", "test", source, job_category, axis, other["category"], rate)
                entry = {"axis": axis, "rate": rate, "reference": ref["category"], "category": other["category"]}
                entry.update(_pair_audit(ref["category"], ref_y, other["category"], y, cfg, provenance, seed))
                tests.append(entry)

    done = [t for t in tests if t["p_value"] is not None]
    multiplicity = None
    if done:
        adj = adjust_multiplicity([t["p_value"] for t in done], cfg.multiplicity, cfg.significance)
        multiplicity = {"method": adj.method.value, "level": adj.level, "family_size": len(done),
                        "family": "all completed tests for this job category and data source"}
        for t, p, rej in zip(done, adj.adjusted, adj.reject):
            t["adjusted_p_value"] = p
            t["decision_after_adjustment"] = "RejectNull" if rej else "FailToReject"
    for t in tests:
        t.setdefault("adjusted_p_value", None)
        t.setdefault("decision_after_adjustment", None)
    return {
        "source": source,
        "n_records": len(records),
        "pooled_median_score": pooled,
        "tables": tables,
        "tests": tests,
        "comparisons_not_run": not_run,
        "multiplicity": multiplicity,
    }


def _rounded(obj: Any, places: int = 12) -> Any:
    # keeps the document byte-stable against last-bit floating-point noise
    if isinstance(obj, float):
        return round(obj, places)
    if isinstance(obj, dict):
        return {k: _rounded(v, places) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v, places) for v in obj]
    return obj


@dataclass(frozen=True)
class BiasAuditSummary:
    document: Mapping[str, Any]

    def to_dict(self) -> dict:
        return json.loads(self.to_json())

    def to_json(self) -> str:
        return json.dumps(self.document, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_markdown(self) -> str:
        return render_markdown(self.document)

    @property
    def test_data_used(self) -> bool:
        return self.document["test_data"] is not None


def _provenance(records, ledger: Sequence[ExclusionEntry], usable, report: IngestReport | None) -> dict:
    quarantined = list(report.quarantined) if report else []
    cats = sorted({r.job_category for r in records} | {q["job_category"] or MISSING_CATEGORY for q in quarantined})
    per = {}
    for c in cats:
        q = sum(1 for x in quarantined if (x["job_category"] or MISSING_CATEGORY) == c)
        e = sum(1 for x in ledger if x.job_category == c)
        u = sum(1 for x in usable if x.job_category == c)
        per[c] = {"ingested": q + e + u, "quarantined": q, "excluded": e, "used": u}
    totals = {k: sum(v[k] for v in per.values()) for k in ("ingested", "quarantined", "excluded", "used")}
    return {
        **totals,
        "input_sha256": report.sha256 if report else None,
        "quarantine_reasons": report.reasons if report else {},
        "quarantined_rows": quarantined,
        "per_job_category": per,
    }


def _narrative(ledger: Sequence[ExclusionEntry], total: int) -> str:
    if not ledger:
        return "No records were excluded."
    by_reason: dict[str, int] = {}
    for e in ledger:
        by_reason[e.reason] = by_reason.get(e.reason, 0) + 1
    parts = ", ".join(f"{n} for {r}" for r, n in sorted(by_reason.items()))
    return (f"{len(ledger)} of {total} accepted records were excluded from every demographic cell because their "
            f"race/ethnicity or sex was imputed, inferred, of unknown source, or unknown ({parts}). "
            "Excluded records are counted in totals only.")


def _limitations(cfg: LL144Config, scope: str) -> list[str]:
    return [
        "This summary reports metrics and test outcomes. It is not a legal determination of compliance.",
        f"Scope: the audit covers {scope}. Whether that is the tool alone or the full hiring pipeline is not "
        "resolved here.",
        "Records whose demographics were imputed, inferred, of unknown source, or UNKNOWN are excluded from "
        "every demographic cell and counted in totals only.",
        f"A cell with fewer than {cfg.min_cell_count} records carrying the relevant outcome is marked "
        f"'{INSUFFICIENT}' and is neither tested nor given an interval.",
        "Scoring rate is the share of a category scoring strictly above the pooled median score of its job "
        "category; scoring-rate tests condition on that median.",
        f"Each category is compared with the highest-rate sufficient category on the same axis; the parity "
        f"threshold eta = {cfg.eta} bounds the rate gap. p-values are adjusted with {cfg.multiplicity.value} "
        "within each job category and data source.",
        "Under either presumption, failing to reject is not evidence for the presumption.",
    ]


def run_bias_audit(records: Sequence[HistoricalRecord], config: LL144Config, *,
                   report: IngestReport | None = None, model: BlackBoxModel | None = None,
                   workers: int = 1) -> BiasAuditSummary:
    """Audit ingested records per job category and assemble the public summary.

    Exclusions are applied here. Cells below ``config.min_cell_count`` are
    marked insufficient; if the configuration allows it and a model is
    given, disclosed test data is generated for the job category.
    """
    usable, ledger = apply_exclusions(records)
    can_generate = config.allow_test_data and model is not None
    if not usable and not can_generate:
        raise InsufficientEvidence("no usable records after quarantine and exclusions")
    seen = observed_levels(usable)
    levels = {a: tuple(config.levels.get(a) or seen[a]) for a in AXES}
    if any(not levels[a] for a in AXES):
        raise ConfigError("no demographic levels observed or declared", field="levels")
    descriptor = model.descriptor() if model is not None else None
    scope = (f"the model object {json.dumps(descriptor, sort_keys=True)}" if descriptor
             else "the recorded decisions in the supplied historical data")
    categories = sorted({r.job_category for r in records})

    def one(cat: str) -> tuple[dict, dict | None]:
        hist = [r for r in usable if r.job_category == cat]
        section = {"job_category": cat,
                   "historical": analyse(hist, config, levels, cat, "historical data", descriptor)}
        trigger = insufficient_cells(hist, levels, config.min_cell_count)
        gen = None
        if not trigger:
            section["test_data_status"] = "not needed: historical data meets the per-cell minimum"
        elif not config.allow_test_data:
            section["test_data_status"] = "not generated: test data disallowed by configuration"
        elif model is None:
            section["test_data_status"] = "not generated: no model configured"
        else:
            n = config.test_data_n or config.min_cell_count * len(levels[AXES[0]]) * len(levels[AXES[1]])
            seed = derive_seed(config.seed, "ll144", "test-data", cat)
            recs, _, disclosure = generate_test_data(model, config, n, seed, levels=levels, historical=hist,
                                                     job_category=cat)
            section["test_data_status"] = "generated: see the test data section"
            section["test_data"] = analyse(recs, config, levels, cat, "test data", descriptor)
            gen = disclosure.to_dict()
        section.setdefault("test_data", None)
        return section, gen

    if workers > 1 and len(categories) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, categories))
    else:
        results = [one(c) for c in categories]
    generated = [g for _, g in results if g is not None]
    accepted = len(records)
    doc = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "audit_date": config.audit_date,
        "scope": {"audited_object": descriptor, "description": scope},
        "configuration": config.to_dict(),
        "configuration_sha256": config.digest(),
        "levels": {a: list(levels[a]) for a in AXES},
        "data_provenance": _provenance(records, ledger, usable, report),
        "exclusions": {"count": len(ledger), "ledger": [e.to_dict() for e in ledger],
                       "narrative": _narrative(ledger, accepted)},
        "job_categories": [s for s, _ in results],
        "test_data": None if not generated else {
            "reason": "usable historical data left at least one demographic cell below the per-cell minimum",
            "generations": generated,
        },
        "limitations": _limitations(config, scope),
    }
    return BiasAuditSummary(_rounded(doc))


# -- markdown -------------------------------------------------------------------


def _f(v: Any, digits: int = 4) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def _ci(ci: Mapping | None) -> str:
    return "n/a" if ci is None else f"[{ci['low']:.4f}, {ci['high']:.4f}]"


def _rate_cell(row: Mapping, rate: str) -> str:
    text = _f(row[f"{rate}_rate"])
    return text if row[f"{rate}_status"] == "ok" else f"{text} ({INSUFFICIENT})"


def _analysis_md(a: Mapping, level: str) -> list[str]:
    out = [f"{level} {a['source'].capitalize()}", "",
           f"Usable records: {a['n_records']}. Pooled median score: {_f(a['pooled_median_score'])}.", ""]
    for axis, rows in a["tables"].items():
        out += [f"{level}# {axis}", "",
                "| category | n | selected / with selection | selection rate | interval | impact ratio "
                "| scored | median score | scoring rate | interval | impact ratio |",
                "|---|---|---|---|---|---|---|---|---|---|---|"]
        for r in rows:
            out.append(
                f"| {r['category']} | {r['n']} | {r['n_selected']} / {r['n_selection']} "
                f"| {_rate_cell(r, 'selection')} | {_ci(r['selection_rate_ci'])} | {_f(r['impact_ratio_selection'])} "
                f"| {r['n_scored']} | {_f(r['median_score'])} | {_rate_cell(r, 'scoring')} "
                f"| {_ci(r['scoring_rate_ci'])} | {_f(r['impact_ratio_scoring'])} |"
            )
        out.append("")
    out += [f"{level}# Tests", ""]
    if a["tests"]:
        out += ["| axis | rate | reference | category | p-value | adjusted p-value | decision | note |",
                "|---|---|---|---|---|---|---|---|"]
        for t in a["tests"]:
            note = t["outcome"]["statement"] if t["outcome"] else t["withheld_reason"]
            out.append(f"| {t['axis']} | {t['rate']} | {t['reference']} | {t['category']} | {_f(t['p_value'])} "
                       f"| {_f(t['adjusted_p_value'])} | {t['decision_after_adjustment'] or 'withheld'} | {note} |")
        out.append("")
    for n in a["comparisons_not_run"]:
        out.append(f"- No {n['rate']} comparison on {n['axis']}: {n['reason']}.")
    if a["comparisons_not_run"]:
        out.append("")
    return out


def render_markdown(doc: Mapping[str, Any]) -> str:
    cfg = doc["configuration"]
    prov = doc["data_provenance"]
    out = [
        "# Bias audit summary", "",
        f"- Audit date: {doc['audit_date'] or 'not stated'}",
        f"- Scope: {doc['scope']['description']}",
        f"- Presumption: {cfg['presumption']}; significance {cfg['significance']}; method {cfg['method']}",
        f"- Parity threshold eta: {cfg['eta']}; per-cell minimum: {cfg['min_cell_count']}; "
        f"multiplicity: {cfg['multiplicity']}; bootstrap resamples: {cfg['bootstrap_resamples']}; "
        f"seed: {cfg['seed']}",
        f"- Configuration SHA-256: {doc['configuration_sha256']}",
        "",
        "## Data provenance", "",
        f"Input SHA-256: {prov['input_sha256'] or 'n/a'}", "",
        "| job category | ingested | quarantined | excluded | used |",
        "|---|---|---|---|---|",
    ]
    for cat, c in prov["per_job_category"].items():
        out.append(f"| {cat} | {c['ingested']} | {c['quarantined']} | {c['excluded']} | {c['used']} |")
    out.append(f"| total | {prov['ingested']} | {prov['quarantined']} | {prov['excluded']} | {prov['used']} |")
    out.append("")
    if prov["quarantined_rows"]:
        out += ["Quarantined rows:", ""]
        out += [f"- row {q['row']} ({q['applicant_id'] or 'no id'}): {q['reason']}" for q in prov["quarantined_rows"]]
        out.append("")
    ex = doc["exclusions"]
    out += ["## Exclusions", "", ex["narrative"], ""]
    if ex["ledger"]:
        out += ["| applicant id | job category | row | reason |", "|---|---|---|---|"]
        out += [f"| {e['applicant_id']} | {e['job_category']} | {e['row']} | {e['reason']} |" for e in ex["ledger"]]
        out.append("")
    for sec in doc["job_categories"]:
        out += [f"## Job category: {sec['job_category']}", ""]
        out += _analysis_md(sec["historical"], "###")
        out += [f"Test data: {sec['test_data_status']}.", ""]
        if sec["test_data"] is not None:
            out += _analysis_md(sec["test_data"], "###")
    if doc["test_data"] is not None:
        out += ["## Test data", "", f"Why historical data was not sufficient: {doc['test_data']['reason']}.", ""]
        for g in doc["test_data"]["generations"]:
            cells = ", ".join(f"{c['race_ethnicity']} / {c['sex']}: {c['n']}" for c in g["per_cell"])
            short = ", ".join(f"{c['race_ethnicity']} / {c['sex']} ({c['n']})" for c in g["trigger"])
            out += [f"- Job category {g['job_category']}: {g['method']}. n = {g['n']}, seed = {g['seed']}, "
                    f"model {json.dumps(g['model'], sort_keys=True)}. Cells: {cells}. "
                    f"Triggered by: {short}."]
        out.append("")
    out += ["## Limitations", ""] + [f"- {s}" for s in doc["limitations"]]
    return "\n".join(out) + "\n"
