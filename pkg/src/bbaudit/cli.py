"""Command-line front end: ``bbaudit {run,power,ll144,simulate}``.

Exit codes report whether an audit ran, never what it decided:
0 the command completed (whatever the decision), 1 the audit was refused
for lack of evidence or an inapplicable method, 2 configuration, schema or
transport error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
from typing import Any, Callable, Sequence

from .blackbox import GroupThreshold, LossPlant, ModelInput, ScoreFunction, SyntheticModelSpec, make_synthetic
from .config import (
    ConfigFile,
    build_criterion,
    build_distribution,
    build_model,
    build_sampling,
    build_spec,
    load_config,
    parity_distribution,
)
from .criteria import METRIC_COLUMNS, IndividualFairness, MaxLoss, StatisticalParity
from .errors import (
    AuditError,
    BudgetExceeded,
    ConfigError,
    EstimationError,
    InsufficientEvidence,
    MethodNotApplicable,
    ProtocolError,
    SchemaError,
    TransportError,
)
from .evidence import AdaptivePairSearch, Design, ProductDistribution, QueryBudget, Uniform, collect
from .ll144 import LL144Config, ingest, run_bias_audit
from .seeding import derive_seed
from .testing import (
    AuditSpec,
    Decision,
    Method,
    ModelAssumptions,
    Presumption,
    boundary_z_power,
    estimate_operating_characteristics,
    run_audit,
)
from .testing.parity import ENUMERATION_BOUND

EXIT_OK, EXIT_REFUSED, EXIT_ERROR = 0, 1, 2
REPORT_SCHEMA_VERSION = 1
REFUSALS = (InsufficientEvidence, MethodNotApplicable, BudgetExceeded, EstimationError)
ERRORS = (ConfigError, SchemaError, TransportError, ProtocolError)


# -- output ------------------------------------------------------------------------


def write_atomic(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def _csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if r.get(k) is None else r[k] for k in columns})
    return buf.getvalue()


def _md_table(rows: Sequence[dict], columns: Sequence[str]) -> list[str]:
    def cell(v):
        if v is None:
            return "n/a"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    out = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    out += ["| " + " | ".join(cell(r.get(c)) for c in columns) + " |" for r in rows]
    return out


class Outputs:
    def __init__(self, out_dir: str, stem: str, formats: Sequence[str]):
        self.out_dir, self.stem, self.formats = out_dir, stem, tuple(formats)
        self.written: list[str] = []

    def emit(self, fmt: str, text: str, suffix: str) -> None:
        if fmt in self.formats:
            path = os.path.join(self.out_dir, self.stem + suffix)
            write_atomic(path, text)
            self.written.append(path)


# -- run ---------------------------------------------------------------------------


def _seed(args: argparse.Namespace, section: dict) -> int:
    seed = args.seed if args.seed is not None else section.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer", field="seed")
    return seed


def _run_markdown(doc: dict) -> str:
    out = ["# Audit report", "",
           f"- Status: {doc['status']}",
           f"- Seed: {doc['seed']}",
           f"- Configuration SHA-256: {doc['config_sha256']}", ""]
    if doc["status"] == "refused":
        r = doc["refusal"]
        out += ["## Refusal", "", r["message"], ""]
        if r.get("recommended_n") is not None:
            out += [f"Recommended sample size per group: {r['recommended_n']}.", ""]
    else:
        o = doc["outcome"]
        est = o["estimate"]
        out += ["## Outcome", "",
                f"- Decision: {o['decision']}",
                f"- p-value: {'n/a' if o['p_value'] is None else format(o['p_value'], '.6g')}",
                f"- Statement: {o['statement']}",
                f"- Estimated g: {est['g_hat']}" + (" (lower bound)" if est["lower_bound"] else ""), ""]
        if o["confidence_interval"]:
            ci = o["confidence_interval"]
            out += [f"- {ci['method']} interval for {ci['parameter']}: [{ci['low']:.6g}, {ci['high']:.6g}] "
                    f"at level {ci['level']}", ""]
        out += ["## Disclosure", ""]
        out += [f"- {k}: {json.dumps(v, sort_keys=True)}" for k, v in sorted(o["disclosure"].items())]
        out.append("")
    ev = doc["evidence"]
    if ev is not None:
        out += ["## Evidence", "", f"- N: {ev['N']}", f"- Truncated: {ev['truncated']}",
                f"- Anomalies: {ev['anomalies']}", ""]
    return "\n".join(out)


def cmd_run(args: argparse.Namespace, cfg: ConfigFile, err: Callable[[str], None]) -> int:
    audit = cfg.section("audit")
    seed = _seed(args, audit)
    model, _ = build_model(cfg.section("model"))
    crit = build_criterion(cfg.section("criterion"))
    if isinstance(crit, MaxLoss):
        # S is finite: evaluate it exhaustively instead of sampling
        sampling = cfg.section("sampling", required=False)
        strategy, n = Design(crit.S, "max-loss-set"), len(crit.S)
        budget = float(sampling.get("budget", n))
        dist = build_distribution(sampling.get("distribution"))
        if QueryBudget(budget).affordable(model.cost_per_query) < n:
            raise BudgetExceeded(f"exhaustive max-loss evaluation needs {n} queries; the budget admits fewer")
    else:
        strategy, n, budget = build_sampling(cfg.section("sampling"))
        dist = strategy.dist
    spec = build_spec(crit, audit, dist)
    out = cfg.section("output", required=False)
    outputs = Outputs(args.out_dir or out.get("dir", "."), out.get("name", "audit"), args.formats)
    if "csv" in args.formats:
        raise ConfigError("run reports are json or markdown", field="format")

    evidence = collect(model, strategy, n, QueryBudget(budget), seed, workers=args.workers)
    doc: dict[str, Any] = {"schema_version": REPORT_SCHEMA_VERSION, "command": "run",
                           "config_sha256": cfg.sha256, "seed": seed,
                           "evidence": {"N": evidence.N, "truncated": evidence.truncated,
                                        "anomalies": len(evidence.anomalies),
                                        "provenance": evidence.provenance}}
    code = EXIT_OK
    try:
        outcome = run_audit(evidence, spec, seed)
        doc.update(status="completed", outcome=outcome.to_dict(), refusal=None)
    except REFUSALS as exc:
        doc.update(status="refused", outcome=None,
                   refusal={"message": str(exc), "recommended_n": getattr(exc, "recommended_n", None)})
        err(f"audit refused: {exc}")
        code = EXIT_REFUSED
    outputs.emit("json", _dumps(doc), ".json")
    outputs.emit("json", evidence.dumps(), ".evidence.jsonl")
    outputs.emit("markdown", _run_markdown(doc), ".md")
    return code


# -- power -------------------------------------------------------------------------

POWER_COLUMNS = ("gap", "p_1", "p_2", "ground_truth_g", "null_true", "FPR_hat", "FPR_se", "TPR_hat", "TPR_se",
                 "rejections", "trials", "analytic_z_power")


def cmd_power(args: argparse.Namespace, cfg: ConfigFile, err: Callable[[str], None]) -> int:
    if cfg.section("model", required=False).get("source") == "remote":
        err("power mode refused: ground truth is unknowable for a remote model; use a synthetic grid")
        return EXIT_REFUSED
    power = cfg.section("power")
    audit = cfg.section("audit")
    seed = _seed(args, audit)
    groups = tuple(power.get("groups", ("G1", "G2")))
    eta = float(power.get("eta", 0.1))
    base = float(power.get("base_rate", 0.5))
    n = int(power.get("n_per_group", 50))
    trials = int(power.get("trials", 1000))
    gaps = [float(g) for g in power.get("gaps", (0.0, eta, eta + 0.2))]
    spec = build_spec(StatisticalParity(groups[0], groups[1], eta), audit, parity_distribution(groups))
    rows = []
    for i, gap in enumerate(gaps):
        p1, p2 = base + gap / 2, base - gap / 2
        if not (0 <= p2 and p1 <= 1):
            raise ConfigError(f"gap {gap} around base_rate {base} leaves [0, 1]", field="power.gaps")
        syn = SyntheticModelSpec(GroupThreshold(p1, p2, eta, groups))
        try:
            est = estimate_operating_characteristics(spec, syn, n, trials, derive_seed(seed, "power", i),
                                                     args.workers)
        except ValueError as exc:
            raise ConfigError(str(exc), field="power") from exc
        row = {"gap": gap, "p_1": p1, "p_2": p2, "ground_truth_g": syn.ground_truth_g, **est.to_dict(),
               "analytic_z_power": boundary_z_power(p1, p2, n, n, eta, spec.significance, spec.presumption)}
        rows.append(row)
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "command": "power", "config_sha256": cfg.sha256, "seed": seed,
           "presumption": spec.presumption.value, "significance": spec.significance, "method": spec.method.value,
           "eta": eta, "n_per_group": n, "rows": rows}
    out = cfg.section("output", required=False)
    outputs = Outputs(args.out_dir or out.get("dir", "."), out.get("name", "power"), args.formats)
    outputs.emit("json", _dumps(doc), ".json")
    outputs.emit("csv", _csv(rows, POWER_COLUMNS), ".csv")
    md = ["# Operating characteristics", "",
          f"- Presumption {doc['presumption']}, significance {doc['significance']}, method {doc['method']}",
          f"- eta {eta}, n per group {n}, seed {seed}",
          f"- Configuration SHA-256: {cfg.sha256}", ""] + _md_table(rows, POWER_COLUMNS)
    outputs.emit("markdown", "\n".join(md) + "\n", ".md")
    return EXIT_OK


# -- ll144 -------------------------------------------------------------------------

LL144_CSV_COLUMNS = ("job_category", "source", *METRIC_COLUMNS, "selection_status", "scoring_status")


def cmd_ll144(args: argparse.Namespace, cfg: ConfigFile, err: Callable[[str], None]) -> int:
    section = cfg.section("ll144")
    config = LL144Config.from_dict(section)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=_seed(args, section))
    model = None
    if "model" in cfg.data:
        model, _ = build_model(cfg.section("model"))
    try:
        records, report = ingest(args.data)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.data}: {exc.strerror}", field="data") from exc
    for q in report.quarantined:
        err(f"quarantined row {q['row']}: {q['reason']}")
    try:
        summary = run_bias_audit(records, config, report=report, model=model, workers=args.workers)
    except InsufficientEvidence as exc:
        err(f"no usable records: {exc}")
        return EXIT_REFUSED
    out = cfg.section("output", required=False)
    outputs = Outputs(args.out_dir or out.get("dir", "."), out.get("name", "ll144_summary"), args.formats)
    outputs.emit("json", summary.to_json(), ".json")
    outputs.emit("markdown", summary.to_markdown(), ".md")
    rows = []
    for sec in summary.document["job_categories"]:
        for source in ("historical", "test_data"):
            if sec[source] is None:
                continue
            for axis_rows in sec[source]["tables"].values():
                rows += [{"job_category": sec["job_category"], "source": sec[source]["source"], **r}
                         for r in axis_rows]
    outputs.emit("csv", _csv(rows, LL144_CSV_COLUMNS), ".csv")
    return EXIT_OK


# -- simulate ----------------------------------------------------------------------

SIM_COLUMNS = ("family", "scenario", "ground_truth_g", "null_true", "runs", "rejections", "rejection_rate",
               "rate_kind", "se")


def _sim_row(family, scenario, g, null_true, runs, hits) -> dict:
    rate = hits / runs
    return {"family": family, "scenario": scenario, "ground_truth_g": g, "null_true": null_true, "runs": runs,
            "rejections": hits, "rejection_rate": rate, "rate_kind": "FPR" if null_true else "TPR",
            "se": math.sqrt(rate * (1 - rate) / runs)}


def cmd_simulate(args: argparse.Namespace, cfg: ConfigFile | None, err: Callable[[str], None]) -> int:
    """Calibration suite over the synthetic zoo under the presumption of compliance."""
    sim = cfg.section("simulate", required=False) if cfg else {}
    audit = cfg.section("audit", required=False) if cfg else {}
    seed = _seed(args, audit)
    trials = int(sim.get("trials", 200))
    n = int(sim.get("n_per_group", 100))
    eta = float(sim.get("eta", 0.1))
    budget = int(sim.get("budget", 200))
    runs = int(sim.get("lipschitz_runs", 20))
    zeta = float(audit.get("significance", 0.05))
    pres = Presumption.COMPLIANCE
    method = Method.EXACT if n * n <= ENUMERATION_BOUND else Method.BOUNDARY_Z
    rows = []

    groups = ("G1", "G2")
    spec = AuditSpec(StatisticalParity(*groups, eta), pres, zeta, method,
                     ModelAssumptions(parity_distribution(groups), "synthetic GroupThreshold"))
    for i, gap in enumerate((0.0, eta, eta + 0.2)):
        syn = SyntheticModelSpec(GroupThreshold(0.5 + gap / 2, 0.5 - gap / 2, eta, groups))
        est = estimate_operating_characteristics(spec, syn, n, trials, derive_seed(seed, "simulate", "gt", i),
                                                 args.workers)
        rows.append(_sim_row("GroupThreshold", f"gap={gap:g}, n={n}/group, {method.value}", syn.ground_truth_g,
                             est.null_true, trials, est.rejections))

    dist = ProductDistribution({"x": Uniform(0.0, 1.0)})
    strategy = AdaptivePairSearch(dist, radius=0.05)
    if_spec = AuditSpec(IndividualFairness(1.0), pres, zeta, method,
                        ModelAssumptions(dist, "synthetic ScoreFunction"))
    for slope in (0.5, 2.0):
        syn = SyntheticModelSpec(ScoreFunction.linear(slope, lipschitz=1.0, high=1.0))
        model = make_synthetic(syn)
        hits = 0
        for r in range(runs):
            s = derive_seed(seed, "simulate", "lipschitz", str(slope), r)
            ev = collect(model, strategy, budget, QueryBudget(budget), s)
            hits += run_audit(ev, if_spec, s).decision is Decision.REJECT_NULL
        rows.append(_sim_row("ScoreFunction", f"f(x)={slope:g}x, L=1, adaptive budget {budget}",
                             syn.ground_truth_g, syn.compliant, runs, hits))

    for planted in (0.3, 0.9):
        kind = LossPlant(50, 17, planted, 0.2, 0.5)
        syn = SyntheticModelSpec(kind)
        model = make_synthetic(syn)
        S = tuple(ModelInput({"x": i}) for i in range(kind.size))
        crit = MaxLoss("output", S, kind.eta)
        ml_spec = AuditSpec(crit, pres, zeta, method, ModelAssumptions(ProductDistribution(), "synthetic LossPlant"))
        ev = collect(model, Design(S, "max-loss-set"), len(S), QueryBudget(len(S)),
                     derive_seed(seed, "simulate", "ml"))
        hit = run_audit(ev, ml_spec, seed).decision is Decision.REJECT_NULL
        rows.append(_sim_row("LossPlant", f"planted loss {planted:g}, eta 0.5, exhaustive", syn.ground_truth_g,
                             syn.compliant, 1, int(hit)))

    doc = {"schema_version": REPORT_SCHEMA_VERSION, "command": "simulate",
           "config_sha256": cfg.sha256 if cfg else None, "seed": seed, "presumption": pres.value,
           "significance": zeta, "rows": rows}
    out = cfg.section("output", required=False) if cfg else {}
    outputs = Outputs(args.out_dir or out.get("dir", "."), out.get("name", "simulate"), args.formats)
    outputs.emit("json", _dumps(doc), ".json")
    outputs.emit("csv", _csv(rows, SIM_COLUMNS), ".csv")
    md = ["# Synthetic zoo calibration", "", f"- Presumption {pres.value}, significance {zeta}, seed {seed}", ""]
    outputs.emit("markdown", "\n".join(md + _md_table(rows, SIM_COLUMNS)) + "\n", ".md")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

DEFAULT_FORMATS = {"run": ("json", "markdown"), "power": ("json", "csv"), "ll144": ("json", "markdown"),
                   "simulate": ("json", "csv")}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out-dir", help="directory for report files (default: [output].dir or .)")
    common.add_argument("--format", dest="format", action="append", choices=("json", "markdown", "csv"),
                        help="output format; repeat for several (default depends on the command)")
    common.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                        help="reject unknown configuration keys")
    common.add_argument("--workers", type=int, default=1, help="parallel workers (results do not depend on it)")

    parser = argparse.ArgumentParser(prog="bbaudit", description="Black-box compliance audits.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="collect evidence, estimate, test and report")
    sub.add_parser("power", parents=[common], help="Monte Carlo FPR/TPR over a synthetic grid")
    ll = sub.add_parser("ll144", parents=[common], help="NYC Local Law 144 bias audit of historical data")
    ll.add_argument("data", help="historical-data CSV")
    sub.add_parser("simulate", parents=[common], help="calibration suite over the synthetic zoo")
    return parser


COMMANDS = {"run": cmd_run, "power": cmd_power, "ll144": cmd_ll144, "simulate": cmd_simulate}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.formats = tuple(dict.fromkeys(args.format)) if args.format else DEFAULT_FORMATS[args.command]

    def err(msg: str) -> None:
        print(msg, file=sys.stderr)

    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1", field="workers")
        cfg = None
        if args.config is not None:
            cfg = load_config(args.config, strict=args.strict, warn=err)
        elif args.command != "simulate":
            raise ConfigError(f"{args.command} needs --config", field="config")
        return COMMANDS[args.command](args, cfg, err)
    except ERRORS as exc:
        field = getattr(exc, "field", None)
        where = f" (field: {field})" if field else ""
        err(f"error{where}: {exc}")
        return EXIT_ERROR
    except REFUSALS as exc:
        err(f"audit refused: {exc}")
        return EXIT_REFUSED
    except AuditError as exc:
        err(f"error: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
