"""Strict TOML audit configuration.

Every section has a closed set of keys. In strict mode an unknown key is a
:class:`ConfigError` naming it; otherwise it is reported through ``warn``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import tomli

from .blackbox import (
    BlackBoxModel,
    EndpointDescriptor,
    GroupThreshold,
    LossPlant,
    ModelInput,
    RemoteModel,
    ScoreFunction,
    SyntheticModelSpec,
    make_synthetic,
    output_space_from_dict,
    schema_from_dict,
)
from .blackbox.schema import CategoricalFeature
from .criteria import IndividualFairness, MaxLoss, StatisticalParity
from .errors import ConfigError, SchemaError
from .evidence import (
    IID,
    AdaptivePairSearch,
    Categorical,
    ProductDistribution,
    SamplingStrategy,
    Stratified,
)
from .testing import AuditSpec, Method, ModelAssumptions, Presumption

KEYS: dict[str, frozenset[str]] = {
    "model": frozenset({"source", "family", "params", "url", "timeout_ms", "max_batch_size", "token_env",
                        "cost_per_query", "stochastic", "schema", "output_space"}),
    "sampling": frozenset({"strategy", "n", "budget", "quotas", "radius", "restarts", "batch_size",
                           "output_metric", "input_metric", "distribution"}),
    "criterion": frozenset({"kind", "group_1", "group_2", "eta", "loss", "S", "feature", "lipschitz",
                            "output_metric", "input_metric", "features"}),
    "audit": frozenset({"presumption", "significance", "method", "bootstrap_resamples", "seed", "family",
                        "tags"}),
    "output": frozenset({"dir", "name"}),
    "power": frozenset({"n_per_group", "trials", "eta", "base_rate", "gaps", "groups"}),
    "simulate": frozenset({"trials", "n_per_group", "eta", "budget", "lipschitz_runs"}),
    "ll144": frozenset({"eta", "presumption", "significance", "method", "min_cell_count", "multiplicity",
                        "bootstrap_resamples", "seed", "audit_date", "allow_test_data", "test_data_n",
                        "group_axis", "levels"}),
}
FAMILIES = {"GroupThreshold": GroupThreshold, "ScoreFunction": ScoreFunction, "LossPlant": LossPlant}


@dataclass(frozen=True)
class ConfigFile:
    data: Mapping[str, Any]
    sha256: str
    path: str

    def section(self, name: str, required: bool = True) -> dict:
        if name not in self.data:
            if required:
                raise ConfigError(f"missing [{name}] section", field=name)
            return {}
        sec = self.data[name]
        if not isinstance(sec, Mapping):
            raise ConfigError(f"[{name}] must be a table", field=name)
        return dict(sec)


def load_config(path: str, strict: bool = True, warn: Callable[[str], None] = lambda m: None) -> ConfigFile:
    """Parse ``path``; the digest covers the file's exact bytes."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field="config") from exc
    try:
        data = tomli.loads(raw.decode("utf-8"))
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: not valid TOML ({exc})", field="config") from exc
    for name, sec in data.items():
        if name not in KEYS:
            _unknown(f"unknown section [{name}]", name, strict, warn)
            continue
        if isinstance(sec, Mapping):
            for key in sorted(set(sec) - KEYS[name]):
                _unknown(f"unknown key {key!r} in [{name}]", f"{name}.{key}", strict, warn)
    known = {k: ({kk: vv for kk, vv in v.items() if kk in KEYS[k]} if isinstance(v, Mapping) else v)
             for k, v in data.items() if k in KEYS}
    return ConfigFile(known, hashlib.sha256(raw).hexdigest(), path)


def _unknown(message: str, field: str, strict: bool, warn: Callable[[str], None]) -> None:
    if strict:
        raise ConfigError(message, field=field)
    warn(f"warning: ignoring {message}")


def _require(sec: Mapping, key: str, section: str) -> Any:
    if key not in sec:
        raise ConfigError(f"[{section}] needs {key!r}", field=f"{section}.{key}")
    return sec[key]


def build_model(sec: Mapping[str, Any]) -> tuple[BlackBoxModel, SyntheticModelSpec | None]:
    source = _require(sec, "source", "model")
    if source == "synthetic":
        return _synthetic(sec)
    if source == "remote":
        try:
            endpoint = EndpointDescriptor(str(_require(sec, "url", "model")), int(sec.get("timeout_ms", 10_000)),
                                          int(sec.get("max_batch_size", 64)), sec.get("token_env"))
            schema = schema_from_dict(_require(sec, "schema", "model"))
            space = output_space_from_dict(_require(sec, "output_space", "model"))
        except (ValueError, KeyError, TypeError) as exc:
            field = exc.field if isinstance(exc, SchemaError) and exc.field else "model"
            raise ConfigError(f"invalid remote model: {exc}", field=f"model.{field}") from exc
        model = RemoteModel(endpoint, schema, space, stochastic=bool(sec.get("stochastic", False)),
                            cost_per_query=float(sec.get("cost_per_query", 1.0)))
        return model, None
    raise ConfigError(f"model.source must be 'synthetic' or 'remote', not {source!r}", field="model.source")


def _synthetic(sec: Mapping[str, Any]) -> tuple[BlackBoxModel, SyntheticModelSpec]:
    family = _require(sec, "family", "model")
    if family not in FAMILIES:
        raise ConfigError(f"model.family must be one of {sorted(FAMILIES)}", field="model.family")
    params = dict(sec.get("params", {}))
    try:
        if family == "GroupThreshold":
            if "groups" in params:
                params["groups"] = tuple(params["groups"])
            if "features" in params:
                params["features"] = {k: CategoricalFeature(tuple(v)) for k, v in params["features"].items()}
            kind = GroupThreshold(**params)
        elif family == "ScoreFunction":
            if "slope" in params:
                kind = ScoreFunction.linear(**params)
            else:
                for key in ("knots_x", "knots_y"):
                    params[key] = tuple(float(v) for v in params.get(key, ()))
                kind = ScoreFunction(**params)
        else:
            kind = LossPlant(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {family} parameters: {exc}", field="model.params") from exc
    spec = SyntheticModelSpec(kind)
    return make_synthetic(spec), spec


def build_distribution(data: Mapping[str, Any] | None) -> ProductDistribution:
    try:
        return ProductDistribution.from_dict(data or {})
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid sampling distribution: {exc}", field="sampling.distribution") from exc


def build_sampling(sec: Mapping[str, Any]) -> tuple[SamplingStrategy, int, float]:
    """Strategy, number of queries and budget (defaults to the number of queries)."""
    kind = _require(sec, "strategy", "sampling")
    n = int(_require(sec, "n", "sampling"))
    if n < 1:
        raise ConfigError("sampling.n must be positive", field="sampling.n")
    budget = float(sec.get("budget", n))
    if budget <= 0:
        raise ConfigError("sampling.budget must be positive", field="sampling.budget")
    dist = build_distribution(sec.get("distribution"))
    try:
        if kind == "iid":
            strategy: SamplingStrategy = IID(dist)
        elif kind == "stratified":
            quotas = {str(k): int(v) for k, v in _require(sec, "quotas", "sampling").items()}
            if sum(quotas.values()) != n:
                raise ConfigError(f"sampling.quotas sum to {sum(quotas.values())}, not n={n}",
                                  field="sampling.quotas")
            missing = [g for g in quotas if g not in dist.declared_groups]
            if missing:
                raise ConfigError(f"quota group {missing[0]!r} is not declared in the distribution",
                                  field="sampling.quotas")
            strategy = Stratified(dist, quotas)
        elif kind == "adaptive":
            strategy = AdaptivePairSearch(dist, float(_require(sec, "radius", "sampling")),
                                          int(sec.get("restarts", 1)), int(sec.get("batch_size", 8)),
                                          sec.get("output_metric", "absolute"), sec.get("input_metric", "l1"))
        else:
            raise ConfigError(f"sampling.strategy {kind!r} is not iid, stratified or adaptive",
                              field="sampling.strategy")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid sampling plan: {exc}", field="sampling") from exc
    return strategy, n, budget


def build_criterion(sec: Mapping[str, Any]):
    kind = _require(sec, "kind", "criterion")
    try:
        if kind == "statistical_parity":
            return StatisticalParity(str(_require(sec, "group_1", "criterion")),
                                     str(_require(sec, "group_2", "criterion")),
                                     float(_require(sec, "eta", "criterion")))
        if kind == "max_loss":
            feature = sec.get("feature", "x")
            S = tuple(ModelInput({feature: v}) for v in _require(sec, "S", "criterion"))
            return MaxLoss(sec.get("loss", "output"), S, float(_require(sec, "eta", "criterion")), feature)
        if kind == "individual_fairness":
            feats = sec.get("features")
            return IndividualFairness(float(_require(sec, "lipschitz", "criterion")),
                                      sec.get("output_metric", "absolute"), sec.get("input_metric", "l1"),
                                      None if feats is None else tuple(feats))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid criterion: {exc}", field="criterion") from exc
    raise ConfigError(f"criterion.kind {kind!r} is not statistical_parity, max_loss or individual_fairness",
                      field="criterion.kind")


def build_spec(criterion, sec: Mapping[str, Any], dist: ProductDistribution) -> AuditSpec:
    """AuditSpec from [audit]; presumption and significance have no defaults."""
    pres = _require(sec, "presumption", "audit")
    zeta = _require(sec, "significance", "audit")
    if not isinstance(zeta, (int, float)) or isinstance(zeta, bool):
        raise ConfigError("audit.significance must be a number", field="audit.significance")
    if pres not in [p.value for p in Presumption]:
        raise ConfigError(f"audit.presumption must be one of {[p.value for p in Presumption]}",
                          field="audit.presumption")
    method = sec.get("method", "BoundaryZ")
    if method not in [m.value for m in Method]:
        raise ConfigError(f"audit.method must be one of {[m.value for m in Method]}", field="audit.method")
    tags = tuple(sec.get("tags", ("independent queries",)))
    try:
        assumptions = ModelAssumptions(dist, str(sec.get("family", "black-box model")), tags)
        return AuditSpec(criterion, pres, float(zeta), method, assumptions,
                         int(sec.get("bootstrap_resamples", 2000)))
    except ConfigError as exc:
        raise ConfigError(str(exc), field=f"audit.{exc.field}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid [audit] value: {exc}", field="audit") from exc


def parity_distribution(groups: tuple[str, ...]) -> ProductDistribution:
    return ProductDistribution({}, Categorical({g: 1 / len(groups) for g in groups}))


__all__ = [
    "ConfigFile",
    "KEYS",
    "build_criterion",
    "build_distribution",
    "build_model",
    "build_sampling",
    "build_spec",
    "load_config",
    "parity_distribution",
]
