"""Configuration of an LL144 bias audit."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from typing import Any, Mapping

from ..errors import ConfigError
from ..testing import Correction, Method, Presumption
from ..testing.bootstrap import MIN_RESAMPLES
from ..testing.parity import Z_GUARD

AXES = ("race_ethnicity", "sex")


@dataclass(frozen=True)
class LL144Config:
    """Audit settings. ``eta`` and ``presumption`` have no defaults on purpose.

    ``eta`` bounds the gap between a category's rate and the highest rate on
    the same axis. No numeric threshold is implied by the law, so the caller
    must state one, and the summary discloses it.
    """

    eta: float
    presumption: Presumption
    significance: float = 0.05
    method: Method = Method.BOUNDARY_Z
    min_cell_count: int = Z_GUARD
    multiplicity: Correction = Correction.BENJAMINI_HOCHBERG
    bootstrap_resamples: int = 2000
    seed: int = 0
    audit_date: str | None = None
    allow_test_data: bool = False
    test_data_n: int | None = None
    #: ModelInput.group is set from this axis when test data is generated
    group_axis: str = "sex"
    #: declared category levels; observed levels are used for axes left out
    levels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        try:
            object.__setattr__(self, "presumption", Presumption(self.presumption))
        except ValueError:
            raise ConfigError(f"presumption must be one of {[p.value for p in Presumption]}",
                              field="presumption") from None
        try:
            object.__setattr__(self, "method", Method(self.method))
        except ValueError:
            raise ConfigError(f"method must be one of {[m.value for m in Method]}", field="method") from None
        try:
            object.__setattr__(self, "multiplicity", Correction(self.multiplicity))
        except ValueError:
            raise ConfigError(f"multiplicity must be one of {[c.value for c in Correction]}",
                              field="multiplicity") from None
        if not 0 < self.eta < 1:
            raise ConfigError(f"eta {self.eta} must lie in (0, 1)", field="eta")
        if not 0 < self.significance <= 0.5:
            raise ConfigError(f"significance {self.significance} must lie in (0, 0.5]", field="significance")
        if self.method is Method.TOST and self.presumption is not Presumption.NON_COMPLIANCE:
            raise ConfigError("TOSTEquivalence tests the presumption of non-compliance only", field="method")
        if self.min_cell_count < 1:
            raise ConfigError("min_cell_count must be positive", field="min_cell_count")
        if self.bootstrap_resamples < MIN_RESAMPLES:
            raise ConfigError(f"bootstrap_resamples must be at least {MIN_RESAMPLES}", field="bootstrap_resamples")
        if self.test_data_n is not None and self.test_data_n < 1:
            raise ConfigError("test_data_n must be positive", field="test_data_n")
        if self.group_axis not in AXES:
            raise ConfigError(f"group_axis must be one of {list(AXES)}", field="group_axis")
        unknown = set(self.levels) - set(AXES)
        if unknown:
            raise ConfigError(f"levels given for unknown axis {sorted(unknown)[0]!r}", field="levels")
        object.__setattr__(self, "levels", {k: tuple(v) for k, v in sorted(self.levels.items())})

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], strict: bool = True) -> "LL144Config":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown and strict:
            raise ConfigError(f"unknown key {unknown[0]!r} in ll144 config", field=unknown[0])
        for required in ("eta", "presumption"):
            if required not in data:
                raise ConfigError(f"{required!r} is required and has no default", field=required)
        return cls(**{k: v for k, v in data.items() if k in names})

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "presumption": self.presumption.value,
            "significance": self.significance,
            "method": self.method.value,
            "min_cell_count": self.min_cell_count,
            "multiplicity": self.multiplicity.value,
            "bootstrap_resamples": self.bootstrap_resamples,
            "seed": self.seed,
            "audit_date": self.audit_date,
            "allow_test_data": self.allow_test_data,
            "test_data_n": self.test_data_n,
            "group_axis": self.group_axis,
            "levels": {k: list(v) for k, v in self.levels.items()},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
