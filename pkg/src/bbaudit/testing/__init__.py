"""Hypothesis-testing engine: presumptions, calibrated tests, power and multiplicity."""

from .audit import COMPATIBILITY, AuditOutcome, AuditSpec, Method, ModelAssumptions, run_audit, statement
from .bootstrap import BootstrapInterval, bootstrap_ci, bootstrap_distribution
from .multiplicity import AdjustedTests, Correction, adjust_multiplicity
from .parity import (
    Decision,
    Presumption,
    TestResult,
    boundary_z_power,
    boundary_z_pvalues,
    boundary_z_test,
    constrained_rates,
    exact_binomial_boundary_test,
    required_sample_size,
)
from .power import PowerEstimate, estimate_operating_characteristics

__all__ = [
    "COMPATIBILITY",
    "AdjustedTests",
    "AuditOutcome",
    "AuditSpec",
    "BootstrapInterval",
    "Correction",
    "Decision",
    "Method",
    "ModelAssumptions",
    "PowerEstimate",
    "Presumption",
    "TestResult",
    "adjust_multiplicity",
    "bootstrap_ci",
    "bootstrap_distribution",
    "boundary_z_power",
    "boundary_z_pvalues",
    "boundary_z_test",
    "constrained_rates",
    "estimate_operating_characteristics",
    "exact_binomial_boundary_test",
    "required_sample_size",
    "run_audit",
    "statement",
]
