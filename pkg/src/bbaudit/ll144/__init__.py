"""NYC Local Law 144 bias-audit workflow.

Ingest historical hiring data, exclude records with imputed or inferred
demographics, compute selection and scoring rates, median scores and impact
ratios with statistical tests, fall back to disclosed test data when cells
are too small, and emit the public summary.
"""

from .config import AXES, LL144Config
from .records import (
    COLUMNS,
    SOURCES,
    UNKNOWN,
    ExclusionEntry,
    HistoricalRecord,
    IngestReport,
    apply_exclusions,
    ingest,
)
from .summary import INSUFFICIENT, BiasAuditSummary, analyse, render_markdown, run_bias_audit
from .testdata import TestDataDisclosure, generate_test_data, insufficient_cells, stratify

__all__ = [
    "AXES",
    "COLUMNS",
    "INSUFFICIENT",
    "SOURCES",
    "UNKNOWN",
    "BiasAuditSummary",
    "ExclusionEntry",
    "HistoricalRecord",
    "IngestReport",
    "LL144Config",
    "TestDataDisclosure",
    "analyse",
    "apply_exclusions",
    "generate_test_data",
    "ingest",
    "insufficient_cells",
    "render_markdown",
    "run_bias_audit",
    "stratify",
]
