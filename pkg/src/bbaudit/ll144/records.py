"""Historical hiring records: CSV ingestion, quarantine, and the imputed-data exclusion."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, Sequence

from ..errors import SchemaError

COLUMNS = ("applicant_id", "job_category", "race_ethnicity", "sex", "demographics_source", "selected", "score")
UNKNOWN = "UNKNOWN"
SOURCES = ("self-reported", "imputed", "inferred", "unknown")
#: sources whose demographics may not enter any demographic cell
BARRED_SOURCES = ("imputed", "inferred", "unknown")


@dataclass(frozen=True)
class HistoricalRecord:
    applicant_id: str
    job_category: str
    race_ethnicity: str
    sex: str
    demographics_source: str
    selected: int | None
    score: float | None
    #: line number in the source file (header is line 1); 0 for generated records
    row: int = 0

    def as_row(self) -> dict:
        return {"race_ethnicity": self.race_ethnicity, "sex": self.sex,
                "selected": self.selected, "score": self.score}


@dataclass
class IngestReport:
    rows_read: int = 0
    accepted: int = 0
    quarantined: list[dict] = field(default_factory=list)
    sha256: str | None = None

    @property
    def reasons(self) -> dict[str, int]:
        return dict(sorted(Counter(q["reason"] for q in self.quarantined).items()))

    def to_dict(self) -> dict:
        return {"rows_read": self.rows_read, "accepted": self.accepted,
                "quarantined": len(self.quarantined), "reasons": self.reasons,
                "quarantined_rows": list(self.quarantined), "sha256": self.sha256}


def _open(source: str | os.PathLike | IO[str]) -> tuple[str, str]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            return fh.read(), os.fspath(source)
    return source.read(), getattr(source, "name", "<stream>")


def _check(values: dict[str, str], seen: set[str]) -> tuple[str | None, int | None, float | None]:
    """Validate one row; returns (quarantine reason, selected, score)."""
    if not values["applicant_id"]:
        return "missing applicant_id", None, None
    if values["applicant_id"] in seen:
        return "duplicate applicant_id", None, None
    for col in ("job_category", "race_ethnicity", "sex", "demographics_source"):
        if not values[col]:
            return f"missing {col}", None, None
    if values["demographics_source"] not in SOURCES:
        return "invalid demographics_source", None, None
    sel_raw, score_raw = values["selected"], values["score"]
    if sel_raw not in ("", "0", "1"):
        return "invalid selected", None, None
    selected = int(sel_raw) if sel_raw else None
    score = None
    if score_raw:
        try:
            score = float(score_raw)
        except ValueError:
            return "score not numeric", None, None
        if not math.isfinite(score):
            return "score not numeric", None, None
        if not 0.0 <= score <= 1.0:
            return "score out of range", None, None
    if selected is None and score is None:
        return "missing outcome", None, None
    return None, selected, score


def ingest(source: str | os.PathLike | IO[str]) -> tuple[list[HistoricalRecord], IngestReport]:
    """Parse a historical-data CSV into typed records.

    Rows that cannot be typed are quarantined with their line number and a
    reason rather than aborting the whole file. A header missing any
    mandatory column is refused with :class:`SchemaError` naming the columns.
    Demographic values equal to ``UNKNOWN`` (any case) are normalised to
    ``UNKNOWN``; an empty demographic field is a quarantine, not an UNKNOWN.
    """
    text, name = _open(source)
    report = IngestReport(sha256=hashlib.sha256(text.encode("utf-8")).hexdigest())
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None:
        raise SchemaError(f"{name}: empty file; a header row is required", field="header")
    header = [h.strip() for h in header]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{name}: missing mandatory column(s): {', '.join(missing)}", field=missing[0])
    pos = {c: header.index(c) for c in COLUMNS}
    records: list[HistoricalRecord] = []
    seen: set[str] = set()
    for fields in reader:
        line = reader.line_num
        if not fields or all(not f.strip() for f in fields):
            continue
        report.rows_read += 1
        if len(fields) != len(header):
            report.quarantined.append({"row": line, "applicant_id": None, "job_category": None,
                                       "reason": f"expected {len(header)} fields, found {len(fields)}"})
            continue
        values = {c: fields[i].strip() for c, i in pos.items()}
        values["demographics_source"] = values["demographics_source"].lower()
        for col in ("race_ethnicity", "sex"):
            if values[col].upper() == UNKNOWN:
                values[col] = UNKNOWN
        reason, selected, score = _check(values, seen)
        if reason is not None:
            report.quarantined.append({"row": line, "applicant_id": values["applicant_id"] or None,
                                       "job_category": values["job_category"] or None, "reason": reason})
            continue
        seen.add(values["applicant_id"])
        records.append(HistoricalRecord(values["applicant_id"], values["job_category"], values["race_ethnicity"],
                                        values["sex"], values["demographics_source"], selected, score, line))
    report.accepted = len(records)
    return records, report


def exclusion_reasons(record: HistoricalRecord) -> list[str]:
    reasons = []
    if record.demographics_source in BARRED_SOURCES:
        reasons.append(f"demographics_source {record.demographics_source}")
    for col in ("race_ethnicity", "sex"):
        if getattr(record, col) == UNKNOWN:
            reasons.append(f"{col} {UNKNOWN}")
    return reasons


@dataclass(frozen=True)
class ExclusionEntry:
    applicant_id: str
    job_category: str
    row: int
    reason: str

    def to_dict(self) -> dict:
        return asdict(self)


def apply_exclusions(records: Iterable[HistoricalRecord]) -> tuple[list[HistoricalRecord], list[ExclusionEntry]]:
    """Split records into those usable in demographic cells and a ledger of the rest.

    A record is excluded from every demographic analysis if its demographics
    were imputed, inferred or of unknown source, or if either demographic is
    ``UNKNOWN``. Excluded records still count toward totals.
    """
    usable, ledger = [], []
    for r in records:
        reasons = exclusion_reasons(r)
        if reasons:
            ledger.append(ExclusionEntry(r.applicant_id, r.job_category, r.row, "; ".join(reasons)))
        else:
            usable.append(r)
    return usable, ledger


def observed_levels(records: Sequence[HistoricalRecord]) -> dict[str, tuple[str, ...]]:
    return {axis: tuple(sorted({getattr(r, axis) for r in records})) for axis in ("race_ethnicity", "sex")}
