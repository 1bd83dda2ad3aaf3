"""Turn published admissions statistics into a :class:`MarketObservation`.

Records file (UTF-8 CSV, empty field = missing)::

    name, enrolled, yield,
    sat_reading_25, sat_reading_75, sat_math_25, sat_math_75,
    sat_writing_25, sat_writing_75, act_composite_25, act_composite_75,
    sat_share, act_share

Percentile table file: CSV with columns ``test, score, percentile`` where
``test`` is one of reading, math, writing, composite. Lines starting with
``#`` carry ``key: value`` provenance notes (``version``, ``source``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable

import numpy as np

from .errors import DataError, DomainError
from .inverse import MarketObservation

__all__ = [
    "TESTS",
    "FAMILIES",
    "RECORD_COLUMNS",
    "CollegeRecord",
    "PercentileTable",
    "implied_cutoff",
    "read_records",
    "read_tables",
    "default_tables",
    "build_observation",
]

TESTS = ("reading", "math", "writing", "composite")
FAMILIES = {"sat": ("reading", "math", "writing"), "act": ("composite",)}
PERCENTILES = (0.25, 0.75)
SCORE_COLUMNS = {
    (test, p_rel): f"{fam}_{test}_{int(p_rel * 100)}"
    for fam, tests in FAMILIES.items()
    for test in tests
    for p_rel in PERCENTILES
}
RECORD_COLUMNS = ("name", "enrolled", "yield", *SCORE_COLUMNS.values(), "sat_share", "act_share")
INTERPOLATION = "linear interpolation of percentile between adjacent raw-score rows"


def implied_cutoff(p_rel: float, p_abs: float) -> float:
    """Population percentile of a school's weakest admit.

    If a fraction ``p_rel`` of admits score below a raw score that sits at
    population percentile ``p_abs``, and admits are the top slice of the
    population, the slice starts at ``1 - (1 - p_abs) / (1 - p_rel)``.
    Negative values are cropped to zero.
    """
    if not 0 <= p_rel < 1:
        raise DomainError(f"p_rel must lie in [0, 1), got {p_rel}")
    if not 0 <= p_abs <= 1:
        raise DomainError(f"p_abs must lie in [0, 1], got {p_abs}")
    return max(0.0, 1.0 - (1.0 - p_abs) / (1.0 - p_rel))


@dataclass(frozen=True)
class CollegeRecord:
    name: str
    enrolled_count: int | None
    reported_yield: float | None
    scores: dict  # (test, p_rel) -> raw score or None
    submission_shares: dict  # family -> share or None
    line: int = 0

    @property
    def missing(self) -> list[str]:
        out = [SCORE_COLUMNS[k] for k, v in self.scores.items() if v is None]
        out += [f"{fam}_share" for fam, v in self.submission_shares.items() if v is None]
        if self.enrolled_count is None:
            out.append("enrolled")
        return out


@dataclass(frozen=True)
class PercentileTable:
    """Raw score to population percentile, per test, with provenance notes."""

    rows: dict  # test -> (scores, percentiles) arrays
    notes: dict = field(default_factory=dict)

    @property
    def version(self) -> str:
        return self.notes.get("version", "unversioned")

    def percentile(self, test: str, raw: float) -> float:
        if test not in self.rows:
            raise DataError(f"no percentile table for test {test!r}")
        xs, ys = self.rows[test]
        if not xs[0] <= raw <= xs[-1]:
            raise DataError(f"{test} score {raw} outside table range [{xs[0]}, {xs[-1]}]")
        return float(np.interp(raw, xs, ys))


def _number(text: str, line: int, column: str, errors: list[str]):
    text = (text or "").strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        errors.append(f"line {line}: column {column}: not a number: {text!r}")
        return None
    if not math.isfinite(value):
        errors.append(f"line {line}: column {column}: not finite")
        return None
    return value


def read_records(fh: IO[str]) -> list[CollegeRecord]:
    """Parse a records file; all malformed cells are reported together."""
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing_cols = [c for c in RECORD_COLUMNS if c not in header]
    if missing_cols:
        raise DataError(f"records file lacks columns: {', '.join(missing_cols)}")
    errors: list[str] = []
    records = []
    for line, row in enumerate(reader, start=2):
        name = (row["name"] or "").strip()
        if not name:
            errors.append(f"line {line}: empty school name")
            continue
        enrolled = _number(row["enrolled"], line, "enrolled", errors)
        if enrolled is not None and (enrolled < 0 or enrolled != int(enrolled)):
            errors.append(f"line {line}: enrolled must be a nonnegative integer")
            enrolled = None
        yld = _number(row["yield"], line, "yield", errors)
        if yld is not None and not 0 <= yld <= 1:
            errors.append(f"line {line}: yield {yld} outside [0, 1]")
        scores = {k: _number(row[col], line, col, errors) for k, col in SCORE_COLUMNS.items()}
        shares = {}
        for fam in FAMILIES:
            v = _number(row[f"{fam}_share"], line, f"{fam}_share", errors)
            if v is not None and not 0 <= v <= 1:
                errors.append(f"line {line}: {fam}_share {v} outside [0, 1]")
            shares[fam] = v
        records.append(
            CollegeRecord(
                name=name,
                enrolled_count=None if enrolled is None else int(enrolled),
                reported_yield=yld,
                scores=scores,
                submission_shares=shares,
                line=line,
            )
        )
    if errors:
        raise DataError("malformed records:\n" + "\n".join(errors))
    return records


def read_tables(fh: IO[str]) -> PercentileTable:
    notes = {}
    body = []
    for raw in fh:
        if raw.startswith("#"):
            key, _, value = raw[1:].partition(":")
            if value:
                notes[key.strip()] = value.strip()
        elif raw.strip():
            body.append(raw)
    reader = csv.DictReader(body)
    if not {"test", "score", "percentile"} <= set(reader.fieldnames or ()):
        raise DataError("percentile table needs columns test, score, percentile")
    collected: dict[str, list[tuple[float, float]]] = {}
    for row in reader:
        test = row["test"].strip()
        if test not in TESTS:
            raise DataError(f"unknown test {test!r} in percentile table")
        try:
            collected.setdefault(test, []).append((float(row["score"]), float(row["percentile"])))
        except ValueError as exc:
            raise DataError(f"bad percentile table row {row}: {exc}") from None
    rows = {}
    for test, pairs in collected.items():
        pairs.sort()
        xs = np.array([x for x, _ in pairs])
        ys = np.array([y for _, y in pairs])
        if np.any(np.diff(xs) == 0):
            raise DataError(f"duplicate raw scores in {test} table")
        if np.any(np.diff(ys) < 0) or np.any(ys < 0) or np.any(ys > 1):
            raise DataError(f"{test} percentiles must be nondecreasing within [0, 1]")
        rows[test] = (xs, ys)
    return PercentileTable(rows=rows, notes=notes)


def default_tables() -> PercentileTable:
    """The bundled synthetic table (a normal approximation, not an official release)."""
    ref = resources.files("scoremarket") / "data" / "percentiles_synthetic_v1.csv"
    with ref.open("r", encoding="utf-8") as fh:
        return read_tables(fh)


def _school_cutoff(rec: CollegeRecord, tables: PercentileTable) -> float:
    by_family = {}
    for fam, tests in FAMILIES.items():
        vals = []
        for test in tests:
            for p_rel in PERCENTILES:
                p_abs = tables.percentile(test, rec.scores[(test, p_rel)])
                vals.append(implied_cutoff(p_rel, p_abs))
        by_family[fam] = math.fsum(vals) / len(vals)
    weights = {fam: rec.submission_shares[fam] for fam in FAMILIES}
    total = math.fsum(weights.values())
    return math.fsum(weights[f] * by_family[f] for f in FAMILIES) / total


def build_observation(
    records: Iterable[CollegeRecord], tables: PercentileTable
) -> tuple[MarketObservation, dict]:
    """Cutoff and demand per retained school, plus run metadata.

    A school's cutoff averages the implied cutoffs within each test family,
    then weights the two family averages by their submission shares. Schools
    missing any required field, with zero enrollment or with no submission
    share are excluded and listed in the metadata.
    """
    records = list(records)
    if not records:
        raise DataError("no records supplied")
    retained, excluded, errors = [], [], []
    for rec in records:
        missing = rec.missing
        if missing:
            excluded.append({"name": rec.name, "line": rec.line, "reason": "missing " + ", ".join(missing)})
            continue
        if rec.enrolled_count == 0:
            excluded.append({"name": rec.name, "line": rec.line, "reason": "zero enrollment"})
            continue
        if math.fsum(rec.submission_shares.values()) == 0:
            excluded.append({"name": rec.name, "line": rec.line, "reason": "zero submission shares"})
            continue
        try:
            retained.append((rec, _school_cutoff(rec, tables)))
        except DataError as exc:
            errors.append(f"line {rec.line}: {exc}")
    if errors:
        raise DataError("malformed records:\n" + "\n".join(errors))
    if not retained:
        raise DataError("no school has complete data")
    counts = [rec.enrolled_count for rec, _ in retained]
    total = sum(counts)
    obs = MarketObservation(
        p_obs=[p for _, p in retained],
        D_obs=[k / total for k in counts],
        labels=tuple(rec.name for rec, _ in retained),
        population=float(total),
        reported_yield=[math.nan if rec.reported_yield is None else rec.reported_yield for rec, _ in retained],
    )
    meta = {
        "rows_read": len(records),
        "rows_retained": len(retained),
        "rows_excluded": len(excluded),
        "total_enrolled": total,
        "excluded": excluded,
        "table_version": tables.version,
        "table_notes": dict(sorted(tables.notes.items())),
        "interpolation": INTERPOLATION,
        "family_weighting": "submission-share weighted mean of per-family averages",
    }
    return obs, meta
