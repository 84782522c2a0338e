"""Comparison tables for one or more systems' evaluation reports.

Metric cells are rounded half-away-from-zero to 3 decimals with trailing
zeros trimmed (0.990 renders as "0.99", 1.000 as "1"), and tables render to
CSV or Markdown deterministically.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .evaluation import EvaluationReport

MISSING_CELL = "-"
LAST_LABELS = ("prefer not to say", "None", "unresolved")

_RANGE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*-\s*\d+(?:\.\d+)?\s*$")


class ReportingError(ValueError):
    """Raised for inconsistent report collections (duplicates, missing keys)."""


@dataclass(frozen=True)
class SystemReport:
    system_name: str
    report: EvaluationReport
    stream: str | None = None

    def __post_init__(self):
        if not self.system_name:
            raise ReportingError("system_name must be non-empty")


@dataclass
class Table:
    headers: list[str]
    rows: list[list[str]]


def format_metric(value: float) -> str:
    """Round to 3 decimals half-away-from-zero, trimming trailing zeros."""
    text = str(Decimal(repr(value)).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text


def _check_unique(reports: list[SystemReport]):
    seen = set()
    for r in reports:
        pair = (r.system_name, r.stream)
        if pair in seen:
            raise ReportingError(f"duplicate system/stream pair {pair}")
        seen.add(pair)


def overall_table(reports: list[SystemReport]) -> Table:
    """AP/AR per system; with streams present, one AP+AR column pair per stream."""
    if not reports:
        raise ReportingError("at least one report is required")
    _check_unique(reports)
    systems = list(dict.fromkeys(r.system_name for r in reports))
    streams = sorted({r.stream for r in reports if r.stream is not None})
    if not streams:
        headers = ["system", "ap", "ar"]
        rows = [[r.system_name, format_metric(r.report.ap), format_metric(r.report.ar)] for r in reports]
        return Table(headers=headers, rows=rows)
    by_key = {(r.system_name, r.stream): r for r in reports}
    headers = ["system"]
    for stream in streams:
        headers += [f"{stream}_ap", f"{stream}_ar"]
    rows = []
    for system in systems:
        row = [system]
        for stream in streams:
            r = by_key.get((system, stream))
            if r is None:
                row += [MISSING_CELL, MISSING_CELL]
            else:
                row += [format_metric(r.report.ap), format_metric(r.report.ar)]
        rows.append(row)
    return Table(headers=headers, rows=rows)


def _label_sort_key(label: str):
    if label in LAST_LABELS:
        return (2, LAST_LABELS.index(label), label)
    m = _RANGE_RE.match(label)
    if m:
        return (0, float(m.group(1)), label)
    return (1, 0.0, label)


def bucket_table(reports: list[SystemReport], key: str) -> Table:
    """Per-label recall of one attribute key, one column per system."""
    if not reports:
        raise ReportingError("at least one report is required")
    _check_unique(reports)
    per_system: list[tuple[str, dict[str, float]]] = []
    labels: set[str] = set()
    for r in reports:
        recalls = {b.label: b.recall for b in r.report.buckets if b.key == key}
        if not recalls:
            raise ReportingError(f"attribute key {key!r} absent from system {r.system_name!r}")
        name = r.system_name if r.stream is None else f"{r.system_name} ({r.stream})"
        per_system.append((name, recalls))
        labels |= set(recalls)
    ordered = sorted(labels, key=_label_sort_key)
    headers = [key] + [name for name, _ in per_system]
    rows = []
    for label in ordered:
        row = [label]
        for _, recalls in per_system:
            row.append(format_metric(recalls[label]) if label in recalls else MISSING_CELL)
        rows.append(row)
    return Table(headers=headers, rows=rows)


def render(table: Table, fmt: str) -> bytes:
    """Serialize a table as RFC-4180 CSV or a Markdown pipe table."""
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(table.headers)
        writer.writerows(table.rows)
        return out.getvalue().encode("utf-8")
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(table.headers) + " |",
            "| " + " | ".join("---" for _ in table.headers) + " |",
        ]
        for row in table.rows:
            lines.append("| " + " | ".join(row) + " |")
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ReportingError(f"unsupported render format {fmt!r}")
