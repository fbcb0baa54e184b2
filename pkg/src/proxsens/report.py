"""Per-rho comparison tables and their CSV/JSON serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoError

__all__ = ["ReportRow", "ExperimentReport", "emit_report", "read_csv_rows", "format_float", "CSV_COLUMNS"]

CSV_COLUMNS = ("rho", "relative_error_inf", "cosine_similarity")


def format_float(value: float) -> str:
    """17 significant digits, enough to round-trip any double."""
    return format(float(value), ".17g")


@dataclass(frozen=True)
class ReportRow:
    rho: float
    relative_error_inf: float
    cosine_similarity: float


@dataclass(frozen=True)
class ExperimentReport:
    """Rows of ``(rho, relative error, cosine similarity)`` plus run metadata."""

    rows: tuple[ReportRow, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    def sorted_rows(self) -> list[ReportRow]:
        # sorted() is stable, so duplicate rho values keep their input order.
        return sorted(self.rows, key=lambda r: r.rho)

    def best(self) -> ReportRow:
        return min(self.rows, key=lambda r: (r.relative_error_inf, r.rho))

    def as_dict(self) -> dict:
        return {
            "columns": list(CSV_COLUMNS),
            "rows": [[r.rho, r.relative_error_inf, r.cosine_similarity] for r in self.sorted_rows()],
            "metadata": _jsonable(self.metadata),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.sorted_rows():
            writer.writerow([format_float(r.rho), format_float(r.relative_error_inf), format_float(r.cosine_similarity)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def emit_report(report: ExperimentReport, csv_path=None, json_path=None) -> None:
    """Write the CSV table and/or the JSON document (rows plus metadata)."""
    if not report.rows:
        raise ConfigError("report has no rows")
    if csv_path is not None:
        _write(csv_path, report.to_csv())
    if json_path is not None:
        _write(json_path, report.to_json())


def read_csv_rows(path) -> list[ReportRow]:
    """Parse a CSV written by :func:`emit_report`."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected header {header}")
    return [ReportRow(*(float(v) for v in row)) for row in reader]
