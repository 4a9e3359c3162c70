"""Trace (CSV) and summary (JSON) export.

CSV columns follow the :class:`StepTrace` field order. Floats are written
with ``repr`` so a re-parsed trace is bit-identical to the in-memory one.
Wall-clock compute time is the only non-deterministic field; with
``timing=False`` it is left out of the CSV so that repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from ..errors import FastChargeError
from .simulate import TIMING_COLUMNS, TRACE_COLUMNS, RunSummary, StepTrace

_INT_COLUMNS = {"iterations"}
_STR_COLUMNS = {"binding"}


class ExportError(FastChargeError):
    """Reading or writing an output file failed."""


def trace_columns(timing=True):
    return tuple(c for c in TRACE_COLUMNS if timing or c not in TIMING_COLUMNS)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trace_csv(trace, path, timing=True):
    cols = trace_columns(timing)
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for s in trace:
                w.writerow([_fmt(getattr(s, c)) for c in cols])
    except OSError as exc:
        raise ExportError(f"cannot write trace to {path}: {exc}") from exc
    return path


def read_trace_csv(path):
    """Parse a trace CSV; missing timing columns read back as NaN."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ExportError(f"cannot read trace from {path}: {exc}") from exc
    out = []
    for row in rows:
        kw = {}
        for c in TRACE_COLUMNS:
            if c not in row:
                kw[c] = math.nan
            elif c in _STR_COLUMNS:
                kw[c] = row[c]
            elif c in _INT_COLUMNS:
                kw[c] = int(row[c])
            else:
                kw[c] = float(row[c])
        out.append(StepTrace(**kw))
    return out


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def summary_text(summary: RunSummary, timing=True):
    return json.dumps(_json_safe(summary.to_dict(timing)), indent=2, sort_keys=True) + "\n"


def write_summary(summary: RunSummary, path, timing=True):
    path = Path(path)
    try:
        path.write_text(summary_text(summary, timing))
    except OSError as exc:
        raise ExportError(f"cannot write summary to {path}: {exc}") from exc
    return path


def export(trace, summary: RunSummary, out_dir, stem=None, timing=True):
    """Write ``<stem>.csv`` and ``<stem>_summary.json``; returns both paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create output directory {out_dir}: {exc}") from exc
    stem = stem or summary.name
    return (write_trace_csv(trace, out_dir / f"{stem}.csv", timing),
            write_summary(summary, out_dir / f"{stem}_summary.json", timing))


def write_table_csv(rows, columns, path):
    """Small helper for figure-ready tables (list of dicts)."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow(["" if r.get(c) is None else _fmt(r.get(c)) for c in columns])
    except OSError as exc:
        raise ExportError(f"cannot write table to {path}: {exc}") from exc
    return path
