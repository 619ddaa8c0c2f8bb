"""File formats: Trace CSV, FitResult JSON-lines, series mapping CSV, run manifests."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .fitting import FitResult, ModelKind
from .models import DModelParams, PopulationConfig, Trace, WModelParams

__all__ = [
    "TRACE_HEADER",
    "write_traces_csv",
    "read_traces_csv",
    "write_fits_jsonl",
    "read_fits_jsonl",
    "fit_from_record",
    "read_series_map",
    "write_rows_csv",
    "write_json",
]

TRACE_HEADER = ("video_id", "day_index", "views")


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_traces_csv(traces: dict, path) -> None:
    """One row per video-day, days numbered from 1."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for vid, tr in traces.items():
            counts = tr.counts if isinstance(tr, Trace) else np.asarray(tr, dtype=float)
            for day, v in enumerate(counts, start=1):
                w.writerow((vid, day, _fmt(v)))


def read_traces_csv(path):
    """Parse a Trace CSV.

    Returns ``(traces, failures)``: ``video_id -> Trace`` for clean videos
    and ``video_id -> message`` for videos with a corrupt row (bad number,
    negative count, duplicate day).  Missing days are zero.
    """
    rows = {}
    failures = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return {}, {}
        if tuple(h.strip() for h in header) != TRACE_HEADER:
            raise DataError(f"expected header {','.join(TRACE_HEADER)}, got {','.join(header)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 or not row[0]:
                raise DataError(f"expected 3 fields with a video id, got {row!r}", line=lineno)
            vid = row[0]
            if vid in failures:
                continue
            try:
                day = int(row[1])
                views = float(row[2])
                if day < 1:
                    raise ValueError(f"day_index {day} < 1")
                if not (math.isfinite(views) and views >= 0):
                    raise ValueError(f"views {row[2]!r} not a finite count >= 0")
            except ValueError as exc:
                failures[vid] = f"line {lineno}: {exc}"
                rows.pop(vid, None)
                continue
            days = rows.setdefault(vid, {})
            if day in days:
                failures[vid] = f"line {lineno}: duplicate day_index {day}"
                rows.pop(vid)
                continue
            days[day] = views
    traces = {}
    for vid, days in rows.items():
        counts = np.zeros(max(days))
        for d, v in days.items():
            counts[d - 1] = v
        traces[vid] = Trace(counts)
    return traces, failures


def write_fits_jsonl(results: dict, path) -> None:
    """Serialize ``video_id -> FitResult | Exception``; failures keep their message."""
    with open(path, "w", encoding="utf-8") as fh:
        for vid, res in results.items():
            if isinstance(res, FitResult):
                rec = res.as_record(vid)
            else:
                rec = {"video_id": vid, "model_kind": None, "nmse": None, "converged": False, "error": str(res)}
            fh.write(json.dumps(rec) + "\n")


def fit_from_record(rec: dict) -> FitResult:
    kind = ModelKind(rec["model_kind"])
    pop = PopulationConfig(float(rec["N"]), float(rec["q"]))
    if kind is ModelKind.DMODEL:
        params = DModelParams(pop, alpha=float(rec["alpha"]), t_e=float(rec["t_e"]), gamma=float(rec["gamma"]))
    else:
        params = WModelParams(pop, beta=float(rec["beta"]), x0=float(rec["x0"]))
    return FitResult(
        kind,
        params,
        float(rec["nmse"]),
        int(rec.get("iterations", 0)),
        bool(rec["converged"]),
        float(rec.get("residual_norm", math.nan)),
        float(rec.get("total_views", 0.0)),
    )


def read_fits_jsonl(path):
    """Returns ``(fits, failed)``: parsed results and the ids of failed records."""
    fits, failed = {}, []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON: {exc}", line=lineno) from exc
            if rec.get("model_kind") is None:
                failed.append(rec.get("video_id"))
                continue
            try:
                fits[str(rec["video_id"])] = fit_from_record(rec)
            except (KeyError, ValueError) as exc:
                raise DataError(f"bad fit record: {exc}", line=lineno) from exc
    return fits, failed


def read_series_map(path) -> dict:
    """``video_id,series_id`` CSV to an ordered ``video_id -> series_id`` dict."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"video_id", "series_id"} <= set(reader.fieldnames):
            raise DataError("series mapping needs header video_id,series_id", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row["video_id"] or not row["series_id"]:
                raise DataError("empty video_id or series_id", line=lineno)
            out[row["video_id"]] = row["series_id"]
    return out


def write_rows_csv(rows, header, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_json(data, path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
