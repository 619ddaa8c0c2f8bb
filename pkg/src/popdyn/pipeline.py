"""From raw viewing records to per-video daily traces and per-type populations.

Records are CSV rows ``timestamp,user_id,video_id,video_type`` with ISO-8601
timestamps.  Dataset preparation runs in a fixed order:

1. keep records inside the collection window;
2. per video type, drop the least active users until a share of the views
   (25% by default) is removed; the remaining user count is that type's N;
3. build daily traces from the retained records;
4. drop cold videos with fewer than ``threshold`` total views.
"""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError
from .models import Trace

__all__ = [
    "VideoType",
    "ViewingRecord",
    "CorpusSummary",
    "RECORD_COLUMNS",
    "read_records",
    "records_frame",
    "build_daily_traces",
    "active_user_filter",
    "UserFilterResult",
    "cold_video_filter",
    "prepare_corpus",
]

RECORD_COLUMNS = ("timestamp", "user_id", "video_id", "video_type")


class VideoType(str, enum.Enum):
    MOVIE = "Movie"
    TV = "TV"
    NEWS = "News"
    MV = "MV"
    OTHER = "Other"


@dataclass(frozen=True)
class ViewingRecord:
    timestamp: dt.datetime
    user_id: str
    video_id: str
    video_type: VideoType = VideoType.OTHER


@dataclass
class CorpusSummary:
    population: dict = field(default_factory=dict)
    retained_videos: dict = field(default_factory=dict)
    removed_view_fraction: dict = field(default_factory=dict)
    removed_users: dict = field(default_factory=dict)
    removal_share: float = 0.25
    rule: str = "cap"
    threshold: int = 1000

    def to_json(self) -> dict:
        return {
            "population": self.population,
            "retained_videos": self.retained_videos,
            "removed_view_fraction": self.removed_view_fraction,
            "removed_users": self.removed_users,
            "removal_share": self.removal_share,
            "rule": self.rule,
            "threshold": self.threshold,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CorpusSummary":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def _normalize_type(value, line=None):
    try:
        return VideoType(value).value
    except ValueError:
        raise DataError(f"unknown video type {value!r}", line=line) from None


def _validate_frame(df: pd.DataFrame, first_line=2) -> pd.DataFrame:
    missing = [c for c in RECORD_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"missing columns {missing}; expected header {','.join(RECORD_COLUMNS)}")
    df = df[list(RECORD_COLUMNS)].copy()
    for col in ("user_id", "video_id"):
        bad = df[col].isna() | (df[col].astype(str).str.len() == 0)
        if bad.any():
            raise DataError(f"empty {col}", line=first_line + int(np.argmax(bad.to_numpy())))
        df[col] = df[col].astype(str)
    ts = pd.to_datetime(df["timestamp"], errors="coerce", format="ISO8601")
    if ts.isna().any():
        i = int(np.argmax(ts.isna().to_numpy()))
        raise DataError(f"malformed timestamp {df['timestamp'].iloc[i]!r}", line=first_line + i)
    if getattr(ts.dt, "tz", None) is not None:
        ts = ts.dt.tz_convert(None)
    df["timestamp"] = ts
    types = df["video_type"].fillna("Other").astype(str)
    known = {t.value for t in VideoType}
    bad = ~types.isin(known)
    if bad.any():
        i = int(np.argmax(bad.to_numpy()))
        raise DataError(f"unknown video type {types.iloc[i]!r}", line=first_line + i)
    df["video_type"] = types
    return df.reset_index(drop=True)


def read_records(path) -> pd.DataFrame:
    """Read a records CSV (plain or gzip) into a validated frame."""
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[], compression="infer")
    except pd.errors.ParserError as exc:
        raise DataError(f"cannot parse records CSV: {exc}") from exc
    except pd.errors.EmptyDataError:
        return pd.DataFrame({c: pd.Series(dtype=object) for c in RECORD_COLUMNS})
    if df.empty:
        return df.reindex(columns=list(RECORD_COLUMNS))
    return _validate_frame(df)


def records_frame(records) -> pd.DataFrame:
    """Accept a frame or an iterable of :class:`ViewingRecord`."""
    if isinstance(records, pd.DataFrame):
        if records.empty:
            return pd.DataFrame({c: pd.Series(dtype=object) for c in RECORD_COLUMNS})
        if not pd.api.types.is_datetime64_any_dtype(records["timestamp"]):
            return _validate_frame(records)
        return records
    rows = [
        (r.timestamp, str(r.user_id), str(r.video_id), VideoType(r.video_type).value) for r in records
    ]
    if not rows:
        return pd.DataFrame({c: pd.Series(dtype=object) for c in RECORD_COLUMNS})
    df = pd.DataFrame(rows, columns=list(RECORD_COLUMNS))
    df["timestamp"] = pd.to_datetime(df["timestamp"])
    return df


def _to_day(value) -> pd.Timestamp:
    return pd.Timestamp(value).normalize()


def _in_window(df, window):
    if window is None or df.empty:
        return df
    start, end = _to_day(window[0]), _to_day(window[1])
    if end < start:
        raise DataError("collection window end precedes its start")
    day = df["timestamp"].dt.normalize()
    return df[(day >= start) & (day <= end)]


def build_daily_traces(records, window=None, *, horizon_days=None) -> dict:
    """Per-video daily view counts.

    Day 1 is the video's first-view day.  Traces run through the window end
    (or the last observed day when ``window`` is None), capped at
    ``horizon_days``; days without views are explicit zeros.
    """
    df = _in_window(records_frame(records), window)
    if df.empty:
        return {}
    day = df["timestamp"].dt.normalize()
    end = _to_day(window[1]) if window is not None else day.max()
    traces = {}
    for vid, days in day.groupby(df["video_id"], sort=True):
        birth = days.min()
        offsets = ((days - birth).dt.days).to_numpy()
        length = (end - birth).days + 1
        if horizon_days is not None:
            length = min(length, horizon_days)
            offsets = offsets[offsets < length]
        traces[vid] = Trace(np.bincount(offsets, minlength=length).astype(float))
    return traces


@dataclass(frozen=True)
class UserFilterResult:
    records: pd.DataFrame
    N: int
    removed_users: tuple
    removed_views: int
    total_views: int

    @property
    def removed_fraction(self) -> float:
        return self.removed_views / self.total_views if self.total_views else 0.0


def _removal_count(sorted_counts: np.ndarray, share: float, rule: str) -> int:
    total = sorted_counts.sum()
    target = share * total
    cum = np.cumsum(sorted_counts)
    eps = 1e-9 * max(total, 1)
    if rule == "cap":
        k = int(np.searchsorted(cum, target + eps, side="right"))
        return max(k, 1) if share > 0 else 0
    if rule == "first_crossing":
        if share <= 0:
            return 0
        return min(int(np.searchsorted(cum, target - eps, side="left")) + 1, cum.size)
    raise ValueError(f"unknown removal rule {rule!r}")


def active_user_filter(records, removal_share=0.25, rule="cap") -> UserFilterResult:
    """Drop the least active users of one video type.

    Users are ranked by view count ascending (ties by user id) and removed
    from the bottom.  ``rule="cap"`` removes the longest prefix whose views
    stay within ``removal_share`` of the total (always at least one user);
    ``rule="first_crossing"`` removes the shortest prefix reaching it.
    """
    df = records_frame(records)
    if df.empty:
        raise DataError("no records to rank users on")
    if not 0 <= removal_share < 1:
        raise ValueError("removal_share must lie in [0, 1)")
    counts = df.groupby("user_id").size()
    ranked = sorted(counts.items(), key=lambda kv: (kv[1], kv[0]))
    k = _removal_count(np.array([c for _, c in ranked]), removal_share, rule)
    removed = tuple(u for u, _ in ranked[:k])
    removed_views = int(sum(c for _, c in ranked[:k]))
    kept = df[~df["user_id"].isin(set(removed))]
    return UserFilterResult(kept, len(ranked) - k, removed, removed_views, int(counts.sum()))


def cold_video_filter(traces: dict, threshold: float = 1000) -> dict:
    """Keep videos with at least ``threshold`` total views."""
    out = {}
    for vid, tr in traces.items():
        counts = tr.counts if isinstance(tr, Trace) else np.asarray(tr, dtype=float)
        if counts.size and counts.sum() >= threshold:
            out[vid] = tr
    return out


def prepare_corpus(records, window=None, *, removal_share=0.25, threshold=1000, rule="cap",
                   horizon_days=None):
    """Run the full preparation in its fixed order.

    Returns ``(traces_by_type, summary)`` where ``traces_by_type`` maps a
    video type to ``video_id -> Trace``.  Population is fixed before cold
    videos are removed.
    """
    df = _in_window(records_frame(records), window)
    summary = CorpusSummary(removal_share=removal_share, rule=rule, threshold=threshold)
    traces_by_type = {}
    if df.empty:
        return traces_by_type, summary
    for vtype, group in df.groupby("video_type", sort=True):
        users = active_user_filter(group, removal_share, rule)
        traces = build_daily_traces(users.records, window, horizon_days=horizon_days)
        traces = cold_video_filter(traces, threshold)
        traces_by_type[vtype] = traces
        summary.population[vtype] = users.N
        summary.retained_videos[vtype] = len(traces)
        summary.removed_view_fraction[vtype] = users.removed_fraction
        summary.removed_users[vtype] = len(users.removed_users)
    return traces_by_type, summary
