"""Series-level aggregation, d-/w-classification and correlation statistics.

Related videos (episodes and versions of one series) are merged into a
composite whose parameters are episode averages.  Composites are labelled
by which model won the majority of their episodes, and each class gets the
scatter datasets and Pearson correlations used to read off recommendation
strategy and user behaviour.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InsufficientDataError
from .fitting import FitResult, ModelKind

__all__ = [
    "Label",
    "CompositeVideo",
    "CorrelationReport",
    "CaseStudyReport",
    "classify_composite",
    "aggregate_series",
    "aggregate_corpus",
    "pearson",
    "case_study_report",
    "episode_scatter",
    "COMPLETION_WARN_LEVEL",
]

COMPLETION_WARN_LEVEL = 1.1


class Label(str, enum.Enum):
    D_RECOMMENDED = "DRecommended"
    W_RECOMMENDED = "WRecommended"


@dataclass(frozen=True)
class CompositeVideo:
    series_id: str
    episode_fits: tuple
    mean_params: dict
    label: Label

    @property
    def completion_fraction(self) -> float:
        """Mean episode views over the interested population ``q * N``."""
        p = self.mean_params
        return p["total_views"] / (p["q"] * p["N"])

    @property
    def seed_fraction(self) -> float:
        p = self.mean_params
        return p["x0"] / (p["q"] * p["N"])


@dataclass
class CorrelationReport:
    pairs: list = field(default_factory=list)
    pearson_r: dict = field(default_factory=dict)
    points: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "pairs": [
                {"name": n, "pearson_r": None if math.isnan(r) else r, "points": self.points[n]}
                for n, r in ((n, self.pearson_r[n]) for n in self.pairs)
            ]
        }


@dataclass
class CaseStudyReport:
    correlations: CorrelationReport
    datasets: dict
    warnings: list = field(default_factory=list)


def classify_composite(fits) -> Label:
    """D-recommended only on a strict DModel majority; a 50/50 split is W."""
    kinds = [f.model_kind for f in fits]
    if not kinds:
        raise DataError("cannot classify an empty episode list")
    d = sum(k is ModelKind.DMODEL for k in kinds)
    return Label.D_RECOMMENDED if 2 * d > len(kinds) else Label.W_RECOMMENDED


def _mean(values):
    return float(np.mean(values)) if values else math.nan


def aggregate_series(fits, series_id="") -> CompositeVideo:
    """Average episode parameters into one composite.

    ``alpha``, ``t_e`` and ``gamma`` average over DModel episodes, ``beta``,
    ``beta_n`` and ``x0`` over WModel episodes, ``q``, ``N`` and the total
    views over all episodes.  Parameters no episode has are NaN.
    """
    fits = list(fits)
    if not fits:
        raise DataError(f"series {series_id!r} has no episodes")
    d = [f.params for f in fits if f.model_kind is ModelKind.DMODEL]
    w = [f.params for f in fits if f.model_kind is ModelKind.WMODEL]
    mean = {
        "alpha": _mean([p.alpha for p in d]),
        "t_e": _mean([p.t_e for p in d]),
        "gamma": _mean([p.gamma for p in d]),
        "beta": _mean([p.beta for p in w]),
        "beta_n": _mean([p.beta_n for p in w]),
        "x0": _mean([p.x0 for p in w]),
        "q": _mean([f.params.pop.q for f in fits]),
        "N": _mean([f.params.pop.N for f in fits]),
        "total_views": _mean([f.total_views for f in fits]),
        "nmse": _mean([f.nmse for f in fits]),
        "episodes": len(fits),
    }
    return CompositeVideo(series_id, tuple(fits), mean, classify_composite(fits))


def aggregate_corpus(fits: dict, series_of: dict) -> list:
    """Group ``video_id -> FitResult`` by ``series_of`` and aggregate each group.

    Videos absent from the mapping form their own single-episode series.
    """
    groups = {}
    for vid, fit in fits.items():
        groups.setdefault(series_of.get(vid, vid), []).append(fit)
    return [aggregate_series(groups[s], s) for s in sorted(groups)]


def pearson(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("pearson needs two vectors of equal length")
    if x.size < 2:
        raise InsufficientDataError("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise DataError("pearson is undefined for a zero-variance input")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


_D_PAIRS = {
    "d_logq_logalpha": lambda c: (math.log(c.mean_params["q"]), math.log(c.mean_params["alpha"])),
    "d_completion_alpha": lambda c: (c.completion_fraction, c.mean_params["alpha"]),
}
_W_PAIRS = {
    "w_logq_logbetan": lambda c: (math.log(c.mean_params["q"]), math.log(c.mean_params["beta_n"])),
    "w_completion_seed": lambda c: (c.completion_fraction, c.seed_fraction),
}


def _class_datasets(composites, label, pairs, report, datasets, warnings):
    members = [c for c in composites if c.label is label]
    if len(members) < 2:
        raise InsufficientDataError(f"{label.value} class has {len(members)} composite(s); need at least 2")
    for name, point in pairs.items():
        usable = []
        for c in members:
            try:
                x, y = point(c)
            except (ValueError, ZeroDivisionError):
                continue
            if math.isfinite(x) and math.isfinite(y):
                usable.append((x, y, c.series_id, label.value))
        if len(usable) < 2:
            raise InsufficientDataError(f"{name}: fewer than two composites carry the needed parameters")
        datasets[name] = usable
        report.pairs.append(name)
        try:
            r = pearson([u[0] for u in usable], [u[1] for u in usable])
        except DataError as exc:
            warnings.append(f"{name}: {exc}; r reported as NaN")
            r = math.nan
        report.pearson_r[name] = r
        report.points[name] = len(usable)


def case_study_report(composites) -> CaseStudyReport:
    """Scatter datasets and Pearson r for both composite classes.

    Datasets are lists of ``(x, y, series_id, label)`` rows, natural logs
    throughout.  Raises :class:`InsufficientDataError` when either class has
    fewer than two composites.  A pair with a constant coordinate gets
    ``r = NaN`` and a warning instead of failing the whole report.
    """
    composites = list(composites)
    report = CorrelationReport()
    datasets = {}
    warnings = []
    _class_datasets(composites, Label.D_RECOMMENDED, _D_PAIRS, report, datasets, warnings)
    _class_datasets(composites, Label.W_RECOMMENDED, _W_PAIRS, report, datasets, warnings)
    warnings += [
        f"series {c.series_id}: completion fraction {c.completion_fraction:.3f} exceeds {COMPLETION_WARN_LEVEL}"
        for c in composites
        if c.completion_fraction > COMPLETION_WARN_LEVEL
    ]
    return CaseStudyReport(report, datasets, warnings)


def episode_scatter(fits: dict, series_of: dict, series_ids=None) -> dict:
    """Per-episode ``(log q, log alpha)`` and ``(log q, log beta_n)`` rows before aggregation.

    Rows are ``(x, y, series_id, label, video_id, episode)``; the episode
    index is the video's position within its series in mapping order.
    """
    position = {}
    counter = {}
    for vid, sid in series_of.items():
        counter[sid] = counter.get(sid, 0) + 1
        position[vid] = counter[sid]
    out = {"episodes_d_logq_logalpha": [], "episodes_w_logq_logbetan": []}
    for vid, fit in fits.items():
        sid = series_of.get(vid, vid)
        if series_ids is not None and sid not in series_ids:
            continue
        p = fit.params
        if fit.model_kind is ModelKind.DMODEL:
            row = (math.log(p.pop.q), math.log(p.alpha), sid, fit.model_kind.value, vid, position.get(vid, 1))
            out["episodes_d_logq_logalpha"].append(row)
        else:
            row = (math.log(p.pop.q), math.log(p.beta_n), sid, fit.model_kind.value, vid, position.get(vid, 1))
            out["episodes_w_logq_logbetan"].append(row)
    return out
