"""Synthetic parameter draws and traces for recovery and classification studies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fitting import ModelKind
from .models import (
    DModelParams,
    PopulationConfig,
    Trace,
    WModelParams,
    dmodel_trace,
    wmodel_discrete_trace,
)
from .simulator import add_observation_noise

__all__ = ["GenerationRanges", "SyntheticVideo", "draw_dmodel", "draw_wmodel", "synthetic_corpus"]


@dataclass(frozen=True)
class GenerationRanges:
    """Log-uniform ranges for synthetic parameters.

    WModel fan-out is drawn through the initial growth ratio ``beta * q * N``
    so that traces rise before they fall within the horizon.
    """

    horizon: int = 90
    N: tuple = (1e5, 1e7)
    alpha: tuple = (0.03, 0.3)
    q_direct: tuple = (0.05, 0.8)
    t_e: tuple = (10.0, 50.0)
    gamma_ratio: tuple = (5.0, 20.0)
    q_wom: tuple = (0.1, 0.8)
    growth: tuple = (1.5, 4.0)
    x0: tuple = (1.0, 50.0)


@dataclass(frozen=True)
class SyntheticVideo:
    video_id: str
    kind: ModelKind
    params: DModelParams | WModelParams
    trace: Trace


def _loguniform(rng, bounds):
    lo, hi = bounds
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def draw_dmodel(rng, ranges=GenerationRanges()) -> DModelParams:
    alpha = _loguniform(rng, ranges.alpha)
    return DModelParams(
        PopulationConfig(_loguniform(rng, ranges.N), _loguniform(rng, ranges.q_direct)),
        alpha=alpha,
        t_e=_loguniform(rng, ranges.t_e),
        gamma=alpha * _loguniform(rng, ranges.gamma_ratio),
    )


def draw_wmodel(rng, ranges=GenerationRanges()) -> WModelParams:
    N = _loguniform(rng, ranges.N)
    q = _loguniform(rng, ranges.q_wom)
    growth = _loguniform(rng, ranges.growth)
    return WModelParams(PopulationConfig(N, q), beta=growth / (q * N), x0=_loguniform(rng, ranges.x0))


def synthetic_corpus(n_videos, seed=0, *, relative_sd=0.0, ranges=GenerationRanges()) -> list[SyntheticVideo]:
    """Half DModel, half WModel traces (DModel first on odd counts)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_videos):
        if i % 2 == 0:
            p = draw_dmodel(rng, ranges)
            tr, kind = dmodel_trace(p, ranges.horizon), ModelKind.DMODEL
        else:
            p = draw_wmodel(rng, ranges)
            tr, kind = wmodel_discrete_trace(p, ranges.horizon), ModelKind.WMODEL
        if relative_sd > 0:
            tr = add_observation_noise(tr, relative_sd, rng.integers(2**63))
        out.append(SyntheticVideo(f"v{i:04d}", kind, p, tr))
    return out
