"""Agent-level Monte Carlo realizations of the two diffusion processes.

Every agent is ``UNAWARE``, ``INTERESTED`` (has watched, or will watch) or
``NOT_INTERESTED``.  Agents are exchangeable and decide independently, so the
direct-recommendation process is simulated by drawing each agent's exposure
day once; the word-of-mouth process samples individual recommendation
targets with replacement.

Post-cutoff direct views use a delayed-viewing tail: when promotion stops
after day ``t_e``, each still-unaware agent is exposed to the last promotion
with probability ``alpha / gamma`` and, if interested, watches after a
geometric delay with per-day completion probability ``1 - exp(-gamma)``.
The expected daily tail then matches the fluid ``gamma``-decay in shape and
total mass.  This is one admissible agent reading of that decay.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .models import DModelParams, Trace, WModelParams

__all__ = [
    "AgentState",
    "SimConfig",
    "AgentRun",
    "run_direct",
    "run_wom",
    "simulate",
    "simulate_direct",
    "simulate_wom",
    "replication_seeds",
    "mean_cumulative",
    "add_observation_noise",
    "SubUnitFanoutWarning",
]


class AgentState(enum.IntEnum):
    UNAWARE = 0
    INTERESTED = 1
    NOT_INTERESTED = 2


class SubUnitFanoutWarning(UserWarning):
    """Fan-out below one recommendation per viewer, realized as a Bernoulli draw."""


@dataclass(frozen=True)
class SimConfig:
    model: DModelParams | WModelParams
    horizon: int
    rng_seed: int = 0
    replications: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")


@dataclass(frozen=True)
class AgentRun:
    """One replication.

    ``states[t]`` holds the counts of agents per :class:`AgentState` at the
    end of day ``t`` (row 0 is the initial condition).
    """

    trace: Trace
    states: np.ndarray


def replication_seeds(seed: int, replications: int) -> list[np.random.SeedSequence]:
    """Independent child seeds for each replication, derived from one root seed."""
    return np.random.SeedSequence(seed).spawn(replications)


def _population_size(N) -> int:
    n = int(round(N))
    if n < 1:
        raise ConfigurationError(f"population rounds to {n} < 1 agents")
    return n


def run_direct(params: DModelParams, horizon: int, rng: np.random.Generator, *, alpha=None) -> AgentRun:
    """Simulate direct recommendation for ``horizon`` days.

    Each unaware agent is exposed on a given promotion day with probability
    ``1 - exp(-alpha)`` and watches that day with probability ``q``.
    ``alpha`` overrides ``params.alpha`` (e.g. to run with zero promotion).
    """
    n = _population_size(params.pop.N)
    q, gamma = params.pop.q, params.gamma
    alpha = params.alpha if alpha is None else alpha
    last_promo_day = horizon if math.isinf(params.t_e) else min(int(math.floor(params.t_e)), horizon)

    # day on which each agent is exposed; 0 = never
    p_day = -math.expm1(-alpha)
    exposure = rng.geometric(p_day, size=n) if p_day > 0 else np.zeros(n, dtype=np.int64)
    exposure[exposure > last_promo_day] = 0
    interested = rng.random(n) < q
    view_day = np.where(interested, exposure, 0)

    if last_promo_day < horizon:
        pending = (exposure == 0) & (rng.random(n) < alpha / gamma)
        tail_day = last_promo_day + rng.geometric(-math.expm1(-gamma), size=n)
        exposure = np.where(pending, last_promo_day, exposure)
        view_day = np.where(pending & interested & (tail_day <= horizon), tail_day, view_day)

    bins = horizon + 1
    views = np.bincount(view_day, minlength=bins)[1:bins].astype(float)
    aware = np.cumsum(np.bincount(exposure, minlength=bins)[:bins])
    liked = np.cumsum(np.bincount(exposure[interested], minlength=bins)[:bins])
    # index 0 of the bincounts holds never-exposed agents
    aware -= aware[0]
    liked -= liked[0]
    states = np.column_stack([n - aware, liked, aware - liked])
    return AgentRun(Trace(views), states)


def _fanout_sampler(beta_n: float):
    if beta_n < 0:
        raise ConfigurationError(f"fan-out beta*N must be >= 0, got {beta_n}")
    if 0 < beta_n < 1:
        warnings.warn(
            f"beta*N = {beta_n} < 1: each viewer recommends one user with probability beta*N",
            SubUnitFanoutWarning,
            stacklevel=3,
        )
    whole = int(math.floor(beta_n))
    frac = beta_n - whole

    def draw(rng, viewers):
        total = whole * viewers
        if frac > 0:
            total += int(rng.binomial(viewers, frac))
        return total

    return draw


def run_wom(params: WModelParams, horizon: int, rng: np.random.Generator, *, beta_n=None) -> AgentRun:
    """Simulate word-of-mouth diffusion for ``horizon`` slots.

    Each viewer who became interested in the previous slot recommends the
    video to ``beta * N`` uniformly random agents (with replacement, self
    included); a fractional fan-out is realized as ``floor`` plus a
    Bernoulli draw on the remainder so the mean matches ``beta * N``.
    ``beta_n`` overrides ``params.beta * N`` (e.g. to run with zero fan-out).
    """
    n = _population_size(params.pop.N)
    seeds = int(round(params.x0))
    if seeds < 1:
        raise ConfigurationError(f"x0={params.x0} rounds to fewer than one seed agent")
    draw = _fanout_sampler(params.beta_n if beta_n is None else beta_n)
    q = params.pop.q

    state = np.zeros(n, dtype=np.int8)
    seed_ids = rng.choice(n, size=seeds, replace=False)
    state[seed_ids] = AgentState.INTERESTED
    new_viewers = seeds
    views = np.zeros(horizon)
    states = np.zeros((horizon + 1, 3), dtype=np.int64)
    counts = np.array([n - seeds, seeds, 0], dtype=np.int64)
    states[0] = counts
    for t in range(horizon):
        k = draw(rng, new_viewers) if new_viewers else 0
        if k:
            targets = np.unique(rng.integers(0, n, size=k))
            fresh = targets[state[targets] == AgentState.UNAWARE]
            likes = rng.random(fresh.size) < q
            state[fresh[likes]] = AgentState.INTERESTED
            state[fresh[~likes]] = AgentState.NOT_INTERESTED
            new_viewers = int(likes.sum())
            counts = counts + np.array([-fresh.size, new_viewers, fresh.size - new_viewers])
        else:
            new_viewers = 0
        views[t] = new_viewers
        states[t + 1] = counts
    return AgentRun(Trace(views, initial=float(seeds)), states)


def simulate(cfg: SimConfig) -> list[AgentRun]:
    """All replications of ``cfg``; replication ``i`` uses the ``i``-th child seed."""
    runner = run_direct if isinstance(cfg.model, DModelParams) else run_wom
    return [
        runner(cfg.model, cfg.horizon, np.random.default_rng(s))
        for s in replication_seeds(cfg.rng_seed, cfg.replications)
    ]


def simulate_direct(cfg: SimConfig) -> list[Trace]:
    if not isinstance(cfg.model, DModelParams):
        raise ConfigurationError("simulate_direct needs DModelParams")
    return [r.trace for r in simulate(cfg)]


def simulate_wom(cfg: SimConfig) -> list[Trace]:
    if not isinstance(cfg.model, WModelParams):
        raise ConfigurationError("simulate_wom needs WModelParams")
    return [r.trace for r in simulate(cfg)]


def mean_cumulative(traces) -> np.ndarray:
    """Mean cumulative trajectory over replications (order independent)."""
    return np.mean([t.cumulative() for t in traces], axis=0)


def add_observation_noise(trace: Trace, relative_sd: float, rng_seed=None) -> Trace:
    """Multiply each count by an independent mean-one lognormal factor.

    ``relative_sd`` is the standard deviation of the factor itself.
    """
    if relative_sd < 0:
        raise ConfigurationError("relative_sd must be >= 0")
    if relative_sd == 0:
        return trace
    rng = np.random.default_rng(rng_seed)
    sigma2 = math.log1p(relative_sd**2)
    factor = np.exp(rng.normal(-0.5 * sigma2, math.sqrt(sigma2), size=trace.horizon))
    return Trace(trace.counts * factor, initial=trace.initial)
