"""Direct-recommendation (DModel) and word-of-mouth (WModel) diffusion models.

Both models track a fixed population of ``N`` potential users split into
unaware users ``s(t)``, interested viewers ``x(t)`` and aware-but-uninterested
users ``y(t) = x(t) (1 - q) / q``.  ``x(t)`` is the cumulative view count and
its increments are the daily views.

The DModel is driven by a promotion rate ``alpha`` that stops at ``t_e``,
after which the view rate collapses with rate ``gamma``.  The WModel is a
discrete slot recursion in which each new viewer recommends the video to
``beta * N`` random users during the slot after watching it; a continuous
approximation of it has a closed-form logistic-like solution whose limit
``x1`` is the final audience.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDiscriminantError, DomainError, ParameterError

__all__ = [
    "PopulationConfig",
    "DModelParams",
    "WModelParams",
    "WDerived",
    "Trace",
    "population_split",
    "dmodel_cumulative",
    "dmodel_view_rate",
    "dmodel_trace",
    "wmodel_increments",
    "wmodel_discrete_trace",
    "wmodel_continuous_cumulative",
    "wmodel_derived",
    "wmodel_final_population",
    "diffusion_threshold",
    "dx1_dx0",
    "dx1_dbeta",
    "inflection_beta",
    "InflectionReport",
    "final_population_x1",
]

DEFAULT_GAMMA_RATIO = 10.0


@dataclass(frozen=True)
class PopulationConfig:
    """Potential population ``N`` and intrinsic attractiveness ``q``."""

    N: float
    q: float

    def __post_init__(self):
        if not (math.isfinite(self.N) and self.N > 0):
            raise ParameterError(f"N must be positive, got {self.N}")
        if not (0 < self.q <= 1):
            raise ParameterError(f"q must lie in (0, 1], got {self.q}")

    @property
    def interested(self) -> float:
        """Size ``q * N`` of the population that would watch if told."""
        return self.q * self.N


@dataclass(frozen=True)
class DModelParams:
    """DModel parameters.  ``gamma`` defaults to ``10 * alpha``."""

    pop: PopulationConfig
    alpha: float
    t_e: float = math.inf
    gamma: float | None = None

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if not self.t_e >= 0:
            raise ParameterError(f"t_e must be >= 0, got {self.t_e}")
        if self.gamma is None:
            object.__setattr__(self, "gamma", DEFAULT_GAMMA_RATIO * self.alpha)
        if not (self.gamma > self.alpha):
            raise ParameterError(f"gamma must exceed alpha ({self.gamma} <= {self.alpha})")


@dataclass(frozen=True)
class WModelParams:
    """WModel parameters.

    ``beta`` is the per-viewer fan-out normalized by ``N`` (``beta * N``
    users are recommended by each new viewer) and ``x0`` the fluid seed
    population, which may be fractional.
    """

    pop: PopulationConfig
    beta: float
    x0: float

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if not (0 < self.x0 < self.pop.interested):
            raise ParameterError(
                f"x0 must lie in (0, qN) = (0, {self.pop.interested}), got {self.x0}"
            )

    @property
    def beta_n(self) -> float:
        return self.beta * self.pop.N


@dataclass(frozen=True)
class WDerived:
    x1: float
    x2: float
    phi: float
    full_diffusion: bool


@dataclass(frozen=True)
class Trace:
    """Daily view counts ``v_1..v_T``.

    ``initial`` is the cumulative count already present at ``t = 0`` (the
    WModel seeds); ``cumulative()`` adds it back.
    """

    counts: np.ndarray = field(repr=False)
    initial: float = 0.0

    def __post_init__(self):
        counts = np.array(self.counts, dtype=float)
        if counts.ndim != 1 or counts.size < 1:
            raise DomainError("a trace needs at least one day of counts")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise DomainError("trace counts must be finite and nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def horizon(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def cumulative(self) -> np.ndarray:
        """Cumulative viewers at the end of days ``1..T``."""
        return self.initial + np.cumsum(self.counts)

    def __len__(self):
        return self.horizon


def population_split(pop: PopulationConfig, x):
    """Return ``(s, x, y)`` for a cumulative viewer count ``x``."""
    x = np.asarray(x, dtype=float)
    y = x * (1 - pop.q) / pop.q
    s = pop.N - x / pop.q
    return s, x, y


# --------------------------------------------------------------------------
# DModel
# --------------------------------------------------------------------------


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise DomainError("time must be >= 0")
    return t


def _scalar_or_array(value, like):
    return float(value) if np.ndim(like) == 0 else value


def dmodel_rate_raw(t, alpha, qN, t_e, gamma):
    """Vectorized piecewise view rate on plain floats (no validation)."""
    t = np.asarray(t, dtype=float)
    head = alpha * qN * np.exp(-alpha * np.minimum(t, t_e))
    return head * np.exp(-gamma * np.maximum(t - t_e, 0.0))


def dmodel_view_rate(p: DModelParams, t):
    """Instant view rate ``v(t)``; exponential decay with a faster tail after ``t_e``."""
    tt = _check_time(t)
    v = dmodel_rate_raw(tt, p.alpha, p.pop.interested, p.t_e, p.gamma)
    return _scalar_or_array(v, t)


def dmodel_cumulative(p: DModelParams, t):
    """Cumulative viewers ``x(t)``, integrating the tail past ``t_e``."""
    tt = _check_time(t)
    qN, a, te, g = p.pop.interested, p.alpha, p.t_e, p.gamma
    head = qN * -np.expm1(-a * np.minimum(tt, te))
    if math.isinf(te):
        return _scalar_or_array(head, t)
    tail = a * qN * math.exp(-a * te) / g * -np.expm1(-g * np.maximum(tt - te, 0.0))
    return _scalar_or_array(head + tail, t)


def dmodel_trace(p: DModelParams, horizon: int) -> Trace:
    """Model counts sampled at days ``1..horizon`` (the fitting target)."""
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    return Trace(dmodel_view_rate(p, np.arange(1, horizon + 1, dtype=float)))


# --------------------------------------------------------------------------
# WModel: discrete recursion
# --------------------------------------------------------------------------


def wmodel_increments(beta, q, N, x0, horizon):
    """Slot increments of the WOM recursion on plain floats.

    The first increment comes from the seeds recommending in slot 0.  Once
    the cumulative count reaches ``qN`` the last increment is clamped and the
    rest stay zero.
    """
    qN = q * N
    out = np.zeros(int(horizon))
    x = x0
    dx = beta * q * x0 * (N - x0 / q)
    for i in range(out.size):
        if x + dx >= qN:
            out[i] = qN - x
            break
        out[i] = dx
        x += dx
        dx = beta * q * dx * (N - x / q)
    return out


def wmodel_discrete_trace(p: WModelParams, horizon: int) -> Trace:
    """Daily views ``dx(1..T)`` of the WOM recursion, seeds stored as ``initial``."""
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    inc = wmodel_increments(p.beta, p.pop.q, p.pop.N, p.x0, horizon)
    return Trace(inc, initial=p.x0)


# --------------------------------------------------------------------------
# WModel: continuous closed form and its analytic properties
# --------------------------------------------------------------------------


def _phi_squared(beta, qN, x0):
    # (beta qN - 1)^2 - (beta x0 - 1)^2 + 1, factored to avoid cancellation
    return 1.0 + beta * (qN - x0) * (beta * (qN + x0) - 2.0)


def final_population_x1(beta, qN, x0):
    """Closed-form limit ``x1`` on plain floats; vectorizes over numpy inputs."""
    phi2 = _phi_squared(beta, qN, x0)
    if np.any(phi2 <= 0):
        raise DegenerateDiscriminantError(f"phi^2 = {phi2} <= 0")
    phi = np.sqrt(phi2)
    # qN + (phi - 1) / beta with phi - 1 = (phi^2 - 1) / (phi + 1)
    return qN + (qN - x0) * (beta * (qN + x0) - 2.0) / (phi + 1.0)


def diffusion_threshold(q, N, x0) -> float:
    """Fan-out ``2 / (qN + x0)`` at and above which everyone interested watches."""
    return 2.0 / (q * N + x0)


def wmodel_derived(p: WModelParams) -> WDerived:
    b, qN, x0 = p.beta, p.pop.interested, p.x0
    phi2 = _phi_squared(b, qN, x0)
    if not phi2 > 0:
        raise DegenerateDiscriminantError(f"phi^2 = {phi2} <= 0 for beta={b}, qN={qN}, x0={x0}")
    phi = math.sqrt(phi2)
    x1 = float(final_population_x1(b, qN, x0))
    x2 = qN - (phi + 1.0) / b
    return WDerived(x1=x1, x2=x2, phi=phi, full_diffusion=b >= diffusion_threshold(p.pop.q, p.pop.N, x0))


def wmodel_continuous_cumulative(p: WModelParams, t):
    """Closed-form ``x(t)`` of the continuous WOM approximation."""
    tt = _check_time(t)
    d = wmodel_derived(p)
    if not (d.x2 < p.x0 < d.x1):
        raise DomainError(f"x0={p.x0} not strictly between x2={d.x2} and x1={d.x1}")
    g = (d.x1 - p.x0) / (p.x0 - d.x2) * np.exp(-d.phi * tt)
    x = (d.x1 + g * d.x2) / (1.0 + g)
    return _scalar_or_array(x, t)


def wmodel_final_population(p: WModelParams) -> float:
    """Final audience ``min(x1, qN)``; the cap absorbs the continuous overshoot."""
    d = wmodel_derived(p)
    if d.full_diffusion:
        return p.pop.interested
    return min(d.x1, p.pop.interested)


def _require_below_threshold(p: WModelParams):
    thr = diffusion_threshold(p.pop.q, p.pop.N, p.x0)
    if not p.beta < thr:
        raise DomainError(f"beta={p.beta} must be below the diffusion threshold {thr}")
    d = wmodel_derived(p)
    return d


def dx1_dx0(p: WModelParams) -> float:
    """Sensitivity of ``x1`` to the seed population; positive below threshold."""
    d = _require_below_threshold(p)
    return -(p.beta * p.x0 - 1.0) / d.phi


def dx1_dbeta(p: WModelParams) -> float:
    """Sensitivity of ``x1`` to the fan-out ``beta``; positive below threshold."""
    d = _require_below_threshold(p)
    return (d.x1 - p.x0) / (d.phi * p.beta)


@dataclass(frozen=True)
class InflectionReport:
    """Located inflection of ``x1(beta)`` and how it compares to reference values.

    ``bracket`` is ``(1/(qN+x0), 2/(qN+x0))``, where the inflection is
    expected; ``half_reciprocal`` is the alternative closed-form guess
    ``1/(2(qN+x0))``, kept for comparison.
    """

    theta: float
    threshold: float
    bracket: tuple[float, float]
    in_bracket: bool
    half_reciprocal: float
    relative_gap_to_half_reciprocal: float
    iterations: int


def _second_difference_beta(qN, x0, beta, rel_step=1e-3):
    h = rel_step * beta
    f = final_population_x1
    return (f(beta + h, qN, x0) - 2.0 * f(beta, qN, x0) + f(beta - h, qN, x0)) / (h * h)


def inflection_beta(q, N, x0, *, atol=None, scan_points=400, max_iter=200) -> InflectionReport:
    """Locate where ``x1(beta)`` turns from convex to concave.

    The second central difference of ``x1`` in ``beta`` is scanned over
    ``(0, 2/(qN+x0))`` for its sign change, which is then refined by
    bisection.  Raises ``DomainError`` when no sign change exists.
    """
    PopulationConfig(N, q)
    qN = q * N
    if not 0 < x0 < qN:
        raise ParameterError(f"x0 must lie in (0, qN), got {x0}")
    thr = diffusion_threshold(q, N, x0)
    if atol is None:
        atol = thr * 1e-12
    grid = thr * np.arange(1, scan_points) / scan_points
    signs = np.sign([_second_difference_beta(qN, x0, b) for b in grid])
    flips = np.nonzero(signs[:-1] * signs[1:] < 0)[0]
    if flips.size == 0:
        raise DomainError("second difference of x1 in beta has no sign change below threshold")
    if flips.size > 1:
        raise DomainError(f"second difference changes sign {flips.size} times; inflection ambiguous")
    lo, hi = grid[flips[0]], grid[flips[0] + 1]
    s_lo = signs[flips[0]]
    it = 0
    while hi - lo > atol and it < max_iter:
        mid = 0.5 * (lo + hi)
        if np.sign(_second_difference_beta(qN, x0, mid)) == s_lo:
            lo = mid
        else:
            hi = mid
        it += 1
    theta = 0.5 * (lo + hi)
    interval = (1.0 / (qN + x0), thr)
    half = 1.0 / (2.0 * (qN + x0))
    return InflectionReport(
        theta=theta,
        threshold=thr,
        bracket=interval,
        in_bracket=interval[0] < theta < interval[1],
        half_reciprocal=half,
        relative_gap_to_half_reciprocal=(theta - half) / half,
        iterations=it,
    )
