"""Fit daily view traces to the DModel and WModel and pick the better one.

Both fits minimize the unweighted squared error between model daily counts
and observed counts over the full trace window, using the box-constrained
Levenberg-Marquardt solver from :mod:`popdyn.optimize` with several
deterministic starting points.  ``N`` is always supplied by the caller and
never fitted.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BothFitsFailedError, DataError, FitError, PopdynError
from .models import (
    DModelParams,
    PopulationConfig,
    Trace,
    WModelParams,
    dmodel_rate_raw,
    wmodel_increments,
)
from .optimize import LMSettings, levenberg_marquardt

__all__ = [
    "ModelKind",
    "FitOptions",
    "FitResult",
    "nmse",
    "fit_dmodel",
    "fit_wmodel",
    "select_best",
    "fit_batch",
    "dmodel_residual_jacobian",
    "DEFAULT_BOUNDS",
]


class ModelKind(str, enum.Enum):
    DMODEL = "DModel"
    WMODEL = "WModel"


# ``t_e`` upper bound defaults to the trace horizon and ``x0`` to just under qN.
DEFAULT_BOUNDS = {
    "alpha": (1e-5, 5.0),
    "q": (1e-9, 1.0),
    "t_e": (0.0, None),
    "gamma": (1e-5, 100.0),
    "beta_n": (1e-6, 100.0),
    "x0": (1e-6, None),
}


@dataclass(frozen=True)
class FitOptions:
    """Solver controls and parameter bounds.

    ``parameter_bounds`` overrides entries of :data:`DEFAULT_BOUNDS`; the
    WModel fan-out is bounded through ``beta_n`` (``beta * N``).
    """

    max_iterations: int = 300
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.3
    convergence_tol: float = 1e-10
    multistart_count: int = 8
    parameter_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.multistart_count < 1:
            raise ValueError("multistart_count must be >= 1")
        for name, (lo, hi) in self.parameter_bounds.items():
            if name not in DEFAULT_BOUNDS:
                raise ValueError(f"unknown parameter bound {name!r}")
            if lo is not None and hi is not None and lo > hi:
                raise ValueError(f"bounds for {name} are not ordered: {lo} > {hi}")

    def bounds(self, name):
        return self.parameter_bounds.get(name, DEFAULT_BOUNDS[name])

    def lm_settings(self) -> LMSettings:
        return LMSettings(
            max_iterations=self.max_iterations,
            initial_damping=self.initial_damping,
            damping_up=self.damping_up,
            damping_down=self.damping_down,
            xtol=self.convergence_tol,
        )


@dataclass(frozen=True)
class FitResult:
    model_kind: ModelKind
    params: DModelParams | WModelParams
    nmse: float
    iterations: int
    converged: bool
    residual_norm: float
    total_views: float = 0.0

    def predicted(self, horizon: int) -> np.ndarray:
        p = self.params
        t = np.arange(1, horizon + 1, dtype=float)
        if self.model_kind is ModelKind.DMODEL:
            return dmodel_rate_raw(t, p.alpha, p.pop.interested, p.t_e, p.gamma)
        return wmodel_increments(p.beta, p.pop.q, p.pop.N, p.x0, horizon)

    def as_record(self, video_id=None) -> dict:
        """Flat JSON-ready dict; keys absent for the other model are omitted."""
        p = self.params
        rec = {"video_id": video_id, "model_kind": self.model_kind.value}
        if self.model_kind is ModelKind.DMODEL:
            rec["alpha"] = p.alpha
        else:
            rec["beta"] = p.beta
        rec["q"] = p.pop.q
        rec["N"] = p.pop.N
        if self.model_kind is ModelKind.DMODEL:
            rec["t_e"] = p.t_e
            rec["gamma"] = p.gamma
        else:
            rec["x0"] = p.x0
        rec["nmse"] = self.nmse
        rec["converged"] = self.converged
        rec["iterations"] = self.iterations
        rec["residual_norm"] = self.residual_norm
        rec["total_views"] = self.total_views
        return rec


def _counts(trace) -> np.ndarray:
    return trace.counts if isinstance(trace, Trace) else np.asarray(trace, dtype=float)


def nmse(predicted, actual) -> float:
    """Mean squared error normalized by the squared mean of ``actual``."""
    vh, v = _counts(predicted), _counts(actual)
    if vh.shape != v.shape:
        raise DataError(f"length mismatch: {vh.size} predicted vs {v.size} actual")
    if v.size < 1:
        raise DataError("traces must contain at least one day")
    mean = v.mean()
    if mean == 0:
        raise DataError("actual trace has zero mean; NMSE undefined")
    return float(np.mean((vh - v) ** 2) / mean**2)


def _prepare(trace, N):
    v = _counts(trace).astype(float)
    if v.size < 1:
        raise DataError("empty trace")
    if not np.all(np.isfinite(v)):
        raise DataError("trace contains non-finite counts")
    if v.mean() == 0:
        raise DataError("trace has zero mean; NMSE undefined")
    if not N > 0:
        raise DataError(f"N must be positive, got {N}")
    return v


def _bound_vector(opts, names, dynamic):
    lo, hi = [], []
    for name in names:
        a, b = opts.bounds(name)
        if b is None:
            b = dynamic[name]
        lo.append(a)
        hi.append(b)
    return np.array(lo, float), np.array(hi, float)


# --------------------------------------------------------------------------
# DModel
# --------------------------------------------------------------------------

_D_NAMES = ("alpha", "q", "t_e", "gamma")


def dmodel_residual_jacobian(theta, t, N):
    """Analytic Jacobian of DModel daily rates w.r.t. ``(alpha, q, t_e, gamma)``."""
    alpha, q, t_e, gamma = theta
    v = dmodel_rate_raw(t, alpha, q * N, t_e, gamma)
    after = t > t_e
    jac = np.empty((t.size, 4))
    jac[:, 0] = v * (1.0 / alpha - np.where(after, t_e, t))
    jac[:, 1] = v / q
    jac[:, 2] = np.where(after, v * (gamma - alpha), 0.0)
    jac[:, 3] = np.where(after, -v * (t - t_e), 0.0)
    return jac


def _log_counts(v):
    return np.log(v + 1e-3 * max(v.max(), 1e-300))


def _cutoff_candidates(v, k=3):
    """Days ranked by the curvature of the log counts, most abrupt first."""
    T = v.size
    if T < 3:
        return [float(T)]
    curv = np.abs(np.diff(_log_counts(v), 2))
    order = np.argsort(-curv, kind="stable")[:k]
    return [float(i + 2) for i in order]


def _dmodel_initial(v, N, k_peak):
    T = v.size
    peak = v[k_peak]
    below = np.nonzero(v[k_peak:] <= peak / math.e)[0]
    if below.size and below[0] > 0:
        alpha = 1.0 / below[0]
    else:
        alpha = 1.0 / T
    return alpha


def _dmodel_starts(v, N, opts, lo, hi):
    T = v.size
    k_peak = int(np.argmax(v))
    alpha0 = _dmodel_initial(v, N, k_peak)
    cutoffs = _cutoff_candidates(v) + [float(T)]
    # log-slope between the peak and each cutoff candidate as further alpha guesses
    alphas = [alpha0]
    lv = _log_counts(v)
    for c in cutoffs:
        stop = int(min(c, T))
        if stop - 1 > k_peak + 1:
            slope = np.polyfit(np.arange(k_peak + 1, stop + 1), lv[k_peak:stop], 1)[0]
            if slope < 0:
                alphas.append(-slope)
    factors = np.geomspace(0.5, 2.0, max(opts.multistart_count - len(alphas), 1))
    alphas += [alpha0 * f for f in factors]

    starts = []
    for i in range(opts.multistart_count):
        a = float(np.clip(alphas[i % len(alphas)], lo[0], hi[0]))
        te = cutoffs[i % len(cutoffs)]
        tpk = min(k_peak + 1, te)
        q = float(np.clip(v[k_peak] * math.exp(a * tpk) / (a * N), lo[1], hi[1]))
        starts.append(np.array([a, q, float(np.clip(te, lo[2], hi[2])), 10.0 * a]))
    return starts


def fit_dmodel(trace, N, opts: FitOptions | None = None) -> FitResult:
    """Fit ``(alpha, q, t_e, gamma)`` to the daily counts with ``N`` fixed."""
    opts = opts or FitOptions()
    v = _prepare(trace, N)
    T = v.size
    t = np.arange(1, T + 1, dtype=float)
    lo, hi = _bound_vector(opts, _D_NAMES, {"t_e": float(T)})

    def residuals(th):
        return dmodel_rate_raw(t, th[0], th[1] * N, th[2], th[3]) - v

    def jacobian(th):
        return dmodel_residual_jacobian(th, t, N)

    def project(th):
        if th[3] <= th[0]:
            th = th.copy()
            th[3] = th[0] * (1 + 1e-9)
        return th

    best = None
    for start in _dmodel_starts(v, N, opts, lo, hi):
        x, diag = levenberg_marquardt(
            residuals, start, jacobian=jacobian, lower=lo, upper=hi, project=project,
            settings=opts.lm_settings(),
        )
        if best is None or diag.cost < best[1].cost:
            best = (x, diag)
    x, diag = best
    alpha, q, t_e, gamma = map(float, x)
    params = DModelParams(PopulationConfig(N, q), alpha=alpha, t_e=t_e, gamma=gamma)
    pred = residuals(x) + v
    return FitResult(
        ModelKind.DMODEL, params, nmse(pred, v), diag.iterations, diag.converged,
        diag.residual_norm, float(v.sum()),
    )


# --------------------------------------------------------------------------
# WModel
# --------------------------------------------------------------------------

_W_NAMES = ("beta_n", "q", "x0")


def _wmodel_ratio_init(v, N):
    """Initial ``(beta_n, q, x0)`` from the recursion's linear ratio law.

    The recursion gives ``v[t+1] / v[t] = B (qN - x0) - B * C[t]`` with
    ``C`` the cumulative views, so a weighted line through the observed
    ratios yields ``B = beta``, then ``x0`` from the first day and ``qN``.
    """
    cum = np.cumsum(v)
    ok = (v[:-1] > 1e-6 * v.max()) & (v[1:] > 1e-6 * v.max())
    if ok.sum() < 2:
        return None
    ratio = v[1:][ok] / v[:-1][ok]
    c = cum[:-1][ok]
    slope, intercept = np.polyfit(c, ratio, 1, w=np.sqrt(v[:-1][ok]))
    B = -slope
    if not (B > 0 and intercept > 0):
        return None
    x0 = v[0] / intercept if v[0] > 0 else 1.0
    qN = intercept / B + x0
    return B * N, qN / N, x0


def _wmodel_peak_init(v, N):
    """Fallback: the growth ratio crosses one at the peak, ``B (qN - x_peak) = 1``."""
    cum = np.cumsum(v)
    k = int(np.argmax(v))
    qN = min(max(1.5 * cum[-1], 1.0), N)
    x_peak = cum[k]
    B = 1.0 / max(qN - x_peak, 1e-9 * qN)
    x0 = max(v[0] / max(B * qN, 1e-12), 1e-3)
    return B * N, qN / N, x0


def _wmodel_starts(v, N, opts, lo, hi):
    inits = [i for i in (_wmodel_ratio_init(v, N), _wmodel_peak_init(v, N)) if i is not None]
    factors = np.geomspace(0.5, 2.0, max(opts.multistart_count - len(inits), 1))
    base = inits[0]
    inits += [(base[0] * f, base[1] / f**0.5, base[2]) for f in factors]
    starts = []
    for bn, q, x0 in inits[: opts.multistart_count]:
        th = np.clip([bn, q, x0], lo, hi)
        th[2] = min(th[2], 0.5 * th[1] * N)
        starts.append(th)
    return starts


def fit_wmodel(trace, N, opts: FitOptions | None = None) -> FitResult:
    """Fit ``(beta, q, x0)`` of the discrete WOM recursion with ``N`` fixed."""
    opts = opts or FitOptions()
    v = _prepare(trace, N)
    T = v.size
    lo, hi = _bound_vector(opts, _W_NAMES, {"x0": N})

    def project(th):
        cap = th[1] * N * (1 - 1e-9)
        if th[2] >= cap:
            th = th.copy()
            th[2] = cap
        return th

    def residuals(th):
        return wmodel_increments(th[0] / N, th[1], N, th[2], T) - v

    best = None
    for start in _wmodel_starts(v, N, opts, lo, hi):
        try:
            x, diag = levenberg_marquardt(
                residuals, start, lower=lo, upper=hi, project=project, settings=opts.lm_settings()
            )
        except FitError:
            continue
        if best is None or diag.cost < best[1].cost:
            best = (x, diag)
    if best is None:
        raise FitError("WModel fit failed from every starting point")
    x, diag = best
    beta_n, q, x0 = map(float, x)
    params = WModelParams(PopulationConfig(N, q), beta=beta_n / N, x0=x0)
    pred = residuals(x) + v
    return FitResult(
        ModelKind.WMODEL, params, nmse(pred, v), diag.iterations, diag.converged,
        diag.residual_norm, float(v.sum()),
    )


# --------------------------------------------------------------------------
# Model selection and batch fitting
# --------------------------------------------------------------------------


def select_best(trace, N, opts: FitOptions | None = None) -> FitResult:
    """Fit both models and keep the smaller NMSE; ties go to the DModel."""
    d_fit = w_fit = None
    d_err = w_err = None
    try:
        d_fit = fit_dmodel(trace, N, opts)
    except PopdynError as exc:
        d_err = exc
    try:
        w_fit = fit_wmodel(trace, N, opts)
    except PopdynError as exc:
        w_err = exc
    if d_fit is None and w_fit is None:
        if isinstance(d_err, DataError) and isinstance(w_err, DataError):
            raise d_err
        raise BothFitsFailedError(d_err, w_err)
    if w_fit is None:
        return d_fit
    if d_fit is None:
        return w_fit
    return d_fit if d_fit.nmse <= w_fit.nmse else w_fit


def _select_best_safe(args):
    trace, N, opts = args
    try:
        return select_best(trace, N, opts)
    except PopdynError as exc:
        return exc


def fit_batch(traces: dict, N, opts: FitOptions | None = None, workers: int | None = None) -> dict:
    """Run :func:`select_best` over many traces.

    Returns ``video_id -> FitResult`` with failed videos mapped to the raised
    exception instead.  ``N`` is a number or a ``video_id -> N`` mapping.
    ``workers > 1`` fans the fits out over processes; results are identical
    to the sequential run.
    """
    ids = list(traces)
    jobs = [(traces[i], N[i] if isinstance(N, dict) else N, opts) for i in ids]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_select_best_safe, jobs, chunksize=8))
    else:
        out = [_select_best_safe(j) for j in jobs]
    return dict(zip(ids, out))
