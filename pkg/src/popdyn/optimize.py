"""Box-constrained Levenberg-Marquardt for small nonlinear least-squares problems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FitError

__all__ = ["LMSettings", "LMDiagnostics", "levenberg_marquardt", "forward_difference_jacobian"]


@dataclass(frozen=True)
class LMSettings:
    """Iteration controls.

    ``xtol`` bounds the largest per-component relative step at convergence;
    ``ftol`` bounds the relative decrease of the sum of squares.
    """

    max_iterations: int = 200
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.3
    xtol: float = 1e-10
    ftol: float = 1e-14
    gtol: float = 1e-14
    max_damping: float = 1e16

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.damping_up > 1 and 0 < self.damping_down < 1):
            raise ValueError("damping_up must exceed 1 and damping_down lie in (0, 1)")


@dataclass
class LMDiagnostics:
    iterations: int = 0
    evaluations: int = 0
    converged: bool = False
    reason: str = ""
    cost: float = np.inf
    initial_cost: float = np.inf
    cost_history: list = field(default_factory=list)

    @property
    def residual_norm(self) -> float:
        return float(np.sqrt(2.0 * self.cost))


def forward_difference_jacobian(fun, x, f0, rel_step=1e-6, lower=None, upper=None):
    """Forward-difference Jacobian; steps backward where the upper bound blocks."""
    x = np.asarray(x, dtype=float)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = rel_step * (abs(x[j]) if x[j] != 0 else 1.0)
        if upper is not None and x[j] + h > upper[j]:
            h = -h
        xp = x.copy()
        xp[j] += h
        # divide by the step actually taken after rounding
        jac[:, j] = (fun(xp) - f0) / (xp[j] - x[j])
    return jac


def _cost(r):
    return 0.5 * float(r @ r)


def levenberg_marquardt(residuals, x0, *, jacobian=None, lower=None, upper=None, project=None, settings=None):
    """Minimize ``0.5 * ||residuals(x)||**2`` subject to ``lower <= x <= upper``.

    Uses Marquardt's diagonal scaling of the damping term, so the iteration
    is invariant to rescaling individual parameters.  Trial points are
    projected onto the box (and through ``project`` for any extra
    constraint); parameters pinned at a bound with the gradient pointing
    outward are frozen for that step.  Steps are accepted only when they
    lower the cost.

    Args:
        residuals: callable mapping a parameter vector to a residual vector.
        x0: starting point; must give finite residuals.
        jacobian: optional callable returning the Jacobian; forward
            differences are used otherwise.
        lower, upper: bound vectors (``-inf``/``inf`` allowed).
        project: optional callable applied after box clipping.
        settings: :class:`LMSettings`.

    Returns:
        ``(x, diagnostics)``.  Hitting ``max_iterations`` is reported through
        ``diagnostics.converged = False`` rather than raised.
    """
    s = settings or LMSettings()
    x = np.array(x0, dtype=float)
    n = x.size
    lo = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if np.any(lo > hi):
        raise ValueError("lower bounds exceed upper bounds")

    def proj(z):
        z = np.clip(z, lo, hi)
        return project(z) if project is not None else z

    diag = LMDiagnostics()

    def evaluate(z):
        diag.evaluations += 1
        return np.asarray(residuals(z), dtype=float)

    x = proj(x)
    r = evaluate(x)
    if not np.all(np.isfinite(r)):
        raise FitError("residuals are not finite at the initial point")
    if jacobian is None:
        def jac_fn(z, rz):
            return forward_difference_jacobian(evaluate, z, rz, lower=lo, upper=hi)
    else:
        def jac_fn(z, rz):
            return np.asarray(jacobian(z), dtype=float)

    cost = _cost(r)
    diag.initial_cost = cost
    diag.cost_history.append(cost)
    lam = s.initial_damping
    J = jac_fn(x, r)

    while diag.iterations < s.max_iterations:
        diag.iterations += 1
        if cost == 0.0:
            diag.converged, diag.reason = True, "zero residual"
            break
        g = J.T @ r
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        if not np.any(free) or np.max(np.abs(g[free]) * np.maximum(np.abs(x[free]), 1.0)) <= s.gtol * cost:
            diag.converged, diag.reason = True, "stationary"
            break
        Jf = J[:, free]
        A = Jf.T @ Jf
        d = np.diag(A).copy()
        d = np.maximum(d, 1e-12 * max(d.max(), 1e-300))

        accepted = False
        while lam <= s.max_damping:
            try:
                step_f = np.linalg.solve(A + lam * np.diag(d), -g[free])
            except np.linalg.LinAlgError:
                lam *= s.damping_up
                continue
            step = np.zeros(n)
            step[free] = step_f
            x_new = proj(x + step)
            r_new = evaluate(x_new)
            cost_new = _cost(r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new < cost:
                accepted = True
                break
            lam *= s.damping_up
        if not accepted:
            diag.converged, diag.reason = True, "no further decrease"
            break

        dx = np.abs(x_new - x) / np.maximum(np.abs(x), 1e-300)
        rel_drop = (cost - cost_new) / cost
        x, r, cost = x_new, r_new, cost_new
        diag.cost_history.append(cost)
        lam = max(lam * s.damping_down, 1e-300)
        if np.max(dx) <= s.xtol:
            diag.converged, diag.reason = True, "step below xtol"
            break
        if rel_drop <= s.ftol:
            diag.converged, diag.reason = True, "cost decrease below ftol"
            break
        J = jac_fn(x, r)
    else:
        diag.reason = "max iterations"

    diag.cost = cost
    return x, diag
