"""Dense Levenberg-Marquardt least squares with central-difference Jacobians."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

ResidualFn = Callable[[np.ndarray], np.ndarray]


class NonFiniteResidualError(ValueError):
    pass


class Termination(str, enum.Enum):
    ZERO_RESIDUAL = "zero_residual"
    COST_TOLERANCE = "cost_tolerance"
    PARAM_TOLERANCE = "param_tolerance"
    GRADIENT_TOLERANCE = "gradient_tolerance"
    MAX_ITERATIONS = "max_iterations"
    DAMPING_OVERFLOW = "damping_overflow"


@dataclass(frozen=True)
class LsqOptions:
    max_iterations: int = 200
    cost_tolerance: float = 1e-10
    param_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-12
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    jacobian_eps: float = 1e-6
    max_damping: float = 1e16

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("cost_tolerance", "param_tolerance", "gradient_tolerance",
                     "initial_damping", "damping_up", "damping_down", "jacobian_eps",
                     "max_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "LsqOptions":
        return cls(**(d or {}))


@dataclass
class LsqReport:
    final_params: np.ndarray
    final_cost: float
    initial_cost: float
    iterations: int
    converged: bool
    termination_reason: Termination
    cost_history: list[float] = field(default_factory=list)
    n_residuals: int = 0

    @property
    def rmse(self) -> float:
        """Root mean square of the final residual vector."""
        n = self.n_residuals
        return float(np.sqrt(self.final_cost / n)) if n else 0.0


def _residuals(fn: ResidualFn, x: np.ndarray) -> np.ndarray:
    r = np.asarray(fn(x), dtype=float).reshape(-1)
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidualError("residual function returned non-finite values")
    return r


def numeric_jacobian(residual_fn: ResidualFn, params, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with per-parameter step eps * max(1, |x_j|)."""
    x = np.asarray(params, dtype=float).reshape(-1)
    cols = []
    for j in range(x.size):
        h = eps * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        # actual representable step
        step = xp[j] - xm[j]
        cols.append((_residuals(residual_fn, xp) - _residuals(residual_fn, xm)) / step)
    if not cols:
        return np.zeros((_residuals(residual_fn, x).size, 0))
    return np.column_stack(cols)


def _solve_damped(JtJ: np.ndarray, g: np.ndarray, lam: float, scale: np.ndarray):
    A = JtJ + lam * np.diag(scale)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    y = np.linalg.solve(L, -g)
    return np.linalg.solve(L.T, y)


def solve_least_squares(residual_fn: ResidualFn, initial, opts: LsqOptions | None = None,
                        jacobian: Callable[[np.ndarray], np.ndarray] | None = None) -> LsqReport:
    """Minimize ``sum(residual_fn(x) ** 2)`` starting from ``initial``.

    Damping is Marquardt-scaled (proportional to diag(J^T J)). A rejected step or
    a failed Cholesky factorization multiplies the damping by ``damping_up``; an
    accepted step multiplies it by ``damping_down``. The accepted cost sequence
    never increases.

    Raises:
        NonFiniteResidualError: the residual is not finite at ``initial``.
    """
    opts = opts or LsqOptions()
    x = np.array(initial, dtype=float).reshape(-1)
    jac = jacobian or (lambda p: numeric_jacobian(residual_fn, p, opts.jacobian_eps))

    r = _residuals(residual_fn, x)
    cost = float(r @ r)
    initial_cost = cost
    history = [cost]

    def report(iters, converged, reason):
        return LsqReport(x, cost, initial_cost, iters, converged, reason, history, r.size)

    if cost == 0.0:
        return report(0, True, Termination.ZERO_RESIDUAL)

    lam = opts.initial_damping
    J = jac(x)
    iterations = 0
    while iterations < opts.max_iterations:
        iterations += 1
        JtJ = J.T @ J
        g = J.T @ r
        if np.max(np.abs(g), initial=0.0) <= opts.gradient_tolerance * (1.0 + cost):
            return report(iterations - 1, True, Termination.GRADIENT_TOLERANCE)
        diag = np.diag(JtJ).copy()
        scale = np.maximum(diag, 1e-12 * max(float(diag.max(initial=0.0)), 1.0))

        while True:
            step = _solve_damped(JtJ, g, lam, scale)
            if step is not None:
                x_new = x + step
                try:
                    r_new = _residuals(residual_fn, x_new)
                    cost_new = float(r_new @ r_new)
                except NonFiniteResidualError:
                    cost_new = np.inf
                if cost_new <= cost:
                    break
            lam *= opts.damping_up
            if lam > opts.max_damping:
                return report(iterations, False, Termination.DAMPING_OVERFLOW)

        decrease = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam * opts.damping_down, 1e-20)

        if cost == 0.0:
            return report(iterations, True, Termination.ZERO_RESIDUAL)
        if decrease <= opts.cost_tolerance * (cost + decrease):
            return report(iterations, True, Termination.COST_TOLERANCE)
        if np.linalg.norm(step) <= opts.param_tolerance * (np.linalg.norm(x) + opts.param_tolerance):
            return report(iterations, True, Termination.PARAM_TOLERANCE)
        J = jac(x)

    log.debug("least squares hit max_iterations=%d (cost %.3g)", opts.max_iterations, cost)
    return report(iterations, False, Termination.MAX_ITERATIONS)
