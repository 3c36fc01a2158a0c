"""Damped least-squares (Levenberg-Marquardt) minimiser.

Minimises ||r(x)||^2 for a residual callable and a Jacobian callable.  Steps
solve (J^T J + lam * diag(J^T J)) d = -J^T r; rejected trial points raise the
damping without rebuilding the Jacobian, so the objective is non-increasing
across accepted iterations by construction.  Small and dense on purpose: the
reconstruction problems have at most a few dozen unknowns, while each
residual evaluation hides thousands of PDE time steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LMSettings:
    max_iterations: int = 200
    step_tol: float = 1e-8
    objective_decrease_tol: float = 1e-10
    fd_increment: float = 1e-6
    lambda_init: float = 1e-3
    lambda_factor: float = 3.0
    max_rejects: int = 30


@dataclass
class LMResult:
    x: np.ndarray
    objective: float
    iterations: int
    status: str
    objective_history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status in ("step_tol", "objective_tol")


def levenberg_marquardt(residual, jacobian, x0, settings: LMSettings = LMSettings()) -> LMResult:
    """Minimise ||residual(x)||^2 starting from x0.

    ``residual(x)`` returns the residual vector, ``jacobian(x)`` its dense
    Jacobian.  Iterations count accepted steps; each builds one Jacobian.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual(x)
    obj = float(r @ r)
    if not np.isfinite(obj):
        raise ValueError("objective is not finite at the initial point")
    history = [obj]
    lam = settings.lambda_init
    status = "max_iterations"
    iterations = 0

    while iterations < settings.max_iterations:
        jac = jacobian(x)
        grad = jac.T @ r
        hess = jac.T @ jac
        diag = np.diag(hess).copy()
        floor = 1e-14 * max(diag.max(), 1.0)
        np.maximum(diag, floor, out=diag)

        accepted = False
        x_new = x
        obj_new = obj
        step = None
        for _ in range(settings.max_rejects):
            step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            x_try = x + step
            r_try = residual(x_try)
            obj_try = float(r_try @ r_try)
            if not np.isfinite(obj_try):
                raise ValueError(f"objective became non-finite at iteration {iterations}")
            if obj_try <= obj:
                accepted = True
                x_new, r, obj_new = x_try, r_try, obj_try
                lam = max(lam / settings.lambda_factor, 1e-14)
                break
            lam *= settings.lambda_factor
            if lam > 1e14:
                break
        if not accepted:
            status = "stalled"
            break

        iterations += 1
        history.append(obj_new)
        rel_step = np.linalg.norm(step) / max(np.linalg.norm(x_new), 1e-300)
        rel_decrease = (obj - obj_new) / max(obj, 1e-300)
        x, obj = x_new, obj_new
        if rel_step < settings.step_tol:
            status = "step_tol"
            break
        if rel_decrease < settings.objective_decrease_tol:
            status = "objective_tol"
            break

    return LMResult(x, obj, iterations, status, history)


def finite_difference_jacobian(residual, x, increment: float, scheme: str = "forward",
                               base_residual=None) -> np.ndarray:
    """Dense finite-difference Jacobian of a residual callable.

    Step per coordinate is ``increment * max(1, |x_l|)``.  The forward scheme
    reuses ``base_residual`` when provided.
    """
    x = np.asarray(x, dtype=float)
    if scheme == "forward" and base_residual is None:
        base_residual = residual(x)
    cols = []
    for l in range(x.size):
        h = increment * max(1.0, abs(x[l]))
        xp = x.copy()
        xp[l] += h
        if scheme == "forward":
            cols.append((residual(xp) - base_residual) / h)
        else:
            xm = x.copy()
            xm[l] -= h
            cols.append((residual(xp) - residual(xm)) / (2.0 * h))
    return np.column_stack(cols)
