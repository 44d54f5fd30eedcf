"""Bounded Levenberg-Marquardt least squares.

A small, deterministic damped Gauss-Newton solver used by every fit in the
package.  Steps are accepted only when they lower the cost, so the recorded
cost history is non-increasing.  Bounds are handled by projecting trial
points onto the box; a projected step that fails to reduce the cost is
treated like any other rejected step (damping goes up).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateJacobian


@dataclass
class LsqResult:
    x: np.ndarray
    cost: float
    residuals: np.ndarray
    jacobian: np.ndarray
    covariance: np.ndarray
    stderr: np.ndarray
    n_iter: int
    n_eval: int
    converged: bool
    message: str
    cost_history: list[float] = field(default_factory=list)


def numeric_jacobian(fun, x, f0, lower, upper, rel_step=1e-7):
    """Forward-difference Jacobian, stepping away from a bound when needed."""
    m, n = f0.size, x.size
    jac = np.empty((m, n))
    for j in range(n):
        h = rel_step * max(abs(x[j]), 1.0)
        xj = x.copy()
        if x[j] + h > upper[j]:
            h = -h
        xj[j] = x[j] + h
        jac[:, j] = (fun(xj) - f0) / h
    return jac


def levenberg_marquardt(
    fun: Callable[[np.ndarray], np.ndarray],
    x0,
    *,
    jac: Callable[[np.ndarray], np.ndarray] | None = None,
    lower=None,
    upper=None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = 200,
    ftol: float = 1e-12,
    xtol: float = 1e-12,
    gtol: float = 1e-12,
    rel_step: float = 1e-7,
    rank_rtol: float = 1e-7,
    damping0: float = 1e-3,
) -> LsqResult:
    """Minimize ``0.5 * sum(fun(x)**2)``.

    ``fun`` returns the (already weighted) residual vector.  ``project`` may
    impose constraints beyond the box (applied after clipping).  Raises
    :class:`DegenerateJacobian` if the Jacobian at ``x0`` is rank deficient.
    Hitting ``max_iter`` is not an error: the result has ``converged=False``.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)

    def constrain(z):
        z = np.clip(z, lower, upper)
        return project(z) if project is not None else z

    x = constrain(x)
    n_eval = 0

    def evaluate(z):
        nonlocal n_eval
        n_eval += 1
        return np.asarray(fun(z), dtype=float)

    def jacobian(z, fz):
        if jac is not None:
            return np.asarray(jac(z), dtype=float)
        return numeric_jacobian(evaluate, z, fz, lower, upper, rel_step)

    f = evaluate(x)
    if not np.all(np.isfinite(f)):
        raise DegenerateJacobian("residuals are not finite at the initial guess")
    J = jacobian(x, f)
    # rank test on unit-norm columns so parameter units do not matter
    norms = np.linalg.norm(J, axis=0)
    sv = np.linalg.svd(J / np.where(norms > 0, norms, 1.0), compute_uv=False)
    if sv.size < n or np.any(norms == 0) or sv[-1] <= rank_rtol * sv[0]:
        raise DegenerateJacobian(
            f"Jacobian rank deficient at initial guess (singular values {sv.min() if sv.size else 0:.3g}"
            f" / {sv.max() if sv.size else 0:.3g})"
        )

    cost = 0.5 * float(f @ f)
    history = [cost]
    lam = damping0
    converged = False
    message = "iteration cap reached"
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ f
        if np.max(np.abs(g)) <= gtol * max(cost, 1e-300) ** 0.5 * max(np.max(np.abs(J)), 1.0):
            converged, message = True, "gradient tolerance"
            break
        A = J.T @ J
        scale = np.maximum(np.diag(A), 1e-300)
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(scale), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = constrain(x + step)
            f_new = evaluate(x_new)
            cost_new = 0.5 * float(f_new @ f_new) if np.all(np.isfinite(f_new)) else np.inf
            if cost_new < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        dx = x_new - x
        dcost = cost - cost_new
        x, f, cost = x_new, f_new, cost_new
        history.append(cost)
        lam = max(lam / 10.0, 1e-12)
        J = jacobian(x, f)
        if dcost <= ftol * max(cost, 1e-300) or dcost <= 1e-300:
            converged, message = True, "cost tolerance"
            break
        if np.all(np.abs(dx) <= xtol * (np.abs(x) + xtol)):
            converged, message = True, "step tolerance"
            break

    m = f.size
    A = J.T @ J
    dof = max(m - n, 1)
    s2 = 2.0 * cost / dof
    try:
        cov = np.linalg.pinv(A) * s2
    except np.linalg.LinAlgError:
        cov = np.full((n, n), np.nan)
    stderr = np.sqrt(np.clip(np.diag(cov), 0, None))
    return LsqResult(
        x=x, cost=cost, residuals=f, jacobian=J, covariance=cov, stderr=stderr,
        n_iter=it, n_eval=n_eval, converged=converged, message=message, cost_history=history,
    )
