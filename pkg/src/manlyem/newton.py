"""
EM-gradient M-step: analytic gradient and Hessian of the per-component
objective in the skew vector, a single safeguarded Newton update, and the
closed-form weight/mean/covariance updates.

With ``y_i = M(x_i | lam)``, ``w_i = dy_i/dlam`` and ``v_i = d2y_i/dlam2``
(element-wise), and ``r_i = Sigma^{-1} (mu - y_i)``::

    grad = -sum_i z_i (r_i * w_i + x_i)
    H    =  Sigma^{-1} * (sum_i z_i w_i w_i')  -  diag(sum_i z_i r_i * v_i)

where ``*`` is the Hadamard product.  ``mu`` and ``Sigma`` are held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve

from . import _fused
from .exceptions import EmptyComponentError, FactorizationError, ManlyError
from .model import ComponentParams, Dataset, MixtureModel, _objective, cholesky
from .transform import as_skew_vector, manly_forward, v_kernel, w_kernel

RIDGE_RELATIVE = 1e-10
RIDGE_ABSOLUTE = 1e-6


@dataclass(frozen=True)
class SafeguardOptions:
    max_halvings: int = 20
    backtrack: float = 0.5
    max_backtracks: int = 60


@dataclass(frozen=True)
class NewtonStepReport:
    lambda_new: np.ndarray
    objective_before: float
    objective_after: float
    damping_exponent: int
    fallback_used: bool


def _grad_hess(x, z_col, mu, chol, lam, hessian=True):
    grad, hess = _fused.grad_hess(x, z_col, mu, chol, lam, hessian)
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
        rows = x[z_col != 0]
        manly_forward(rows, lam)
        w_kernel(rows, lam)
        if hessian:
            v_kernel(rows, lam)
    return grad, (hess if hessian else None)


def gradient_O(data: Dataset, z_col, comp: ComponentParams) -> np.ndarray:
    """Gradient of the component objective with respect to the skew vector."""
    z_col = np.asarray(z_col, dtype=float)
    return _grad_hess(data.x, z_col, comp.mu, comp.chol, comp.lam, hessian=False)[0]


def hessian_O(data: Dataset, z_col, comp: ComponentParams) -> np.ndarray:
    """Hessian of the component objective with respect to the skew vector."""
    z_col = np.asarray(z_col, dtype=float)
    return _grad_hess(data.x, z_col, comp.mu, comp.chol, comp.lam)[1]


def _evaluate(objective, lam):
    try:
        value = objective(lam)
    except (ManlyError, FloatingPointError, np.linalg.LinAlgError):
        return np.inf
    return value if np.isfinite(value) else np.inf


def safeguarded_newton_step(
    objective: Callable[[np.ndarray], float],
    derivatives: Callable[[np.ndarray], tuple],
    lam,
    opts: SafeguardOptions = SafeguardOptions(),
) -> NewtonStepReport:
    """One Newton update ``lam - H^{-1} g`` that never increases ``objective``.

    The full step is tried first, then step halving ``2**-m`` for
    ``m = 1..max_halvings``.  If none of those lowers the objective, a
    backtracking gradient-descent step is tried; if that fails too the
    input is returned unchanged.
    """
    lam = np.asarray(lam, dtype=float)
    f0 = float(objective(lam))
    grad, hess = derivatives(lam)

    if not np.any(grad):
        return NewtonStepReport(lam.copy(), f0, f0, 0, False)

    direction = None
    try:
        direction = cho_solve((cholesky(hess), True), grad, check_finite=False)
    except FactorizationError:
        try:
            direction = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            direction = None
    if direction is not None and not np.all(np.isfinite(direction)):
        direction = None

    if direction is not None:
        for m in range(opts.max_halvings + 1):
            cand = lam - 2.0**-m * direction
            f1 = _evaluate(objective, cand)
            if f1 <= f0:
                return NewtonStepReport(cand, f0, f1, m, False)

    # steepest descent, first trial step capped at unit length
    step = 1.0 / max(1.0, float(np.max(np.abs(grad))))
    for m in range(opts.max_backtracks + 1):
        cand = lam - step * opts.backtrack**m * grad
        f1 = _evaluate(objective, cand)
        if f1 <= f0:
            return NewtonStepReport(cand, f0, f1, m, True)
    return NewtonStepReport(lam.copy(), f0, f0, opts.max_backtracks, True)


def newton_lambda_step(
    data: Dataset,
    z_col,
    comp: ComponentParams,
    opts: SafeguardOptions = SafeguardOptions(),
) -> NewtonStepReport:
    """Safeguarded Newton update of ``comp.lam`` with ``mu`` and ``Sigma`` fixed."""
    z_col = np.asarray(z_col, dtype=float)
    x, mu, chol = data.x, comp.mu, comp.chol
    return safeguarded_newton_step(
        lambda lam: _objective(x, z_col, mu, chol, lam),
        lambda lam: _grad_hess(x, z_col, mu, chol, lam),
        comp.lam,
        opts,
    )


def weighted_moments(x, z_col, lam):
    """Weighted mean and ML covariance of the transformed data.

    Returns ``(n_g, mu, sigma)``; no ridge is applied.
    """
    n_g, mu, sigma = _fused.moments(x, z_col, lam)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        manly_forward(x[z_col != 0], lam)
    return float(n_g), mu, sigma


def ridge_floor(sigma):
    """Return ``(sigma, chol)``, adding a small ridge only if factorization fails."""
    try:
        return sigma, cholesky(sigma)
    except FactorizationError:
        p = sigma.shape[0]
        tr = float(np.trace(sigma))
        ridge = RIDGE_RELATIVE * tr / p if tr > 0 else RIDGE_ABSOLUTE
        floored = sigma + ridge * np.eye(p)
        return floored, cholesky(floored)


def closed_form_updates(
    data: Dataset,
    resp,
    lambdas: Sequence,
    n_min: Optional[float] = None,
) -> MixtureModel:
    """Weights ``n_g/n``, weighted means and ML covariances on the transformed scale."""
    resp = np.asarray(resp, dtype=float)
    n, p = data.x.shape
    n_min = p + 1 if n_min is None else n_min
    comps = []
    for g, lam in enumerate(lambdas):
        lam = as_skew_vector(lam, p)
        z_col = resp[:, g]
        n_g = float(z_col.sum())
        if n_g < n_min:
            raise EmptyComponentError(
                f"component {g} has effective size {n_g:.3g} < {n_min}", component=g
            )
        _, mu, sigma = weighted_moments(data.x, z_col, lam)
        sigma, _ = ridge_floor(sigma)
        comps.append(ComponentParams(pi=n_g / n, mu=mu, sigma=sigma, lam=lam))
    return MixtureModel(tuple(comps))
