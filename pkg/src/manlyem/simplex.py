"""
Profile Nelder-Mead M-step.

For a fixed responsibility column, the mean and covariance that maximize the
weighted likelihood are closed-form functions of the skew vector, so the
M-step reduces to a derivative-free search over ``lam`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _fused
from .exceptions import EmptyComponentError, InvalidStartError, ManlyError
from .model import Dataset, _objective
from .newton import ridge_floor, weighted_moments
from .transform import as_skew_vector

PENALTY = 1e12


@dataclass(frozen=True)
class SimplexOptions:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    max_evals: Optional[int] = None  # None -> 500 * p
    xtol: float = 1e-8
    ftol: float = 1e-10
    initial_spread: float = 0.1

    def __post_init__(self):
        if not self.reflection > 0:
            raise ValueError("reflection coefficient must be positive")
        if not self.expansion > 1:
            raise ValueError("expansion coefficient must exceed 1")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction coefficient must lie in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink coefficient must lie in (0, 1)")


def _profile(x, z_col, lam):
    # with the ML mean and covariance plugged in, the weighted Mahalanobis
    # sum equals n_g * p, so only the log-determinant is needed
    value = _fused.profile_value(x, z_col, lam)
    if np.isnan(value):
        # not positive definite (or overflow): ridge and evaluate in full
        try:
            _, mu, sigma = weighted_moments(x, z_col, lam)
            sigma, chol = ridge_floor(sigma)
            value = _objective(x, z_col, mu, chol, lam)
        except (ManlyError, FloatingPointError):
            return PENALTY
    return value if np.isfinite(value) else PENALTY


def profile_objective(lam, data: Dataset, z_col, n_min: Optional[float] = None) -> float:
    """Component objective with mean and covariance profiled out.

    Degenerate covariances and transform overflow return ``PENALTY``.
    """
    z_col = np.asarray(z_col, dtype=float)
    n_min = data.p + 1 if n_min is None else n_min
    if z_col.sum() < n_min:
        raise EmptyComponentError(
            f"effective component size {z_col.sum():.3g} < {n_min}"
        )
    return _profile(data.x, z_col, as_skew_vector(lam, data.p))


def nelder_mead_minimize(
    f: Callable[[np.ndarray], float],
    init,
    opts: SimplexOptions = SimplexOptions(),
):
    """Minimize ``f`` by the Nelder-Mead simplex method.

    Returns
    -------
    best : ndarray
        Best vertex found.
    value : float
        ``f(best)``; never larger than ``f(init)``.
    """
    x0 = np.atleast_1d(np.asarray(init, dtype=float))
    p = x0.shape[0]
    max_evals = 500 * p if opts.max_evals is None else opts.max_evals
    evals = 0

    def call(v):
        nonlocal evals
        evals += 1
        val = float(f(v))
        return val if np.isfinite(val) else np.inf

    f0 = float(f(x0))
    evals += 1
    if not np.isfinite(f0):
        raise InvalidStartError(f"objective is not finite at the starting point ({f0})")

    verts = np.empty((p + 1, p))
    vals = np.empty(p + 1)
    verts[0], vals[0] = x0, f0
    for k in range(p):
        v = x0.copy()
        v[k] += max(opts.initial_spread, opts.initial_spread * abs(x0[k]))
        verts[k + 1] = v
        vals[k + 1] = call(v)

    alpha, gamma, beta, sigma = opts.reflection, opts.expansion, opts.contraction, opts.shrink
    while True:
        order = np.argsort(vals, kind="stable")
        verts, vals = verts[order], vals[order]
        if evals >= max_evals:
            break
        if np.max(np.abs(verts[1:] - verts[0])) < opts.xtol and vals[-1] - vals[0] < opts.ftol:
            break

        centroid = verts[:-1].mean(axis=0)
        worst = verts[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = call(xr)
        if fr < vals[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = call(xe)
            if fe < fr:
                verts[-1], vals[-1] = xe, fe
            else:
                verts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-2]:
            verts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:
            xc = centroid + beta * (xr - centroid)
            fc = call(xc)
            if fc <= fr:
                verts[-1], vals[-1] = xc, fc
                continue
        else:
            xc = centroid + beta * (worst - centroid)
            fc = call(xc)
            if fc < vals[-1]:
                verts[-1], vals[-1] = xc, fc
                continue
        best = verts[0]
        for j in range(1, p + 1):
            verts[j] = best + sigma * (verts[j] - best)
            vals[j] = call(verts[j])

    return verts[0].copy(), float(vals[0])
