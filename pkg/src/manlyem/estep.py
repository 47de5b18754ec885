"""Posterior component memberships."""

import numpy as np
from scipy.special import logsumexp

from .exceptions import DegeneratePointError
from .model import Dataset, MixtureModel, weighted_log_densities


def e_step(x, model: MixtureModel):
    """Responsibilities and observed log-likelihood in one pass.

    Returns
    -------
    z : ndarray, shape (n, G)
    loglik : float
    """
    logw = weighted_log_densities(x, model)
    norm = logsumexp(logw, axis=1)
    bad = ~np.isfinite(norm)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise DegeneratePointError(
            f"observation {row} has zero density under every component", row=row
        )
    z = np.exp(logw - norm[:, None])
    z /= z.sum(axis=1, keepdims=True)
    return z, float(norm.sum())


def responsibilities(data: Dataset, model: MixtureModel) -> np.ndarray:
    """``z[i, g] = pi_g f_g(x_i) / sum_h pi_h f_h(x_i)``, computed in log space."""
    return e_step(data.x, model)[0]


def check_responsibilities(z, n=None, G=None, atol=1e-10) -> np.ndarray:
    """Validate a responsibility matrix (entries in [0, 1], rows summing to one)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ValueError(f"responsibilities must be an (n, G) matrix, got shape {z.shape}")
    if n is not None and z.shape[0] != n:
        raise ValueError(f"responsibilities have {z.shape[0]} rows, expected {n}")
    if G is not None and z.shape[1] != G:
        raise ValueError(f"responsibilities have {z.shape[1]} columns, expected {G}")
    if np.any(z < -atol) or np.any(z > 1 + atol):
        raise ValueError("responsibilities must lie in [0, 1]")
    if np.max(np.abs(z.sum(axis=1) - 1.0)) > atol:
        raise ValueError("responsibility rows must sum to one")
    return z
