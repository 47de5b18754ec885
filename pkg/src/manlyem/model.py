"""
Parameter containers and likelihood evaluation for Manly mixtures.

A component density is a Gaussian on the Manly-transformed scale times the
Jacobian ``exp(lam' x)``.  Every density goes through a Cholesky factor of
the component covariance; no explicit inverses are formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import _fused
from .exceptions import FactorizationError
from .transform import as_skew_vector, manly_forward

LOG_2PI = float(np.log(2.0 * np.pi))


def cholesky(sigma):
    """Lower Cholesky factor of ``sigma``; raises FactorizationError if not PD."""
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("covariance matrix is not positive definite") from exc
    if not np.all(np.isfinite(chol)):
        raise FactorizationError("covariance factorization produced non-finite entries")
    return chol


def gaussian_logpdf_chol(y, mu, chol):
    """Multivariate normal log-density of the rows of ``y`` given a Cholesky factor."""
    y = np.asarray(y, dtype=float)
    p = chol.shape[0]
    diff = np.atleast_2d(y - mu)
    sol = solve_triangular(chol, diff.T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", sol, sol)
    half_logdet = np.sum(np.log(np.diag(chol)))
    out = -0.5 * p * LOG_2PI - half_logdet - 0.5 * maha
    return out if y.ndim > 1 else out[0]


@dataclass(frozen=True)
class ComponentParams:
    """One mixture component: weight, transformed-scale mean/covariance, skew."""

    pi: float
    mu: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        p = mu.shape[0]
        sigma = np.asarray(self.sigma, dtype=float).reshape(p, p)
        lam = as_skew_vector(self.lam, p)
        pi = float(self.pi)
        if not (0.0 < pi <= 1.0):
            raise ValueError(f"mixing proportion must lie in (0, 1], got {pi}")
        scale = max(1.0, float(np.max(np.abs(sigma))))
        if np.max(np.abs(sigma - sigma.T)) > 1e-12 * scale:
            raise ValueError("covariance matrix is not symmetric")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "lam", lam)
        # fail fast on non-PD covariances
        self.chol

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    @cached_property
    def chol(self) -> np.ndarray:
        return cholesky(self.sigma)

    def replace(self, **changes) -> "ComponentParams":
        values = dict(pi=self.pi, mu=self.mu, sigma=self.sigma, lam=self.lam)
        values.update(changes)
        return ComponentParams(**values)

    def to_dict(self) -> dict:
        return {
            "pi": self.pi,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "lambda": self.lam.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, p: Optional[int] = None) -> "ComponentParams":
        mu = np.asarray(d["mu"], dtype=float)
        p = mu.shape[0] if p is None else p
        # sigma may be nested rows or a flat row-major list
        sigma = np.asarray(d["sigma"], dtype=float).reshape(p, p)
        return cls(pi=d["pi"], mu=mu, sigma=sigma, lam=d["lambda"])


@dataclass(frozen=True)
class MixtureModel:
    """Full parameter set of a G-component Manly mixture."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        p = comps[0].p
        if any(c.p != p for c in comps):
            raise ValueError("all components must share the same dimension")
        total = sum(c.pi for c in comps)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"mixing proportions sum to {total!r}, not 1")
        object.__setattr__(self, "components", comps)

    @property
    def G(self) -> int:
        return len(self.components)

    @property
    def p(self) -> int:
        return self.components[0].p

    @property
    def pis(self) -> np.ndarray:
        return np.array([c.pi for c in self.components])

    @property
    def lambdas(self) -> list:
        return [c.lam for c in self.components]

    def permuted(self, order: Sequence[int]) -> "MixtureModel":
        return MixtureModel(tuple(self.components[g] for g in order))

    def to_dict(self) -> dict:
        return {
            "G": self.G,
            "p": self.p,
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureModel":
        p = d.get("p")
        comps = tuple(ComponentParams.from_dict(c, p) for c in d["components"])
        model = cls(comps)
        if "G" in d and d["G"] != model.G:
            raise ValueError(f"model declares G={d['G']} but has {model.G} components")
        return model


@dataclass(frozen=True)
class Dataset:
    """Observation matrix with optional integer truth labels."""

    x: np.ndarray
    labels: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError(f"data must be an (n, p) matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("data contain non-finite entries")
        object.__setattr__(self, "x", x)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != (x.shape[0],):
                raise ValueError("labels must have one entry per observation")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.x[rows], labels)


def component_log_density(x, comp: ComponentParams):
    """``log phi(M(x|lam) | mu, Sigma) + lam' x`` for a point or the rows of a matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != comp.p:
        raise ValueError(f"point has {x.shape[-1]} coordinates, component has {comp.p}")
    out = _log_density_rows(np.atleast_2d(x), comp.mu, comp.chol, comp.lam)
    return out if x.ndim > 1 else out[0]


def _log_density_rows(x, mu, chol, lam):
    out = _fused.log_density(x, mu, chol, lam)
    if not np.all(np.isfinite(out)):
        manly_forward(x, lam)  # raises with the offending component on overflow
    return out


def weighted_log_densities(x, model: MixtureModel) -> np.ndarray:
    """``(n, G)`` matrix of ``log pi_g + log f_g(x_i)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty((x.shape[0], model.G))
    for g, comp in enumerate(model.components):
        out[:, g] = np.log(comp.pi) + component_log_density(x, comp)
    return out


def pointwise_log_likelihood(x, model: MixtureModel) -> np.ndarray:
    """Mixture log-density of each row of ``x``."""
    return logsumexp(weighted_log_densities(x, model), axis=1)


def observed_log_likelihood(data: Dataset, model: MixtureModel) -> float:
    return float(np.sum(pointwise_log_likelihood(data.x, model)))


def _objective(x, z_col, mu, chol, lam) -> float:
    value = _fused.objective(x, z_col, mu, chol, lam)
    if not np.isfinite(value):
        manly_forward(x[z_col != 0], lam)
    return float(value)


def objective_O(data: Dataset, z_col, comp: ComponentParams) -> float:
    """Negative responsibility-weighted complete-data log-likelihood of one component."""
    z_col = np.asarray(z_col, dtype=float)
    if z_col.shape != (data.n,):
        raise ValueError("z_col must have one weight per observation")
    return _objective(data.x, z_col, comp.mu, comp.chol, comp.lam)
