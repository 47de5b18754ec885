"""
Compiled single-pass loops for the likelihood hot paths.

Each loop transforms a row, solves against the lower Cholesky factor in
place and accumulates, so no ``(n, p)`` temporaries are allocated.  Transform
overflow shows up as non-finite output; the Python callers translate that
into the appropriate exception.
"""

import math

import numpy as np
from numba import njit

from .transform import forward_scalar, v_scalar, w_scalar

_LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def _half_logdet(chol):
    s = 0.0
    for k in range(chol.shape[0]):
        s += math.log(chol[k, k])
    return s


@njit(cache=True)
def _lower_solve_inplace(chol, d):
    p = d.shape[0]
    for k in range(p):
        s = d[k]
        for j in range(k):
            s -= chol[k, j] * d[j]
        d[k] = s / chol[k, k]


@njit(cache=True)
def log_density(x, mu, chol, lam):
    """``log phi(M(x_i|lam) | mu, L L') + lam' x_i`` for every row."""
    n, p = x.shape
    const = -0.5 * p * _LOG_2PI - _half_logdet(chol)
    out = np.empty(n)
    d = np.empty(p)
    for i in range(n):
        lx = 0.0
        for k in range(p):
            d[k] = forward_scalar(x[i, k], lam[k]) - mu[k]
            lx += lam[k] * x[i, k]
        _lower_solve_inplace(chol, d)
        maha = 0.0
        for k in range(p):
            maha += d[k] * d[k]
        out[i] = const - 0.5 * maha + lx
    return out


@njit(cache=True)
def objective(x, z, mu, chol, lam):
    """``-sum_i z_i log f(x_i)``; rows with zero weight are skipped."""
    n, p = x.shape
    const = -0.5 * p * _LOG_2PI - _half_logdet(chol)
    total = 0.0
    d = np.empty(p)
    for i in range(n):
        if z[i] == 0.0:
            continue
        lx = 0.0
        for k in range(p):
            d[k] = forward_scalar(x[i, k], lam[k]) - mu[k]
            lx += lam[k] * x[i, k]
        _lower_solve_inplace(chol, d)
        maha = 0.0
        for k in range(p):
            maha += d[k] * d[k]
        total += z[i] * (const - 0.5 * maha + lx)
    return -total


@njit(cache=True)
def precision(chol):
    """Symmetrized ``(L L')^{-1}`` from a lower factor."""
    p = chol.shape[0]
    linv = np.zeros((p, p))
    e = np.empty(p)
    for j in range(p):
        for k in range(p):
            e[k] = 1.0 if k == j else 0.0
        _lower_solve_inplace(chol, e)
        for k in range(p):
            linv[k, j] = e[k]
    prec = linv.T @ linv
    return 0.5 * (prec + prec.T)


@njit(cache=True)
def grad_hess(x, z, mu, chol, lam, want_hessian):
    """Gradient and Hessian of the component objective in ``lam``."""
    n, p = x.shape
    prec = precision(chol)
    grad = np.zeros(p)
    gram = np.zeros((p, p))
    dv = np.zeros(p)
    d = np.empty(p)
    w = np.empty(p)
    r = np.empty(p)
    for i in range(n):
        zi = z[i]
        if zi == 0.0:
            continue
        for k in range(p):
            d[k] = mu[k] - forward_scalar(x[i, k], lam[k])
            w[k] = w_scalar(x[i, k], lam[k])
        for k in range(p):
            s = 0.0
            for j in range(p):
                s += prec[k, j] * d[j]
            r[k] = s
        for k in range(p):
            grad[k] -= zi * (r[k] * w[k] + x[i, k])
        if want_hessian:
            for k in range(p):
                dv[k] += zi * r[k] * v_scalar(x[i, k], lam[k])
                zw = zi * w[k]
                for j in range(k + 1):
                    gram[k, j] += zw * w[j]
    hess = np.zeros((p, p))
    if want_hessian:
        for k in range(p):
            for j in range(k + 1):
                hess[k, j] = prec[k, j] * gram[k, j]
                hess[j, k] = hess[k, j]
            hess[k, k] -= dv[k]
    return grad, hess


@njit(cache=True)
def moments(x, z, lam):
    """Weighted size, mean and ML covariance of ``M(x|lam)``."""
    n, p = x.shape
    y = np.empty((n, p))
    n_g = 0.0
    mu = np.zeros(p)
    for i in range(n):
        n_g += z[i]
        for k in range(p):
            y[i, k] = forward_scalar(x[i, k], lam[k])
            mu[k] += z[i] * y[i, k]
    for k in range(p):
        mu[k] /= n_g
    sigma = np.zeros((p, p))
    for i in range(n):
        zi = z[i]
        if zi == 0.0:
            continue
        for k in range(p):
            dk = y[i, k] - mu[k]
            for j in range(k + 1):
                sigma[k, j] += zi * dk * (y[i, j] - mu[j])
    for k in range(p):
        for j in range(k + 1):
            sigma[k, j] /= n_g
            sigma[j, k] = sigma[k, j]
    return n_g, mu, sigma


@njit(cache=True)
def cholesky_or_nan(a):
    """Lower Cholesky factor, or a matrix of NaN when ``a`` is not PD."""
    p = a.shape[0]
    chol = np.zeros((p, p))
    for j in range(p):
        s = a[j, j]
        for k in range(j):
            s -= chol[j, k] * chol[j, k]
        if not s > 0.0:
            chol[:, :] = np.nan
            return chol
        chol[j, j] = math.sqrt(s)
        for i in range(j + 1, p):
            t = a[i, j]
            for k in range(j):
                t -= chol[i, k] * chol[j, k]
            chol[i, j] = t / chol[j, j]
    return chol


@njit(cache=True)
def profile_value(x, z, lam):
    """Profile objective via the log-determinant shortcut; NaN if not PD."""
    n, p = x.shape
    n_g, mu, sigma = moments(x, z, lam)
    chol = cholesky_or_nan(sigma)
    if not np.isfinite(chol[0, 0]):
        return np.nan
    lzx = 0.0
    for i in range(n):
        for k in range(p):
            lzx += lam[k] * z[i] * x[i, k]
    return 0.5 * n_g * (p * _LOG_2PI + 2.0 * _half_logdet(chol) + p) - lzx
