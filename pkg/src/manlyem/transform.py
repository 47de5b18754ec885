"""
Manly exponential transform and its lambda-derivative kernels.

Each map is a scalar kernel compiled into a NumPy ufunc, so ``x`` may be a
scalar, a length-p vector or an ``(n, p)`` data matrix, with ``lam``
broadcasting along the last axis.  Errors name the offending component
(last-axis index).

For ``|lam| > SMALL_LAMBDA`` the kernels are evaluated through the reduced
variable ``t = lam * x``::

    forward(x, lam) = expm1(t) / lam
    w(x, lam)       = x**2 * (t e^t - e^t + 1) / t**2
    v(x, lam)       = x**3 * (e^t (t**2 - 2t + 2) - 2) / t**3

which are the textbook quotients rewritten so that the ratio of ``t``
polynomials can be expanded in a power series when ``|t|`` is small.
Direct evaluation of the quotients loses every significant digit for
``|t| < 1e-5``; the series keeps full precision.  For
``|lam| <= SMALL_LAMBDA`` the exact limits ``x``, ``x**2/2`` and
``x**3/3`` are returned.
"""

import math

import numpy as np
from numba import njit, vectorize

from .exceptions import ManlyDomainError, ManlyOverflowError

SMALL_LAMBDA = 1e-8

# |t| below which the w/v ratios are summed as power series; 13 terms put
# the truncation error under 1e-18 at the cutoff
_SERIES_CUTOFF = 0.2
_MAX_EXPONENT = math.log(np.finfo(float).max)

# w/x**2 = sum_j (j+1)/(j+2)! t**j ;  v/x**3 = sum_j (j+1)(j+2)/(j+3)! t**j
_W_COEF = tuple((j + 1) / math.factorial(j + 2) for j in range(13))
_V_COEF = tuple((j + 1) * (j + 2) / math.factorial(j + 3) for j in range(13))
_W0, _W1, _W2, _W3, _W4, _W5, _W6, _W7, _W8, _W9, _W10, _W11, _W12 = _W_COEF
_V0, _V1, _V2, _V3, _V4, _V5, _V6, _V7, _V8, _V9, _V10, _V11, _V12 = _V_COEF

_SIG = ["float64(float64, float64)"]


def _scalar_kernel(fn):
    """Compile ``fn`` both as a scalar njit function and as a NumPy ufunc."""
    return njit(cache=True)(fn), vectorize(_SIG, cache=True)(fn).ufunc


def _forward_py(x, lam):
    if abs(lam) <= SMALL_LAMBDA:
        return x
    t = lam * x
    if t > _MAX_EXPONENT:
        return np.inf
    return math.expm1(t) / lam


def _inverse_py(y, lam):
    if abs(lam) <= SMALL_LAMBDA:
        return y
    return math.log1p(lam * y) / lam


def _w_py(x, lam):
    if abs(lam) <= SMALL_LAMBDA:
        return 0.5 * x * x
    t = lam * x
    if t > _MAX_EXPONENT:
        return np.inf
    if abs(t) < _SERIES_CUTOFF:
        r = _W12
        r = r * t + _W11
        r = r * t + _W10
        r = r * t + _W9
        r = r * t + _W8
        r = r * t + _W7
        r = r * t + _W6
        r = r * t + _W5
        r = r * t + _W4
        r = r * t + _W3
        r = r * t + _W2
        r = r * t + _W1
        r = r * t + _W0
    else:
        r = (math.exp(t) * (t - 1.0) + 1.0) / (t * t)
    return x * x * r


def _v_py(x, lam):
    if abs(lam) <= SMALL_LAMBDA:
        return x * x * x / 3.0
    t = lam * x
    if t > _MAX_EXPONENT:
        return np.inf
    if abs(t) < _SERIES_CUTOFF:
        r = _V12
        r = r * t + _V11
        r = r * t + _V10
        r = r * t + _V9
        r = r * t + _V8
        r = r * t + _V7
        r = r * t + _V6
        r = r * t + _V5
        r = r * t + _V4
        r = r * t + _V3
        r = r * t + _V2
        r = r * t + _V1
        r = r * t + _V0
    else:
        r = (math.exp(t) * (t * t - 2.0 * t + 2.0) - 2.0) / (t * t * t)
    return x * x * x * r


# scalar versions are called from the fused likelihood loops elsewhere
forward_scalar, _forward = _scalar_kernel(_forward_py)
_, _inverse = _scalar_kernel(_inverse_py)
w_scalar, _w = _scalar_kernel(_w_py)
v_scalar, _v = _scalar_kernel(_v_py)


def as_skew_vector(lam, p=None):
    """Validate and return ``lam`` as a finite 1-D float array."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.ndim != 1:
        raise ValueError(f"skew vector must be 1-D, got shape {lam.shape}")
    if p is not None and lam.shape[0] != p:
        raise ValueError(f"skew vector has length {lam.shape[0]}, expected {p}")
    if not np.all(np.isfinite(lam)):
        raise ValueError("skew vector entries must be finite")
    return lam


def _first_component(mask) -> int:
    return int(np.argwhere(np.atleast_1d(mask))[0][-1])


def _apply(kernel, x, lam, what):
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if lam.ndim > 0 and x.ndim > 0 and x.shape[-1] != lam.shape[-1]:
        raise ValueError(
            f"length mismatch: x has {x.shape[-1]} coordinates, lambda has {lam.shape[-1]}"
        )
    out = kernel(x, lam)
    if np.isfinite(out).all():
        return out
    bad = ~np.isfinite(out) & np.isfinite(x) & np.isfinite(lam)
    if np.any(bad):
        k = _first_component(bad)
        raise ManlyOverflowError(f"{what} overflows in component {k}", component=k)
    return out


def manly_forward(x, lam):
    """Manly transform ``(exp(lam*x) - 1) / lam``, identity where ``lam == 0``."""
    return _apply(_forward, x, lam, "Manly transform")


def manly_inverse(y, lam):
    """Inverse Manly transform ``log1p(y*lam) / lam``.

    Raises
    ------
    ManlyDomainError
        If ``y * lam + 1 <= 0`` for a component with nonzero ``lam``.
    """
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    bad = (np.abs(lam) > SMALL_LAMBDA) & (y * lam + 1.0 <= 0.0)
    if np.any(bad):
        k = _first_component(bad)
        raise ManlyDomainError(
            f"inverse Manly transform undefined in component {k}: y*lambda + 1 <= 0",
            component=k,
        )
    return _apply(_inverse, y, lam, "inverse Manly transform")


def w_kernel(x, lam):
    """First lambda-derivative of the Manly transform, ``dy/dlam``."""
    return _apply(_w, x, lam, "w kernel")


def v_kernel(x, lam):
    """Second lambda-derivative of the Manly transform, ``d2y/dlam2``."""
    return _apply(_v, x, lam, "v kernel")
