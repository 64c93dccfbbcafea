"""Standard normal and chi-square helpers.

Phi uses ``erfc`` for accuracy in both tails. The inverse is found by
bracketed root finding on that same Phi, so the two are consistent with
each other to the root-finder tolerance.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize, special

from .errors import ValidationError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_cdf(x):
    """Standard normal CDF, scalar or array."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def norm_ppf(p: float, tol: float = 1e-12) -> float:
    """Inverse standard normal CDF by Brent's method on :func:`norm_cdf`."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"probability must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    lo, hi = -1.0, 1.0
    while norm_cdf(lo) > p:
        lo *= 2.0
    while norm_cdf(hi) < p:
        hi *= 2.0
    return optimize.brentq(lambda x: float(norm_cdf(x)) - p, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps)


def chi2_cdf(x: float, df: int) -> float:
    if x <= 0:
        return 0.0
    return float(special.gammainc(df / 2.0, x / 2.0))


def chi2_ppf(level: float, df: int) -> float:
    """Chi-square quantile via the regularized lower incomplete gamma."""
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    hi = max(1.0, float(df))
    while chi2_cdf(hi, df) < level:
        hi *= 2.0
    return optimize.brentq(lambda x: chi2_cdf(x, df) - level, 0.0, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)
