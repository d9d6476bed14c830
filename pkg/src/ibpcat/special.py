"""Digamma and log-gamma via recurrence plus asymptotic series.

These are the only special functions the package needs.  Both are
vectorized over numpy arrays, accept positive arguments, and are
accurate to about 1e-13 relative (1e-12 absolute for moderate values).
"""

from __future__ import annotations

import numpy as np

_SHIFT = 10.0

# Bernoulli-number coefficients B_2n / (2n) for the psi series.
_PSI_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)

# B_2n / (2n (2n - 1)) for the Stirling series of log-gamma.
_LGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)


def digamma(x):
    """psi(x) = d/dx log Gamma(x) for x > 0, elementwise."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("digamma requires positive arguments")
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    acc = np.zeros_like(x)
    # Shift upward until the asymptotic series is accurate.
    mask = x < _SHIFT
    while np.any(mask):
        acc[mask] -= 1.0 / x[mask]
        x[mask] += 1.0
        mask = x < _SHIFT
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    term = inv2
    for c in _PSI_COEF:
        series -= c * term
        term = term * inv2
    out = acc + np.log(x) - 0.5 / x + series
    return out[0] if scalar else out


def log_gamma(x):
    """log Gamma(x) for x > 0, elementwise."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("log_gamma requires positive arguments")
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    acc = np.zeros_like(x)
    mask = x < _SHIFT
    while np.any(mask):
        acc -= np.where(mask, np.log(x), 0.0)
        x[mask] += 1.0
        mask = x < _SHIFT
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    term = inv
    for c in _LGAMMA_COEF:
        series += c * term
        term = term * inv2
    out = acc + (x - 0.5) * np.log(x) - x + 0.5 * np.log(2.0 * np.pi) + series
    return out[0] if scalar else out


def log_beta(a, b):
    """log B(a, b) = log Gamma(a) + log Gamma(b) - log Gamma(a + b)."""
    return log_gamma(a) + log_gamma(b) - log_gamma(np.asarray(a, dtype=float) + b)
