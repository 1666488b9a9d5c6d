"""Survey and likelihood formulas shared by the built-in models."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, log_ndtr

__all__ = [
    "PHIA_MDRI_YEARS",
    "kish_ess",
    "weighted_mean",
    "xbin_log_density",
    "kappa_recent",
    "log_skewnormal",
    "skewnormal_integrand",
    "log_skewnormal_integrand",
]

# Mean duration of recent infection, 130 days, expressed in years.
PHIA_MDRI_YEARS = 130.0 / 365.25
_LOG_2 = math.log(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def kish_ess(weights) -> float:
    """Kish effective sample size (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(w < 0):
        raise ValueError("weights must be a non-empty sequence of non-negative values")
    total = w.sum()
    if total <= 0:
        raise ValueError("at least one weight must be positive")
    return float(total**2 / np.sum(w**2))


def weighted_mean(values, weights) -> float:
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise ValueError("values and weights must have the same length")
    total = weights.sum()
    if total <= 0:
        raise ValueError("total weight must be positive")
    return float(np.dot(weights, values) / total)


def xbin_log_density(y, m, p):
    """Binomial log-density extended to real-valued counts via log-gamma."""
    y = np.asarray(y, dtype=float)
    m = np.asarray(m, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(y < 0) or np.any(y > m):
        raise ValueError("xbin requires 0 <= y <= m")
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("xbin requires 0 < p < 1")
    out = (
        gammaln(m + 1.0)
        - gammaln(y + 1.0)
        - gammaln(m - y + 1.0)
        + y * np.log(p)
        + (m - y) * np.log1p(-p)
    )
    return float(out) if out.ndim == 0 else out


def kappa_recent(lam: float, rho: float, omega: float, beta: float) -> float:
    """Probability of recent infection given incidence ``lam`` and prevalence ``rho``.

    ``omega`` (mean duration of recent infection) and ``beta`` (false recent
    proportion term) are in years, matching the annual rate ``lam``.
    """
    if rho <= 0 or rho >= 1:
        raise ValueError("prevalence must lie strictly inside (0, 1)")
    if lam < 0:
        raise ValueError("incidence must be non-negative")
    if not omega >= beta >= 0:
        raise ValueError("need omega >= beta >= 0")
    return float(-math.expm1(-lam * ((1.0 - rho) / rho) * (omega - beta) - beta))


def log_skewnormal(z, alpha: float):
    """log of 2 phi(z) Phi(alpha z)."""
    z = np.asarray(z, dtype=float)
    return _LOG_2 - _LOG_SQRT_2PI - 0.5 * z**2 + log_ndtr(alpha * z)


def log_skewnormal_integrand(theta) -> float:
    theta = np.asarray(theta, dtype=float)
    t1, t2 = theta[..., 0], theta[..., 1]
    return log_skewnormal(0.5 * t1, 2.0) + log_skewnormal(0.8 * t1 - 0.5 * t2, -2.0)


def skewnormal_integrand(theta):
    """Two-dimensional skewnormal product used to illustrate adaptation.

    Integrates to 4 over the plane.
    """
    return np.exp(log_skewnormal_integrand(theta))
