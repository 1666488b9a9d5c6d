"""Inner optimisation over the latent field and the Laplace marginal in theta."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .model_api import LogJointModel

__all__ = [
    "GRAD_TOL",
    "MAX_NEWTON_ITER",
    "InnerFit",
    "LaplaceError",
    "inner_mode",
    "log_laplace",
]

GRAD_TOL = 1e-8
MAX_NEWTON_ITER = 100
ARMIJO_C = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)
_EPS = float(np.finfo(float).eps)


class LaplaceError(ArithmeticError):
    """Curvature at the inner mode is not positive definite."""

    def __init__(self, message: str, theta=None):
        super().__init__(message)
        self.theta = None if theta is None else np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class InnerFit:
    theta: np.ndarray
    x_hat: np.ndarray
    hessian_chol: np.ndarray  # lower-triangular L with L L^T = H(theta)
    log_det_hessian: float
    log_joint_at_mode: float
    log_laplace: float
    iterations: int
    converged: bool
    grad_norm: float

    @property
    def latent_dim(self) -> int:
        return self.x_hat.size

    @property
    def precision(self) -> np.ndarray:
        return self.hessian_chol @ self.hessian_chol.T

    def covariance(self) -> np.ndarray:
        n = self.x_hat.size
        if n == 0:
            return np.zeros((0, 0))
        return cho_solve((self.hessian_chol, True), np.eye(n))


def _finite(v) -> bool:
    return np.isfinite(v)


def inner_mode(
    model: LogJointModel,
    theta,
    x0=None,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_NEWTON_ITER,
) -> tuple[np.ndarray, int, bool, float]:
    """Damped Newton ascent on x -> log p(y, x, theta).

    Returns ``(x_hat, iterations, converged, grad_inf_norm)``. When the
    negative Hessian is not positive definite the step falls back to the
    gradient direction for that iteration.
    """
    theta = np.asarray(theta, dtype=float)
    n = model.latent_dim
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    if x.shape != (n,):
        raise ValueError(f"warm start has shape {x.shape}, expected ({n},)")
    f = model.log_joint(x, theta)
    if not _finite(f):
        raise ValueError(f"log joint is not finite at the starting point for theta={theta}")
    g = np.asarray(model.latent_gradient(x, theta), dtype=float)
    gnorm = float(np.max(np.abs(g))) if n else 0.0
    it = 0
    while gnorm >= tol and it < max_iter:
        it += 1
        H = np.asarray(model.latent_hessian(x, theta), dtype=float)
        newton = True
        try:
            direction = cho_solve(cho_factor(H, lower=True), g)
        except LinAlgError:
            newton = False
            direction = g / max(1.0, float(np.max(np.abs(g))))
        slope = float(g @ direction)
        if slope <= 0:
            newton = False
            direction = g
            slope = float(g @ g)
        step = 1.0
        accepted = False
        # slack absorbs rounding in f once the ascent is below machine precision
        slack = 16.0 * _EPS * max(1.0, abs(f))
        for _ in range(60):
            x_new = x + step * direction
            f_new = model.log_joint(x_new, theta)
            if _finite(f_new) and f_new >= f + ARMIJO_C * step * slope - slack:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if not newton:
                break
            # Near the mode the change in f drops below its rounding error;
            # take the full Newton step when it still shrinks the gradient.
            x_new = x + direction
            g_new = np.asarray(model.latent_gradient(x_new, theta), dtype=float)
            gnorm_new = float(np.max(np.abs(g_new)))
            f_new = model.log_joint(x_new, theta)
            if not (gnorm_new < gnorm and _finite(f_new)):
                break
            x, f, g, gnorm = x_new, f_new, g_new, gnorm_new
            continue
        x, f = x_new, f_new
        g = np.asarray(model.latent_gradient(x, theta), dtype=float)
        gnorm = float(np.max(np.abs(g)))
    return x, it, gnorm < tol, gnorm


def log_laplace(
    model: LogJointModel,
    theta,
    warm_start=None,
    tol: float = GRAD_TOL,
) -> InnerFit:
    """Laplace approximation to log p(y, theta) after integrating out x.

    For models without a latent field this is simply ``log p(y, theta)``.
    """
    theta = np.array(theta, dtype=float, copy=True)
    n = model.latent_dim
    if n == 0:
        value = float(model.log_joint(np.zeros(0), theta))
        return InnerFit(theta, np.zeros(0), np.zeros((0, 0)), 0.0, value, value, 0, True, 0.0)
    x_hat, iters, converged, gnorm = inner_mode(model, theta, warm_start, tol=tol)
    H = np.asarray(model.latent_hessian(x_hat, theta), dtype=float)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise LaplaceError(
            f"latent curvature is not positive definite at theta={theta.tolist()}", theta
        ) from None
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    f = float(model.log_joint(x_hat, theta))
    value = f + 0.5 * n * _LOG_2PI - 0.5 * log_det
    if not _finite(value):
        raise LaplaceError(f"non-finite Laplace value at theta={theta.tolist()}", theta)
    return InnerFit(theta, x_hat, L, log_det, f, value, iters, converged, gnorm)
