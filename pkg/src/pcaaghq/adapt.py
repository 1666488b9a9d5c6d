"""Outer optimisation over theta, curvature at the mode, and adapted grids."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ghq import GridSpec, QuadratureGrid, product_grid
from .laplace import InnerFit, log_laplace
from .model_api import LogJointModel, NonFiniteEvaluation, default_step, fd_gradient, fd_hessian

__all__ = [
    "OptimizerError",
    "CurvatureError",
    "OuterResult",
    "ModeCurvature",
    "PcaSelection",
    "AdaptedGrid",
    "LaplaceObjective",
    "outer_optimize",
    "outer_curvature",
    "select_rank",
    "build_adapted_grid",
    "scree_table",
]

log = logging.getLogger(__name__)

OUTER_GRAD_TOL = 1e-6
OUTER_STEP_TOL = 1e-8
OUTER_MAX_ITER = 500
# Second-difference step as a fraction of the pilot marginal scale 1/sqrt(H_jj).
CURVATURE_STEP_FRACTION = 0.1


class OptimizerError(RuntimeError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


class CurvatureError(ArithmeticError):
    pass


class LaplaceObjective:
    """theta -> log p_LA(theta, y) with inner warm starts from a fixed anchor."""

    def __init__(self, model: LogJointModel, executor=None):
        self.model = model
        self.executor = executor
        self.anchor = np.zeros(model.latent_dim)
        self.evaluations = 0

    def fit(self, theta) -> InnerFit:
        self.evaluations += 1
        return log_laplace(self.model, theta, warm_start=self.anchor)

    def __call__(self, theta) -> float:
        return self.fit(theta).log_laplace

    def negative(self, theta) -> float:
        return -self(theta)

    def gradient(self, theta) -> np.ndarray:
        return fd_gradient(self, theta, executor=self.executor)


@dataclass
class OuterResult:
    theta_hat: np.ndarray
    log_laplace: float
    grad_norm: float
    iterations: int
    converged_by: str
    mode_fit: InnerFit
    trace: list = field(default_factory=list)


def _backtrack(obj, theta, f, g, direction):
    slope = float(g @ direction)
    step = 1.0
    for _ in range(50):
        cand = theta + step * direction
        try:
            f_new = obj(cand)
        except (ArithmeticError, ValueError):
            f_new = -np.inf
        if np.isfinite(f_new) and f_new >= f + 1e-4 * step * slope:
            return cand, f_new, step
        step *= 0.5
    return None, None, 0.0


def _initial_inverse_hessian(obj, theta, executor) -> np.ndarray:
    """Inverse FD Hessian of -f at the start when it is positive definite, else I."""
    m = theta.size
    try:
        H = fd_hessian(obj.negative, theta, default_step, executor=executor)
        L = np.linalg.cholesky(H)
    except (np.linalg.LinAlgError, NonFiniteEvaluation, ArithmeticError, ValueError):
        return np.eye(m)
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def outer_optimize(
    model: LogJointModel,
    theta0=None,
    executor=None,
    grad_tol: float = OUTER_GRAD_TOL,
    step_tol: float = OUTER_STEP_TOL,
    max_iter: int = OUTER_MAX_ITER,
) -> OuterResult:
    """Maximise the Laplace objective over theta with BFGS and FD gradients.

    The inverse-Hessian approximation starts from a finite-difference
    Hessian at ``theta0`` when that is positive definite, so the first step
    is a Newton step.
    """
    obj = LaplaceObjective(model, executor)
    m = model.hyper_dim
    theta = np.zeros(m) if theta0 is None else np.array(theta0, dtype=float)
    fit = obj.fit(theta)
    f = fit.log_laplace
    if not np.isfinite(f):
        raise OptimizerError(f"Laplace objective not finite at theta0={theta.tolist()}")
    obj.anchor = fit.x_hat
    g = obj.gradient(theta)
    B = _initial_inverse_hessian(obj, theta, executor)  # approximates inverse Hessian of -f
    scaled = not np.allclose(B, np.eye(m))
    trace = []
    reason = None
    it = 0
    while True:
        gnorm = float(np.max(np.abs(g)))
        trace.append({"iter": it, "theta": theta.tolist(), "log_laplace": f, "grad_norm": gnorm})
        if gnorm < grad_tol:
            reason = "gradient"
            break
        if it >= max_iter:
            raise OptimizerError(
                f"outer optimisation did not converge in {max_iter} iterations "
                f"(gradient norm {gnorm:.3e})",
                trace,
            )
        it += 1
        direction = B @ g
        if float(g @ direction) <= 0:
            B = np.eye(m)
            direction = g.copy()
        new_theta, new_f, step = _backtrack(obj, theta, f, g, direction)
        if new_theta is None:
            if gnorm < 1e3 * grad_tol:
                reason = "line-search"
                log.warning("outer line search stalled at gradient norm %.3e", gnorm)
                break
            raise OptimizerError(
                f"outer line search failed at theta={theta.tolist()} (gradient norm {gnorm:.3e})",
                trace,
            )
        s = new_theta - theta
        fit = obj.fit(new_theta)
        obj.anchor = fit.x_hat
        new_g = obj.gradient(new_theta)
        # BFGS on the minimisation of -f: y = grad(-f)_new - grad(-f)_old
        y = g - new_g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            if it == 1 and not scaled:
                B = np.eye(m) * (sy / float(y @ y))
            rho = 1.0 / sy
            V = np.eye(m) - rho * np.outer(s, y)
            B = V @ B @ V.T + rho * np.outer(s, s)
        theta, f, g = new_theta, fit.log_laplace, new_g
        if float(np.max(np.abs(s))) < step_tol:
            reason = "step"
            trace.append({"iter": it, "theta": theta.tolist(), "log_laplace": f,
                          "grad_norm": float(np.max(np.abs(g)))})
            break
    mode_fit = obj.fit(theta)
    return OuterResult(theta, mode_fit.log_laplace, float(np.max(np.abs(g))), it, reason, mode_fit, trace)


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for j in range(out.shape[1]):
        i = int(np.argmax(np.abs(out[:, j])))
        if out[i, j] < 0:
            out[:, j] = -out[:, j]
    return out


@dataclass(frozen=True)
class ModeCurvature:
    theta_hat: np.ndarray
    curvature: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    cholesky_factor: np.ndarray
    mode_fit: InnerFit

    @property
    def dim(self) -> int:
        return self.theta_hat.size

    @property
    def log_laplace(self) -> float:
        return self.mode_fit.log_laplace

    @classmethod
    def from_curvature(cls, theta_hat, curvature, mode_fit) -> "ModeCurvature":
        H = 0.5 * (np.asarray(curvature, dtype=float) + np.asarray(curvature, dtype=float).T)
        h_eig = np.linalg.eigvalsh(H)
        if np.any(h_eig <= 0) or not np.all(np.isfinite(h_eig)):
            raise CurvatureError(
                "curvature of the Laplace objective at the mode is not positive definite "
                f"(eigenvalues {np.array2string(h_eig, precision=4)}); "
                "check that the model's hyperparameters are identifiable"
            )
        cov = np.linalg.inv(H)
        cov = 0.5 * (cov + cov.T)
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(-vals, kind="stable")  # ties keep their original order
        vals = vals[order]
        vecs = _sign_fix(vecs[:, order])
        if np.any(vals <= 0):
            raise CurvatureError("inverse curvature has non-positive eigenvalues")
        L = np.linalg.cholesky(cov)
        return cls(np.asarray(theta_hat, dtype=float), H, cov, vals, vecs, L, mode_fit)


def outer_curvature(model: LogJointModel, theta_hat, executor=None, mode_fit=None) -> ModeCurvature:
    """Negative Hessian of the Laplace objective at ``theta_hat``.

    A pilot second-difference pass with the default step gives marginal
    scales; the final estimate uses Richardson-extrapolated central
    differences with steps of one tenth of those scales.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    obj = LaplaceObjective(model, executor)
    if mode_fit is None:
        mode_fit = obj.fit(theta_hat)
    obj.anchor = mode_fit.x_hat
    try:
        pilot = fd_hessian(obj.negative, theta_hat, default_step, executor=executor)
        diag = np.diag(pilot)
        scale = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
        H = fd_hessian(
            obj.negative, theta_hat, CURVATURE_STEP_FRACTION * scale, richardson=True, executor=executor
        )
    except NonFiniteEvaluation as exc:
        raise CurvatureError(f"Laplace objective not finite near the mode: {exc}") from exc
    return ModeCurvature.from_curvature(theta_hat, H, mode_fit)


@dataclass(frozen=True)
class PcaSelection:
    s: int
    variance_explained: float
    threshold: float | None


def cumulative_proportion(eigenvalues) -> np.ndarray:
    vals = np.asarray(eigenvalues, dtype=float)
    return np.cumsum(vals) / vals.sum()


def select_rank(curvature: ModeCurvature, threshold: float) -> PcaSelection:
    """Smallest rank whose leading eigenvalues explain ``threshold`` of the total."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    cum = cumulative_proportion(curvature.eigenvalues)
    hits = np.nonzero(cum >= threshold - 1e-12)[0]
    s = int(hits[0]) + 1 if hits.size else cum.size
    return PcaSelection(s, float(cum[s - 1]), threshold)


def fixed_rank(curvature: ModeCurvature, s: int) -> PcaSelection:
    if not 1 <= s <= curvature.dim:
        raise ValueError(f"rank s={s} must lie in [1, {curvature.dim}]")
    cum = cumulative_proportion(curvature.eigenvalues)
    return PcaSelection(int(s), float(cum[s - 1]), None)


def scree_table(curvature: ModeCurvature) -> list[tuple[int, float, float]]:
    cum = cumulative_proportion(curvature.eigenvalues)
    return [(j + 1, float(v), float(c)) for j, (v, c) in enumerate(zip(curvature.eigenvalues, cum))]


@dataclass(frozen=True)
class AdaptedGrid:
    base: QuadratureGrid
    transform: np.ndarray
    center: np.ndarray
    theta_points: np.ndarray
    log_abs_det_transform: float
    decomposition: str
    anchor: np.ndarray  # latent mode at the centre, used as inner warm start

    def __len__(self) -> int:
        return self.theta_points.shape[0]

    @property
    def log_weights(self) -> np.ndarray:
        return self.base.log_weights


def build_adapted_grid(
    curvature: ModeCurvature,
    spec: GridSpec,
    decomposition: str = "spectral",
    budget: int | None = None,
) -> AdaptedGrid:
    """Shift and rotate a z-space product grid onto the Laplace posterior.

    With the spectral decomposition the grid dimensions follow the
    eigenvalues in descending order, so levels ``(k, ..., k, 1, ..., 1)``
    place the trailing principal directions at the mode.
    """
    if spec.dim != curvature.dim:
        raise ValueError(f"grid has {spec.dim} dimensions, model has {curvature.dim}")
    if decomposition == "cholesky":
        if not spec.is_uniform:
            raise ValueError("variable-level grids require the spectral decomposition")
        P = curvature.cholesky_factor
        log_det = float(np.sum(np.log(np.diag(P))))
    elif decomposition == "spectral":
        P = curvature.eigenvectors * np.sqrt(curvature.eigenvalues)[None, :]
        log_det = 0.5 * float(np.sum(np.log(curvature.eigenvalues)))
    else:
        raise ValueError(f"unknown decomposition {decomposition!r}")
    base = product_grid(spec, budget)
    points = base.points @ P.T + curvature.theta_hat[None, :]
    return AdaptedGrid(
        base, P, curvature.theta_hat.copy(), points, log_det, decomposition, curvature.mode_fit.x_hat
    )
