"""Evaluation contract for inference targets, plus finite-difference helpers.

A model exposes ``log p(y, x, theta)`` over a latent field ``x`` (length N)
and hyperparameters ``theta`` (length m), together with analytic first and
second derivatives in ``x``. Derivatives in ``theta`` are never requested.
"""

from __future__ import annotations

import abc
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "ParameterSpace",
    "LogJointModel",
    "EvaluationBudget",
    "BudgetExceeded",
    "NonFiniteEvaluation",
    "ValidationReport",
    "default_step",
    "fd_gradient",
    "fd_jacobian",
    "fd_hessian",
    "validate_model",
    "register_model",
    "make_model",
    "available_models",
]

_EPS = np.finfo(float).eps


class NonFiniteEvaluation(FloatingPointError):
    """A function returned a non-finite value during finite differencing."""

    def __init__(self, message: str, coordinate: int | None = None):
        super().__init__(message)
        self.coordinate = coordinate


@dataclass(frozen=True)
class ParameterSpace:
    """Names and block layout of the latent field and hyperparameters.

    ``latent_blocks`` maps a block name to a half-open ``(start, stop)``
    index range. Blocks must tile ``[0, latent_dim)`` without gaps.
    """

    latent_names: tuple[str, ...]
    hyper_names: tuple[str, ...]
    latent_blocks: tuple[tuple[str, int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "latent_names", tuple(self.latent_names))
        object.__setattr__(self, "hyper_names", tuple(self.hyper_names))
        blocks = tuple((str(n), int(a), int(b)) for n, a, b in self.latent_blocks)
        if not blocks and self.latent_names:
            blocks = (("x", 0, len(self.latent_names)),)
        object.__setattr__(self, "latent_blocks", blocks)
        if len(self.hyper_names) < 1:
            raise ValueError("a model needs at least one hyperparameter")
        names = self.latent_names + self.hyper_names
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        pos = 0
        for name, start, stop in blocks:
            if start != pos or stop <= start:
                raise ValueError(f"latent block {name!r} [{start}, {stop}) breaks the partition")
            pos = stop
        if pos != len(self.latent_names):
            raise ValueError("latent blocks do not cover the latent field")
        if len({b[0] for b in blocks}) != len(blocks):
            raise ValueError("block names must be unique")

    @property
    def latent_dim(self) -> int:
        return len(self.latent_names)

    @property
    def hyper_dim(self) -> int:
        return len(self.hyper_names)

    def block_slices(self) -> dict[str, slice]:
        return {name: slice(a, b) for name, a, b in self.latent_blocks}

    def block_of(self) -> dict[str, str]:
        """Map each parameter name (latent and hyper) to its block name."""
        out = {}
        for name, a, b in self.latent_blocks:
            for i in range(a, b):
                out[self.latent_names[i]] = name
        for h in self.hyper_names:
            out[h] = h
        return out


class LogJointModel(abc.ABC):
    """Interface every inference target implements.

    Implementations must be safe to evaluate from several threads at once;
    they should hold only immutable data.
    """

    name: str = "model"
    space: ParameterSpace

    @property
    def latent_dim(self) -> int:
        return self.space.latent_dim

    @property
    def hyper_dim(self) -> int:
        return self.space.hyper_dim

    @abc.abstractmethod
    def log_joint(self, x: np.ndarray, theta: np.ndarray) -> float:
        """log p(y, x, theta)."""

    @abc.abstractmethod
    def latent_gradient(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Gradient of ``log_joint`` with respect to ``x``."""

    @abc.abstractmethod
    def latent_hessian(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Negative Hessian of ``log_joint`` with respect to ``x`` (N x N)."""

    def output_map(self, x: np.ndarray, theta: np.ndarray) -> dict[str, float]:
        """Derived output quantities for one draw; none by default."""
        return {}

    def output_names(self) -> tuple[str, ...]:
        x = np.zeros(self.latent_dim)
        theta = np.zeros(self.hyper_dim)
        return tuple(self.output_map(x, theta))

    def sampler_coordinates(self, z: np.ndarray, theta: np.ndarray):
        """Map sampler coordinates ``z`` to the latent field.

        Returns ``(x, log_abs_det_jacobian)``. Models whose posterior has
        funnel-like dependence between ``x`` and ``theta`` can override this
        (with ``sampler_inverse``) so the reference sampler explores a
        better-conditioned target; the default is the identity.
        """
        return np.asarray(z, dtype=float), 0.0

    def sampler_inverse(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Inverse of ``sampler_coordinates``."""
        return np.asarray(x, dtype=float)

    def config(self) -> dict:
        """JSON-serializable configuration that rebuilds this model."""
        return {}


@dataclass
class EvaluationBudget:
    """Cap on log-joint evaluations; ``wall_clock_hint`` is advisory only."""

    max_log_joint_calls: int = 10**7
    wall_clock_hint: float | None = None
    _calls: int = field(default=0, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        if self.max_log_joint_calls <= 0:
            raise ValueError("max_log_joint_calls must be positive")
        if self.wall_clock_hint is not None and self.wall_clock_hint <= 0:
            raise ValueError("wall_clock_hint must be positive")

    @property
    def calls(self) -> int:
        return self._calls

    def charge(self, n: int = 1) -> None:
        with self._lock:
            self._calls += n
            if self._calls > self.max_log_joint_calls:
                raise BudgetExceeded(
                    f"log-joint evaluation budget of {self.max_log_joint_calls} exhausted"
                )


class BudgetExceeded(RuntimeError):
    pass


def default_step(point: np.ndarray) -> np.ndarray:
    """Per-coordinate step cbrt(eps) * max(1, |x_j|)."""
    return np.cbrt(_EPS) * np.maximum(1.0, np.abs(point))


def _steps(point: np.ndarray, step_rule) -> np.ndarray:
    if step_rule is None:
        return default_step(point)
    if callable(step_rule):
        h = np.asarray(step_rule(point), dtype=float)
    else:
        h = np.broadcast_to(np.asarray(step_rule, dtype=float), point.shape).copy()
    if h.shape != point.shape or np.any(h <= 0):
        raise ValueError("step rule must give one positive step per coordinate")
    return h


def _check(value, coordinate: int | None):
    value = float(value)
    if not np.isfinite(value):
        where = "at the centre point" if coordinate is None else f"along coordinate {coordinate}"
        raise NonFiniteEvaluation(f"non-finite function value {where}", coordinate)
    return value


def _map(fn, items, executor=None):
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


def fd_gradient(
    f: Callable[[np.ndarray], float],
    point,
    step_rule=None,
    executor=None,
) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    h = _steps(point, step_rule)
    d = point.size

    def shifted(args):
        j, sign = args
        p = point.copy()
        p[j] += sign * h[j]
        return _check(f(p), j)

    jobs = [(j, s) for j in range(d) for s in (1.0, -1.0)]
    vals = np.array(_map(shifted, jobs, executor)).reshape(d, 2)
    return (vals[:, 0] - vals[:, 1]) / (2.0 * h)


def fd_jacobian(
    g: Callable[[np.ndarray], np.ndarray], point, step_rule=None
) -> np.ndarray:
    """Central-difference Jacobian of a vector function; row i is d g_i."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    h = _steps(point, step_rule)
    cols = []
    for j in range(point.size):
        up = point.copy()
        dn = point.copy()
        up[j] += h[j]
        dn[j] -= h[j]
        gu = np.asarray(g(up), dtype=float)
        gd = np.asarray(g(dn), dtype=float)
        if not (np.all(np.isfinite(gu)) and np.all(np.isfinite(gd))):
            raise NonFiniteEvaluation(f"non-finite gradient along coordinate {j}", j)
        cols.append((gu - gd) / (2.0 * h[j]))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def _second_differences(f, point, h, executor):
    d = point.size
    jobs = [()]
    for i in range(d):
        jobs += [((i, 1.0),), ((i, -1.0),)]
    for i in range(d):
        for j in range(i + 1, d):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    jobs.append(((i, si), (j, sj)))

    def evaluate(moves):
        p = point.copy()
        for idx, sign in moves:
            p[idx] += sign * h[idx]
        return _check(f(p), moves[0][0] if moves else None)

    vals = dict(zip(jobs, _map(evaluate, jobs, executor)))
    f0 = vals[()]
    H = np.empty((d, d))
    for i in range(d):
        H[i, i] = (vals[((i, 1.0),)] - 2.0 * f0 + vals[((i, -1.0),)]) / h[i] ** 2
        for j in range(i + 1, d):
            num = (
                vals[((i, 1.0), (j, 1.0))]
                - vals[((i, 1.0), (j, -1.0))]
                - vals[((i, -1.0), (j, 1.0))]
                + vals[((i, -1.0), (j, -1.0))]
            )
            H[i, j] = H[j, i] = num / (4.0 * h[i] * h[j])
    return H


def fd_hessian(
    f: Callable[[np.ndarray], float],
    point,
    step_rule=None,
    richardson: bool = False,
    executor=None,
) -> np.ndarray:
    """Central second-difference Hessian, symmetrized.

    With ``richardson=True`` the estimates at steps ``h`` and ``h/2`` are
    combined to cancel the O(h^2) truncation term.
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    h = _steps(point, step_rule)
    H = _second_differences(f, point, h, executor)
    if richardson:
        H_half = _second_differences(f, point, h / 2.0, executor)
        H = (4.0 * H_half - H) / 3.0
    return 0.5 * (H + H.T)


@dataclass
class ValidationReport:
    passed: bool
    gradient_error: dict[str, float]
    hessian_error: dict[str, float]
    symmetry_error: float
    tolerance: float
    issues: list[str]


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def validate_model(
    model: LogJointModel,
    n_points: int = 5,
    seed: int = 0,
    tol: float = 1e-4,
    latent_scale: float = 1.0,
    hyper_scale: float = 0.5,
) -> ValidationReport:
    """Compare analytic latent derivatives against finite differences.

    Errors are measured per latent block as max |analytic - fd| divided by
    max(1, max |fd|). Disagreement is reported, never raised.
    """
    rng = np.random.default_rng(seed)
    space = model.space
    grad_err = {name: 0.0 for name, _, _ in space.latent_blocks}
    hess_err = dict(grad_err)
    sym_err = 0.0
    issues = []
    if model.latent_dim == 0:
        return ValidationReport(True, {}, {}, 0.0, tol, [])
    slices = space.block_slices()
    for _ in range(n_points):
        x = latent_scale * rng.standard_normal(model.latent_dim)
        theta = hyper_scale * rng.standard_normal(model.hyper_dim)
        g = np.asarray(model.latent_gradient(x, theta))
        g_fd = fd_gradient(lambda v: model.log_joint(v, theta), x)
        H = np.asarray(model.latent_hessian(x, theta))
        H_fd = -fd_jacobian(lambda v: model.latent_gradient(v, theta), x)
        H_fd = 0.5 * (H_fd + H_fd.T)
        sym_err = max(sym_err, float(np.max(np.abs(H - H.T))))
        for name, sl in slices.items():
            grad_err[name] = max(grad_err[name], _rel_err(g[sl], g_fd[sl]))
            hess_err[name] = max(hess_err[name], _rel_err(H[sl], H_fd[sl]))
    for name in grad_err:
        if grad_err[name] > tol:
            issues.append(f"gradient block {name!r}: relative error {grad_err[name]:.3e}")
        if hess_err[name] > tol:
            issues.append(f"hessian block {name!r}: relative error {hess_err[name]:.3e}")
    if sym_err > 1e-12:
        issues.append(f"latent hessian not symmetric: {sym_err:.3e}")
    return ValidationReport(not issues, grad_err, hess_err, sym_err, tol, issues)


_REGISTRY: dict[str, Callable[[Mapping], LogJointModel]] = {}


def register_model(name: str):
    """Decorator registering a factory ``config -> LogJointModel`` under ``name``."""

    def deco(factory):
        if name in _REGISTRY:
            raise ValueError(f"model {name!r} already registered")
        _REGISTRY[name] = factory
        return factory

    return deco


def make_model(name: str, config: Mapping | None = None) -> LogJointModel:
    from . import library  # noqa: F401  (registers built-ins)

    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {sorted(_REGISTRY)}") from None
    return factory(dict(config or {}))


def available_models() -> Sequence[str]:
    from . import library  # noqa: F401

    return sorted(_REGISTRY)
