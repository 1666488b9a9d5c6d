"""Normalizing constants, hyperparameter weights and latent mixture posteriors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .adapt import AdaptedGrid, ModeCurvature, OuterResult, build_adapted_grid, outer_optimize
from .ghq import GridSpec
from .io import read_json, read_numeric_table, write_json, write_table
from .laplace import InnerFit, log_laplace
from .model_api import LogJointModel

__all__ = [
    "NodeFitError",
    "QuadPosterior",
    "MixturePosterior",
    "SampleSet",
    "HyperSummary",
    "normalize",
    "latent_mixture",
    "eb_posterior",
    "sample",
    "hyper_summaries",
    "fit_grid",
    "laplace_normconst",
]


class NodeFitError(RuntimeError):
    def __init__(self, message: str, node: int):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True)
class QuadPosterior:
    grid: AdaptedGrid
    fits: tuple[InnerFit, ...]
    node_log_laplace: np.ndarray
    log_normconst: float
    node_weights: np.ndarray

    @property
    def theta_points(self) -> np.ndarray:
        return self.grid.theta_points

    def __len__(self) -> int:
        return len(self.fits)


def normalize(grid: AdaptedGrid, model: LogJointModel, executor=None) -> QuadPosterior:
    """Evaluate the Laplace objective at every adapted node and normalize.

    Each node's inner fit is warm-started from the latent mode at the grid
    centre, so results do not depend on evaluation order.
    """
    anchor = grid.anchor

    def fit(theta):
        return log_laplace(model, theta, warm_start=anchor)

    points = list(grid.theta_points)
    fits = tuple(executor.map(fit, points) if executor is not None else map(fit, points))
    for i, f in enumerate(fits):
        if not f.converged:
            raise NodeFitError(
                f"inner optimisation did not converge at node {i} "
                f"(theta={f.theta.tolist()}, gradient norm {f.grad_norm:.3e})",
                i,
            )
    node_ll = np.array([f.log_laplace for f in fits])
    terms = node_ll + grid.log_weights
    total = float(logsumexp(terms))
    log_normconst = grid.log_abs_det_transform + total
    lam = np.exp(terms - total)
    lam /= lam.sum()
    return QuadPosterior(grid, fits, node_ll, log_normconst, lam)


@dataclass(frozen=True)
class MixturePosterior:
    components: tuple[InnerFit, ...]
    mixture_weights: np.ndarray
    method_tag: str
    latent_names: tuple[str, ...] = ()
    hyper_names: tuple[str, ...] = ()

    @property
    def theta_points(self) -> np.ndarray:
        return np.array([c.theta for c in self.components])

    def mean(self) -> np.ndarray:
        means = np.array([c.x_hat for c in self.components])
        return self.mixture_weights @ means

    def variance(self) -> np.ndarray:
        """Marginal latent variances by the law of total variance."""
        means = np.array([c.x_hat for c in self.components])
        within = np.array([np.diag(c.covariance()) for c in self.components])
        mu = self.mixture_weights @ means
        return self.mixture_weights @ (within + means**2) - mu**2

    def sd(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.variance(), 0.0))


def latent_mixture(quad: QuadPosterior, model: LogJointModel | None = None, method_tag: str | None = None) -> MixturePosterior:
    """Mixture of per-node Gaussians weighted by the normalized node weights."""
    if method_tag is None:
        method_tag = "PCA-AGHQ" if not quad.grid.base.spec.is_uniform else "AGHQ-dense"
    names = model.space.latent_names if model is not None else ()
    hyper = model.space.hyper_names if model is not None else ()
    return MixturePosterior(quad.fits, quad.node_weights.copy(), method_tag, names, hyper)


def eb_posterior(model: LogJointModel, outer: OuterResult | None = None, executor=None) -> MixturePosterior:
    """Single Gaussian at the Laplace-objective mode."""
    if outer is None:
        outer = outer_optimize(model, executor=executor)
    return MixturePosterior(
        (outer.mode_fit,), np.ones(1), "EB", model.space.latent_names, model.space.hyper_names
    )


@dataclass
class SampleSet:
    names: tuple[str, ...]
    draws: np.ndarray
    seed: int | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.names = tuple(self.names)
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2 or self.draws.shape[1] != len(self.names):
            raise ValueError("draws must be an n x len(names) matrix")

    def __len__(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def to_dict(self) -> dict[str, np.ndarray]:
        return {n: self.draws[:, j] for j, n in enumerate(self.names)}

    def write(self, csv_path, provenance_path=None) -> None:
        write_table(csv_path, self.names, self.draws.tolist())
        if provenance_path is not None:
            write_json(provenance_path, {**self.provenance, "seed": self.seed})

    @classmethod
    def read(cls, csv_path, provenance_path=None) -> "SampleSet":
        names, draws = read_numeric_table(csv_path)
        prov = {}
        if provenance_path is not None and Path(provenance_path).exists():
            prov = read_json(provenance_path)
        return cls(tuple(names), draws, prov.get("seed"), prov)


def sample(
    mixture: MixturePosterior,
    n: int,
    seed: int,
    model: LogJointModel | None = None,
    include_outputs: bool = True,
) -> SampleSet:
    """Draw a node by its weight, then the latent field from that node's Gaussian.

    Columns are latent names, hyperparameter names and, when a model is
    given, its ``output_map`` evaluated on every draw.
    """
    if n < 1:
        raise ValueError("need at least one draw")
    rng = np.random.default_rng(seed)
    K = len(mixture.components)
    node = rng.choice(K, size=n, p=mixture.mixture_weights) if K > 1 else np.zeros(n, dtype=int)
    N = mixture.components[0].latent_dim
    z = rng.standard_normal((n, N))
    x = np.empty((n, N))
    for k in range(K):
        rows = np.nonzero(node == k)[0]
        if rows.size == 0:
            continue
        comp = mixture.components[k]
        if N:
            # x = x_hat + L^{-T} z gives covariance (L L^T)^{-1}
            x[rows] = comp.x_hat + solve_triangular(comp.hessian_chol, z[rows].T, lower=True, trans="T").T
    theta = mixture.theta_points[node]
    latent_names = mixture.latent_names or tuple(f"x[{i}]" for i in range(N))
    hyper_names = mixture.hyper_names or tuple(f"theta[{j}]" for j in range(theta.shape[1]))
    blocks = [x, theta]
    names = list(latent_names) + list(hyper_names)
    if model is not None and include_outputs:
        outputs = [model.output_map(x[i], theta[i]) for i in range(n)]
        if outputs and outputs[0]:
            out_names = list(outputs[0])
            blocks.append(np.array([[o[k] for k in out_names] for o in outputs]))
            names += out_names
    draws = np.hstack(blocks)
    prov = {"method": mixture.method_tag, "n": n}
    if model is not None:
        prov["model"] = model.name
    return SampleSet(tuple(names), draws, seed, prov)


@dataclass(frozen=True)
class HyperSummary:
    names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    degenerate: bool
    projections: tuple[tuple[np.ndarray, np.ndarray], ...]


def hyper_summaries(quad: QuadPosterior, names=None) -> HyperSummary:
    """Node-weighted hyperparameter moments and per-dimension node projections."""
    pts = quad.theta_points
    lam = quad.node_weights
    m = pts.shape[1]
    names = tuple(names) if names is not None else tuple(f"theta[{j}]" for j in range(m))
    mean = lam @ pts
    degenerate = len(np.unique(pts, axis=0)) < 2
    if degenerate:
        sd = np.zeros(m)
    else:
        sd = np.sqrt(np.maximum(lam @ (pts - mean) ** 2, 0.0))
    projections = []
    for j in range(m):
        values, inverse = np.unique(pts[:, j], return_inverse=True)
        weights = np.bincount(inverse.ravel(), weights=lam, minlength=values.size)
        projections.append((values, weights))
    return HyperSummary(names, mean, sd, degenerate, tuple(projections))


def fit_grid(
    model: LogJointModel,
    spec_or_levels,
    decomposition: str,
    curvature: ModeCurvature,
    executor=None,
) -> QuadPosterior:
    spec = spec_or_levels if isinstance(spec_or_levels, GridSpec) else GridSpec(tuple(spec_or_levels))
    return normalize(build_adapted_grid(curvature, spec, decomposition), model, executor)


def laplace_normconst(curvature: ModeCurvature) -> float:
    """Laplace approximation of the theta-integral from the mode and curvature."""
    m = curvature.dim
    logdet_h = float(np.linalg.slogdet(curvature.curvature)[1])
    return curvature.log_laplace + 0.5 * m * math.log(2.0 * math.pi) - 0.5 * logdet_h
