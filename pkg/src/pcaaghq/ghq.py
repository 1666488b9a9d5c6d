"""Gauss-Hermite rules and product grids in standard-Gaussian (z) space.

Weights are stored relative to the Lebesgue measure, i.e. the classical
Gaussian-measure weights divided by the standard normal density at each
node, so that ``sum(w * f(z))`` approximates ``int f(z) dz`` directly.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "MAX_LEVEL",
    "DEFAULT_POINT_BUDGET",
    "GridBudgetError",
    "UnivariateRule",
    "GridSpec",
    "QuadratureGrid",
    "hermite_eval",
    "univariate_rule",
    "product_grid",
    "point_budget",
]

MAX_LEVEL = 25
DEFAULT_POINT_BUDGET = 10**6
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class GridBudgetError(ValueError):
    """Raised when a product grid would exceed the configured point budget."""


def point_budget() -> int:
    """Point cap for product grids; ``AGHQ_POINT_BUDGET`` overrides the default."""
    raw = os.environ.get("AGHQ_POINT_BUDGET")
    if raw is None or raw.strip() == "":
        return DEFAULT_POINT_BUDGET
    budget = int(raw)
    if budget < 1:
        raise ValueError(f"AGHQ_POINT_BUDGET must be positive, got {raw!r}")
    return budget


def hermite_eval(k: int, z):
    """Probabilists' Hermite polynomial He_k evaluated at ``z``.

    Uses the recurrence He_{j+1}(z) = z He_j(z) - j He_{j-1}(z). Accepts
    scalars or arrays.
    """
    if k < 0:
        raise ValueError(f"Hermite degree must be non-negative, got {k}")
    z = np.asarray(z, dtype=float)
    prev = np.ones_like(z)
    if k == 0:
        return prev if prev.ndim else float(prev)
    cur = z.copy()
    for j in range(1, k):
        prev, cur = cur, z * cur - j * prev
    return cur if cur.ndim else float(cur)


def _hermite_pair(k: int, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (He_k(z), He_{k-1}(z), scale) where scale bounds rounding in He_k."""
    prev = np.ones_like(z)
    cur = z.copy()
    scale = np.abs(cur)
    for j in range(1, k):
        a = z * cur
        b = j * prev
        prev, cur = cur, a - b
        scale = np.abs(a) + np.abs(b)
    return cur, prev, scale


@dataclass(frozen=True)
class UnivariateRule:
    level: int
    nodes: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray

    def __len__(self) -> int:
        return self.level


@lru_cache(maxsize=None)
def _rule_arrays(k: int) -> tuple[np.ndarray, np.ndarray]:
    if k == 1:
        nodes = np.zeros(1)
    else:
        # Jacobi matrix of the monic probabilists' Hermite recurrence.
        off = np.sqrt(np.arange(1, k, dtype=float))
        nodes = eigh_tridiagonal(np.zeros(k), off, eigvals_only=True)
        nodes.sort()
        h, hm1, _ = _hermite_pair(k, nodes)
        nodes = nodes - h / (k * hm1)  # He_k' = k He_{k-1}
        nodes = 0.5 * (nodes - nodes[::-1])
        if k % 2 == 1:
            nodes[k // 2] = 0.0
        h, _, scale = _hermite_pair(k, nodes)
        resid = np.abs(h) / np.maximum(scale, 1.0)
        if not np.all(resid < 1e-12):
            raise ArithmeticError(
                f"Hermite root polish did not converge for k={k}: "
                f"max scaled residual {resid.max():.3e}"
            )
    # Gaussian-measure weight k!/He_{k+1}(z)^2, then divide by phi(z).
    hk1 = np.abs(hermite_eval(k + 1, nodes))
    log_w = (
        math.lgamma(k + 1)
        - 2.0 * np.log(np.atleast_1d(hk1))
        + _LOG_SQRT_2PI
        + 0.5 * nodes**2
    )
    log_w = 0.5 * (log_w + log_w[::-1])
    return nodes, log_w


def univariate_rule(k: int) -> UnivariateRule:
    """Gauss-Hermite rule with ``k`` nodes against the standard Gaussian."""
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"level must be a positive integer, got {k!r}")
    if k > MAX_LEVEL:
        raise ValueError(f"level {k} exceeds the supported maximum {MAX_LEVEL}")
    nodes, log_w = _rule_arrays(int(k))
    nodes = nodes.copy()
    log_w = log_w.copy()
    nodes.flags.writeable = False
    log_w.flags.writeable = False
    weights = np.exp(log_w)
    weights.flags.writeable = False
    return UnivariateRule(level=int(k), nodes=nodes, weights=weights, log_weights=log_w)


@dataclass(frozen=True)
class GridSpec:
    levels: tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(k) for k in self.levels)
        if not levels:
            raise ValueError("GridSpec needs at least one dimension")
        if any(k < 1 for k in levels):
            raise ValueError(f"all levels must be >= 1, got {levels}")
        if any(k > MAX_LEVEL for k in levels):
            raise ValueError(f"levels above {MAX_LEVEL} are not supported, got {levels}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def uniform(cls, m: int, k: int) -> "GridSpec":
        return cls((k,) * m)

    @classmethod
    def pca(cls, m: int, s: int, k: int) -> "GridSpec":
        """Levels ``k`` on the first ``s`` dimensions and 1 on the rest."""
        if not 1 <= s <= m:
            raise ValueError(f"retained rank s={s} must lie in [1, {m}]")
        return cls((k,) * s + (1,) * (m - s))

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def size(self) -> int:
        return math.prod(self.levels)

    @property
    def is_uniform(self) -> bool:
        return len(set(self.levels)) == 1


@dataclass(frozen=True)
class QuadratureGrid:
    spec: GridSpec
    points: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.spec.dim

    def __len__(self) -> int:
        return self.points.shape[0]


def product_grid(spec: GridSpec, budget: int | None = None) -> QuadratureGrid:
    """Cartesian product of univariate rules, first dimension varying slowest."""
    budget = point_budget() if budget is None else budget
    if spec.size > budget:
        raise GridBudgetError(
            f"grid with levels {spec.levels} has {spec.size} points, "
            f"over the budget of {budget}"
        )
    rules = [univariate_rule(k) for k in spec.levels]
    index = np.array(list(itertools.product(*(range(k) for k in spec.levels))), dtype=int)
    points = np.empty(index.shape, dtype=float)
    log_weights = np.zeros(index.shape[0])
    for j, rule in enumerate(rules):
        points[:, j] = rule.nodes[index[:, j]]
        log_weights = log_weights + rule.log_weights[index[:, j]]
    return QuadratureGrid(
        spec=spec, points=points, weights=np.exp(log_weights), log_weights=log_weights
    )
