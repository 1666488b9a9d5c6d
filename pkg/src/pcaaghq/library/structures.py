"""Precision matrices for IID, AR1, ICAR and BYM2 random effects."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "Adjacency",
    "PrecisionStructure",
    "precision_iid",
    "precision_ar1",
    "precision_icar",
    "precision_bym2",
    "bym2_effect",
    "icar_scale_factor",
    "grid_adjacency",
]


@dataclass(frozen=True)
class Adjacency:
    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        clean = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop at node {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ValueError(f"edge ({a}, {b}) outside 0..{self.n - 1}")
            clean.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", tuple(sorted(clean)))

    def matrix(self) -> np.ndarray:
        W = np.zeros((self.n, self.n))
        for a, b in self.edges:
            W[a, b] = W[b, a] = 1.0
        return W

    def n_components(self) -> int:
        return int(connected_components(csr_matrix(self.matrix()), directed=False)[0])

    @classmethod
    def read_csv(cls, path, n: int | None = None) -> "Adjacency":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        edges = [(int(r["a"]), int(r["b"])) for r in rows]
        if n is None:
            n = 1 + max(max(e) for e in edges)
        return cls(n, tuple(edges))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("a,b\n")
            for a, b in self.edges:
                fh.write(f"{a},{b}\n")


def grid_adjacency(rows: int, cols: int) -> Adjacency:
    """Rook adjacency on a ``rows x cols`` lattice, nodes numbered row-major."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return Adjacency(rows * cols, tuple(edges))


@dataclass(frozen=True)
class PrecisionStructure:
    kind: str
    size: int
    params: dict = field(default_factory=dict)
    matrix: np.ndarray = None
    rank_deficiency: int = 0


def precision_iid(n: int, sigma: float = 1.0) -> PrecisionStructure:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return PrecisionStructure("IID", n, {"sigma": sigma}, np.eye(n) / sigma**2, 0)


def precision_ar1(n: int, sigma: float, phi: float) -> PrecisionStructure:
    """Stationary AR1 precision with marginal variance ``sigma**2``."""
    if n < 2:
        raise ValueError("AR1 needs n >= 2")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not abs(phi) < 1:
        raise ValueError(f"AR1 correlation must satisfy |phi| < 1, got {phi}")
    diag = np.full(n, 1.0 + phi**2)
    diag[0] = diag[-1] = 1.0
    Q = np.diag(diag) - phi * (np.eye(n, k=1) + np.eye(n, k=-1))
    Q /= sigma**2 * (1.0 - phi**2)
    return PrecisionStructure("AR1", n, {"sigma": sigma, "phi": phi}, Q, 0)


def _laplacian(adj: Adjacency) -> np.ndarray:
    W = adj.matrix()
    return np.diag(W.sum(axis=1)) - W


def icar_scale_factor(adj: Adjacency) -> float:
    """Geometric mean of marginal variances under per-component sum-to-zero."""
    Q = _laplacian(adj)
    if np.any(np.diag(Q) == 0):
        raise ValueError("cannot scale an ICAR with isolated nodes")
    # pinv of the Laplacian is the covariance constrained to sum zero per component.
    variances = np.diag(np.linalg.pinv(Q, hermitian=True))
    return float(np.exp(np.mean(np.log(variances))))


def precision_icar(adj: Adjacency, scale: bool = False) -> PrecisionStructure:
    """Graph-Laplacian ICAR precision, optionally scaled to unit typical variance."""
    if not adj.edges:
        raise ValueError("ICAR needs at least one edge")
    Q = _laplacian(adj)
    params = {"scaled": bool(scale)}
    if scale:
        c = icar_scale_factor(adj)
        Q = Q * c
        params["scale_factor"] = c
    return PrecisionStructure("ICAR", adj.n, params, Q, adj.n_components())


def precision_bym2(adj: Adjacency, sigma: float, phi: float) -> PrecisionStructure:
    """Marginal precision of ``sigma * (sqrt(1-phi) v + sqrt(phi) w)``.

    At ``phi == 1`` the effect is a scaled ICAR and the matrix returned is
    its (singular) precision divided by ``sigma**2``.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not 0.0 <= phi <= 1.0:
        raise ValueError("BYM2 proportion must lie in [0, 1]")
    icar = precision_icar(adj, scale=True)
    if phi == 1.0:
        Q, deficiency = icar.matrix / sigma**2, icar.rank_deficiency
    else:
        cov = sigma**2 * ((1.0 - phi) * np.eye(adj.n) + phi * np.linalg.pinv(icar.matrix, hermitian=True))
        Q, deficiency = np.linalg.inv(cov), 0
    Q = 0.5 * (Q + Q.T)
    return PrecisionStructure("BYM2", adj.n, {"sigma": sigma, "phi": phi}, Q, deficiency)


def bym2_effect(v, w, sigma: float, phi: float) -> np.ndarray:
    """sigma * (sqrt(1 - phi) * v + sqrt(phi) * w)."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    return sigma * (np.sqrt(1.0 - phi) * v + np.sqrt(phi) * w)
