"""Comparison metrics between posterior sample sets and grid-quality checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

__all__ = [
    "SECOND_90",
    "HIGH_INCIDENCE",
    "COVERAGE_TARGET",
    "ComparisonReport",
    "ks_statistic",
    "mmd",
    "median_bandwidth",
    "point_error",
    "exceedance",
    "contraction",
    "node_coverage",
    "grouped_ks",
    "compare_samples",
]

SECOND_90 = 0.81  # 0.9 squared
HIGH_INCIDENCE = 0.01
COVERAGE_TARGET = 1.0 / math.sqrt(12.0)  # sd of a uniform quantile


def _vector(a, what="samples") -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise ValueError(f"{what} must be nonempty")
    return a


def ks_statistic(a, b) -> float:
    """Largest absolute difference between the two right-continuous ECDFs."""
    a = np.sort(_vector(a))
    b = np.sort(_vector(b))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("joint samples must be a nonempty (draws, dim) matrix")
    return a


def median_bandwidth(a, b) -> float:
    """sigma = 1 / (2 median^2) over pairwise distances of the pooled sample."""
    pooled = np.vstack([_matrix(a), _matrix(b)])
    d = pdist(pooled)
    med = float(np.median(d)) if d.size else 0.0
    if not med > 0:
        return 1.0
    return 1.0 / (2.0 * med * med)


def mmd(a, b, bandwidth: float | None = None, moment_order: int = 1, seed: int = 0) -> float:
    """Maximum mean discrepancy (V-statistic) with kernel exp(-sigma ||u - v||^2).

    When the sample counts differ, the larger set is subsampled without
    replacement (seeded) to the smaller count. ``moment_order`` raises the
    draws elementwise to that power before the kernel is applied.
    """
    a = _matrix(a)
    b = _matrix(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if moment_order not in (1, 3):
        raise ValueError("moment_order must be 1 or 3")
    if a.shape[0] != b.shape[0]:
        rng = np.random.default_rng(seed)
        S = min(a.shape[0], b.shape[0])
        if a.shape[0] > S:
            a = a[np.sort(rng.choice(a.shape[0], S, replace=False))]
        else:
            b = b[np.sort(rng.choice(b.shape[0], S, replace=False))]
    if moment_order != 1:
        a = a**moment_order
        b = b**moment_order
    sigma = median_bandwidth(a, b) if bandwidth is None else float(bandwidth)
    if not sigma > 0:
        raise ValueError("bandwidth must be positive")
    S = a.shape[0]
    kaa = np.exp(-sigma * cdist(a, a, "sqeuclidean")).sum()
    kbb = np.exp(-sigma * cdist(b, b, "sqeuclidean")).sum()
    kab = np.exp(-sigma * cdist(a, b, "sqeuclidean")).sum()
    inner = (kaa + kbb - 2.0 * kab) / (S * S)
    return float(math.sqrt(max(inner, 0.0)))


def point_error(est, ref) -> tuple[float, float]:
    """(RMSE, MAE) of aligned per-parameter values."""
    est = np.asarray(est, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if est.shape != ref.shape or est.size == 0:
        raise ValueError("estimates and reference must be aligned and nonempty")
    err = est - ref
    return float(np.sqrt(np.mean(err**2))), float(np.mean(np.abs(err)))


def exceedance(samples, threshold: float) -> float:
    """Fraction of draws strictly above ``threshold``."""
    s = _vector(samples)
    return float(np.mean(s > threshold))


def contraction(prior_var, post_var):
    """1 - post_var / prior_var; near one when the data dominate the prior."""
    prior_var = np.asarray(prior_var, dtype=float)
    post_var = np.asarray(post_var, dtype=float)
    if np.any(prior_var <= 0) or np.any(post_var < 0):
        raise ValueError("need prior_var > 0 and post_var >= 0")
    out = 1.0 - post_var / prior_var
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Coverage:
    name: str
    coverage_sd: float
    degenerate: bool
    quantiles: np.ndarray = field(repr=False)

    target: float = COVERAGE_TARGET


def node_coverage(node_values, reference, name: str = "") -> Coverage:
    """Spread of the distinct node projections in reference-quantile units.

    Each distinct node value is mapped through the right-continuous ECDF of
    ``reference``; the score is the population sd of those quantiles. A
    uniform spread over the posterior scores 1/sqrt(12).
    """
    ref = np.sort(_vector(reference, "reference"))
    nodes = np.unique(_vector(node_values, "node values"))
    q = np.searchsorted(ref, nodes, side="right") / ref.size
    if nodes.size < 2:
        return Coverage(name, 0.0, True, q)
    return Coverage(name, float(np.std(q)), False, q)


def grouped_ks(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray], blocks: Mapping[str, str]) -> dict[str, float]:
    """Average KS statistic over the members of each block.

    ``blocks`` maps parameter names to block names; parameters missing from
    either sample set are skipped.
    """
    totals: dict[str, list[float]] = {}
    for name, block in blocks.items():
        if name in a and name in b:
            totals.setdefault(block, []).append(ks_statistic(a[name], b[name]))
    return {block: float(np.mean(v)) for block, v in totals.items()}


@dataclass
class ComparisonReport:
    names: tuple[str, ...]
    ks: dict
    ks_by_block: dict
    mmd: float
    mmd_order3: float
    bandwidth: float
    rmse_mean: float
    mae_mean: float
    rmse_sd: float
    mae_sd: float
    exceedance: dict
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "ks": self.ks,
            "ks_by_block": self.ks_by_block,
            "mmd": self.mmd,
            "mmd_order3": self.mmd_order3,
            "bandwidth": self.bandwidth,
            "rmse_mean": self.rmse_mean,
            "mae_mean": self.mae_mean,
            "rmse_sd": self.rmse_sd,
            "mae_sd": self.mae_sd,
            "exceedance": self.exceedance,
            "metadata": self.metadata,
        }


def compare_samples(
    a,
    b,
    blocks: Mapping[str, str] | None = None,
    joint: Sequence[str] | None = None,
    exceedance_thresholds: Mapping[str, float] | None = None,
    max_mmd_draws: int = 2000,
    seed: int = 0,
) -> ComparisonReport:
    """Compare two ``SampleSet`` objects over their shared columns.

    ``joint`` selects the columns entering the MMD (all shared columns by
    default); at most ``max_mmd_draws`` rows of each set are used there.
    Exceedance probabilities are reported for the output columns whose name
    starts with ``rho`` at ``SECOND_90`` unless thresholds are given.
    """
    shared = [n for n in a.names if n in set(b.names)]
    if not shared:
        raise ValueError("sample sets share no columns")
    da, db = a.to_dict(), b.to_dict()
    ks = {n: ks_statistic(da[n], db[n]) for n in shared}
    if blocks is None:
        blocks = {n: n.split("[")[0] for n in shared}
    by_block = grouped_ks(da, db, {n: blocks.get(n, n) for n in shared})
    mean_a = np.array([np.mean(da[n]) for n in shared])
    mean_b = np.array([np.mean(db[n]) for n in shared])
    sd_a = np.array([np.std(da[n]) for n in shared])
    sd_b = np.array([np.std(db[n]) for n in shared])
    rmse_mean, mae_mean = point_error(mean_a, mean_b)
    rmse_sd, mae_sd = point_error(sd_a, sd_b)

    cols = list(joint) if joint is not None else shared
    rng = np.random.default_rng(seed)

    def rows(ss):
        m = np.column_stack([ss.column(n) for n in cols])
        if m.shape[0] > max_mmd_draws:
            m = m[np.sort(rng.choice(m.shape[0], max_mmd_draws, replace=False))]
        return m

    ja, jb = rows(a), rows(b)
    bw = median_bandwidth(ja, jb)
    mmd1 = mmd(ja, jb, bandwidth=bw, seed=seed)
    mmd3 = mmd(ja, jb, moment_order=3, seed=seed)

    if exceedance_thresholds is None:
        exceedance_thresholds = {n: SECOND_90 for n in shared if n.startswith("rho")}
    exc = {}
    for n, thr in exceedance_thresholds.items():
        if n in da and n in db:
            exc[n] = {"threshold": thr, "a": exceedance(da[n], thr), "b": exceedance(db[n], thr)}
    meta = {
        "a": a.provenance.get("method"),
        "b": b.provenance.get("method"),
        "n_a": len(a),
        "n_b": len(b),
        "n_shared": len(shared),
    }
    return ComparisonReport(
        tuple(shared), ks, by_block, mmd1, mmd3, bw, rmse_mean, mae_mean, rmse_sd, mae_sd, exc, meta
    )
