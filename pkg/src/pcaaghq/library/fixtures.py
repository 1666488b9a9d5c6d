"""Synthetic survey data for the ``mini_elgm`` models.

The shipped CSV files under ``data/`` are produced by
:func:`generate_mini_elgm_data` with the default seed; a test regenerates
them and checks that they are byte-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .formulas import kish_ess, weighted_mean
from .structures import Adjacency, grid_adjacency, precision_ar1, precision_icar

__all__ = [
    "FIXTURE_SEED",
    "GROUND_TRUTH",
    "SurveyTable",
    "generate_mini_elgm_data",
    "load_survey_csv",
    "write_survey_csv",
    "default_data_path",
    "default_adjacency_path",
    "write_default_fixtures",
]

FIXTURE_SEED = 20240101
GRID_SHAPE = (4, 3)
N_AGE_GROUPS = 5
GROUND_TRUTH = {
    "beta0": -1.2,
    "sigma_x": 0.6,
    "phi_x": 0.5,
    "sigma_a": 0.4,
    "phi_a": 0.7,
}


@dataclass(frozen=True)
class SurveyTable:
    area_id: np.ndarray
    age_group: np.ndarray
    sex: tuple[str, ...]
    y: np.ndarray
    m_eff: np.ndarray

    def __len__(self) -> int:
        return self.y.size


def default_data_path() -> Path:
    return Path(str(resources.files("pcaaghq.library") / "data" / "mini_elgm.csv"))


def default_adjacency_path() -> Path:
    return Path(str(resources.files("pcaaghq.library") / "data" / "grid_4x3_adjacency.csv"))


def _sum_zero_draw(Q: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    vals, vecs = np.linalg.eigh(Q)
    keep = vals > 1e-9
    z = rng.standard_normal(int(keep.sum()))
    return vecs[:, keep] @ (z / np.sqrt(vals[keep]))


def generate_mini_elgm_data(seed: int = FIXTURE_SEED) -> tuple[SurveyTable, Adjacency]:
    """Simulate weighted household-survey prevalence on a 4x3 district grid.

    Each area/age cell gets between 20 and 60 respondents with log-normal
    survey weights; ``m_eff`` is their Kish effective sample size and ``y``
    the weighted positive proportion scaled by ``m_eff``.
    """
    rng = np.random.default_rng(seed)
    adj = grid_adjacency(*GRID_SHAPE)
    n = adj.n
    gt = GROUND_TRUTH
    v = rng.standard_normal(n)
    w = _sum_zero_draw(precision_icar(adj, scale=True).matrix, rng)
    spatial = gt["sigma_x"] * (np.sqrt(1 - gt["phi_x"]) * v + np.sqrt(gt["phi_x"]) * w)
    Q_age = precision_ar1(N_AGE_GROUPS, gt["sigma_a"], gt["phi_a"]).matrix
    u_age = np.linalg.cholesky(np.linalg.inv(Q_age)) @ rng.standard_normal(N_AGE_GROUPS)

    area_id, age_group, ys, ms = [], [], [], []
    for a in range(n):
        for g in range(N_AGE_GROUPS):
            eta = gt["beta0"] + spatial[a] + u_age[g]
            p = 1.0 / (1.0 + np.exp(-eta))
            size = int(rng.integers(20, 61))
            weights = rng.lognormal(0.0, 0.5, size=size)
            outcome = (rng.random(size) < p).astype(float)
            m_eff = kish_ess(weights)
            area_id.append(a)
            age_group.append(g)
            ms.append(m_eff)
            ys.append(m_eff * weighted_mean(outcome, weights))
    table = SurveyTable(
        area_id=np.array(area_id),
        age_group=np.array(age_group),
        sex=("female",) * len(ys),
        y=np.array(ys),
        m_eff=np.array(ms),
    )
    return table, adj


def write_survey_csv(table: SurveyTable, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("area_id,age_group,sex,y,m_eff\n")
        for a, g, s, y, m in zip(table.area_id, table.age_group, table.sex, table.y, table.m_eff):
            fh.write(f"{a},{g},{s},{y:.17g},{m:.17g}\n")


def load_survey_csv(path) -> SurveyTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no survey rows")
    missing = {"area_id", "age_group", "sex", "y", "m_eff"} - set(rows[0])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    table = SurveyTable(
        area_id=np.array([int(r["area_id"]) for r in rows]),
        age_group=np.array([int(r["age_group"]) for r in rows]),
        sex=tuple(r["sex"] for r in rows),
        y=np.array([float(r["y"]) for r in rows]),
        m_eff=np.array([float(r["m_eff"]) for r in rows]),
    )
    if np.any(table.y < 0) or np.any(table.y > table.m_eff):
        raise ValueError(f"{path}: need 0 <= y <= m_eff on every row")
    return table


def write_default_fixtures(directory) -> tuple[Path, Path]:
    directory = Path(directory)
    table, adj = generate_mini_elgm_data()
    data_path = directory / "mini_elgm.csv"
    adj_path = directory / "grid_4x3_adjacency.csv"
    write_survey_csv(table, data_path)
    adj.write_csv(adj_path)
    return data_path, adj_path
