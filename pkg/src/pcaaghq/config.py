"""Run configuration: JSON file plus command-line overrides, with presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .ghq import MAX_LEVEL

__all__ = ["ConfigError", "RunConfig", "PRESETS", "load_config", "METHODS", "DECOMPOSITIONS"]

METHODS = ("eb", "aghq", "pca-aghq", "mcmc")
DECOMPOSITIONS = ("cholesky", "spectral")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: str
    seed: int
    model_config: dict = field(default_factory=dict)
    method: str = "aghq"
    k: int = 3
    s: int | None = None
    pca_threshold: float | None = None
    decomposition: str = "spectral"
    n_samples: int = 1000
    n_chains: int = 4
    n_iter: int = 20000
    thin: int = 1
    output: str | None = None

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.decomposition not in DECOMPOSITIONS:
            raise ConfigError(f"decomposition must be one of {DECOMPOSITIONS}, got {self.decomposition!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed is mandatory and must be an integer")
        if not isinstance(self.k, int) or not 1 <= self.k <= MAX_LEVEL:
            raise ConfigError(f"k must be an integer in [1, {MAX_LEVEL}], got {self.k!r}")
        if self.method == "pca-aghq":
            if self.decomposition != "spectral":
                raise ConfigError("pca-aghq requires the spectral decomposition")
            if (self.s is None) == (self.pca_threshold is None):
                raise ConfigError("pca-aghq needs exactly one of s and pca_threshold")
        elif self.s is not None or self.pca_threshold is not None:
            raise ConfigError("s and pca_threshold apply only to method pca-aghq")
        if self.s is not None and (not isinstance(self.s, int) or self.s < 1):
            raise ConfigError(f"s must be a positive integer, got {self.s!r}")
        if self.pca_threshold is not None and not 0.0 < self.pca_threshold <= 1.0:
            raise ConfigError(f"pca_threshold must lie in (0, 1], got {self.pca_threshold}")
        for name in ("n_samples", "n_chains", "n_iter", "thin"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.model_config, dict):
            raise ConfigError("model_config must be a JSON object")
        return self

    def lock(self) -> dict:
        """Canonical content of config.lock.json (the output location is not part of it)."""
        out = asdict(self)
        out.pop("output")
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        if "model" not in data:
            raise ConfigError("configuration needs a model name")
        if "seed" not in data or data["seed"] is None:
            raise ConfigError("seed is mandatory")
        return cls(**data)


PRESETS = {
    # two-dimensional Gaussian-copula integrand with known normalizing constant 4
    "fig2": {"model": "fig2", "method": "aghq", "k": 7, "decomposition": "spectral", "seed": 1},
    # settings of the large-model run (k = 3, s = 8, 1000 samples), with s clipped to m
    "table1": {
        "model": "mini_elgm_age",
        "method": "pca-aghq",
        "k": 3,
        "s": 8,
        "n_samples": 1000,
        "n_chains": 4,
        "n_iter": 50000,
        "thin": 20,
        "seed": 1,
    },
}


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge preset, JSON file and overrides (later sources win) and validate."""
    data: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        data.update(PRESETS[preset])
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    # s and pca_threshold are exclusive; an override of one clears the other
    if overrides:
        if overrides.get("s") is not None and "pca_threshold" in data and overrides.get("pca_threshold") is None:
            data["pca_threshold"] = None
        if overrides.get("pca_threshold") is not None and overrides.get("s") is None:
            data["s"] = None
        if overrides.get("method") not in (None, "pca-aghq"):
            data["s"] = data["pca_threshold"] = None
    return RunConfig.from_dict(data).validate()


def with_output(cfg: RunConfig, output) -> RunConfig:
    return replace(cfg, output=None if output is None else str(output))
