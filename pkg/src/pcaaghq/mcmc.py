"""Adaptive random-walk Metropolis reference sampler and chain diagnostics.

The sampler targets the joint density of (x, theta). During warmup the
proposal scale is tuned toward a 0.234 acceptance rate and the proposal
covariance is re-estimated from the draws of successively doubling
windows; everything is frozen once warmup ends, so the post-warmup chain
is a plain Metropolis chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model_api import LogJointModel
from .posterior import SampleSet

__all__ = [
    "TARGET_ACCEPT",
    "SamplerError",
    "ChainSet",
    "ConvergenceReport",
    "run_chains",
    "ess",
    "ess_diagnostic",
    "rhat",
    "convergence_report",
]

TARGET_ACCEPT = 0.234
_BLOCK = 1024
MIN_ESS_PER_CHAIN = 10


class SamplerError(RuntimeError):
    pass


@dataclass
class ChainSet:
    names: tuple[str, ...]
    chains: np.ndarray  # (n_chains, n_kept, d), post-warmup only
    n_warmup: int
    acceptance: np.ndarray
    warmup_acceptance: np.ndarray
    seed: int
    thin: int = 1
    proposal_scale: np.ndarray = field(default=None, repr=False)

    @property
    def n_chains(self) -> int:
        return self.chains.shape[0]

    def pooled(self) -> np.ndarray:
        return self.chains.reshape(-1, self.chains.shape[2])

    def to_sample_set(self, model: LogJointModel | None = None, include_outputs: bool = True) -> SampleSet:
        draws = self.pooled()
        names = list(self.names)
        if model is not None and include_outputs:
            N = model.latent_dim
            outs = [model.output_map(row[:N], row[N:]) for row in draws]
            if outs and outs[0]:
                keys = list(outs[0])
                draws = np.hstack([draws, np.array([[o[k] for k in keys] for o in outs])])
                names += keys
        prov = {"method": "MCMC", "n_chains": self.n_chains, "n_warmup": self.n_warmup, "thin": self.thin}
        if model is not None:
            prov["model"] = model.name
        return SampleSet(tuple(names), draws, self.seed, prov)


def _windows(n_warmup: int) -> list[int]:
    """End points of covariance-adaptation windows (doubling after a diagonal phase)."""
    start = max(1, int(0.15 * n_warmup))
    ends = []
    width = max(50, int(0.02 * n_warmup))
    pos = start
    while pos + width < n_warmup:
        if pos + 3 * width > n_warmup:
            break
        pos += width
        ends.append(pos)
        width *= 2
    return ends


def _run_one(log_target, x0, n_iter, n_warmup, thin, rng):
    d = x0.size
    x = x0.copy()
    lp = log_target(x)
    if not np.isfinite(lp):
        raise SamplerError("target density is not finite at the initial point")
    chol = np.eye(d)
    log_scale = math.log(2.38 / math.sqrt(d)) - math.log(10.0)
    window_ends = set(_windows(n_warmup))
    window_draws = []
    window_start = 0
    kept = []
    accepted_warm = accepted_post = 0
    local_t = 0
    z_block = u_block = None
    for t in range(n_iter):
        j = t % _BLOCK
        if j == 0:
            z_block = rng.standard_normal((_BLOCK, d))
            u_block = rng.random(_BLOCK)
        prop = x + math.exp(log_scale) * (chol @ z_block[j])
        lp_prop = log_target(prop)
        log_alpha = lp_prop - lp if np.isfinite(lp_prop) else -np.inf
        accept = math.log(u_block[j]) < log_alpha
        if accept:
            x, lp = prop, lp_prop
        if t < n_warmup:
            accepted_warm += accept
            alpha = math.exp(min(0.0, log_alpha)) if log_alpha > -np.inf else 0.0
            local_t += 1
            log_scale += (alpha - TARGET_ACCEPT) / local_t**0.6
            window_draws.append(x)
            if t + 1 in window_ends:
                draws = np.array(window_draws[window_start:])
                n = draws.shape[0]
                cov = np.cov(draws, rowvar=False).reshape(d, d)
                # shrink toward a small diagonal, as in windowed adaptation schemes
                cov = (n / (n + 5.0)) * cov + 1e-3 * (5.0 / (n + 5.0)) * np.eye(d)
                try:
                    chol = np.linalg.cholesky(cov)
                    log_scale = math.log(2.38 / math.sqrt(d))
                    local_t = 0
                except np.linalg.LinAlgError:
                    pass
                window_start = len(window_draws)
            if t + 1 == n_warmup:
                rate = accepted_warm / n_warmup
                if rate < 0.01:
                    raise SamplerError(
                        f"warmup acceptance {rate:.4f} below 0.01; proposal scale "
                        f"{math.exp(log_scale):.3e}, proposal sd range "
                        f"[{np.min(np.abs(np.diag(chol))):.3e}, {np.max(np.abs(np.diag(chol))):.3e}]"
                    )
        else:
            accepted_post += accept
            if (t - n_warmup) % thin == 0:
                kept.append(x.copy())
    n_post = n_iter - n_warmup
    return (
        np.array(kept),
        accepted_post / max(n_post, 1),
        accepted_warm / max(n_warmup, 1),
        math.exp(log_scale) * np.sqrt(np.sum(chol**2, axis=1)),
    )


def run_chains(
    model: LogJointModel,
    n_chains: int = 4,
    n_iter: int = 20000,
    seed: int = 0,
    warmup_fraction: float = 0.5,
    thin: int = 1,
    init_scale: float = 0.1,
    executor=None,
) -> ChainSet:
    """Run independent adaptive random-walk Metropolis chains on (x, theta).

    Chain ``c`` uses the random stream seeded with ``seed + c``; the first
    ``warmup_fraction`` of each chain is discarded.
    """
    if n_chains < 1 or n_iter < 2:
        raise ValueError("need at least one chain and two iterations")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    N, m = model.latent_dim, model.hyper_dim
    d = N + m
    n_warmup = int(round(warmup_fraction * n_iter))

    # chains move in the model's sampler coordinates and are stored natively
    def log_target(z):
        theta = z[N:]
        x, log_jac = model.sampler_coordinates(z[:N], theta)
        return model.log_joint(x, theta) + log_jac

    def to_native(kept):
        out = kept.copy()
        for row in out:
            row[:N] = model.sampler_coordinates(row[:N], row[N:])[0]
        return out

    def chain(c):
        rng = np.random.default_rng(seed + c)
        for _ in range(100):
            x0 = init_scale * rng.standard_normal(d)
            if np.isfinite(log_target(x0)):
                break
        else:
            raise SamplerError("could not find a finite initial point near the origin")
        kept, *rest = _run_one(log_target, x0, n_iter, n_warmup, thin, rng)
        return (to_native(kept), *rest)

    results = list(executor.map(chain, range(n_chains))) if executor else [chain(c) for c in range(n_chains)]
    names = tuple(model.space.latent_names) + tuple(model.space.hyper_names)
    return ChainSet(
        names=names,
        chains=np.stack([r[0] for r in results]),
        n_warmup=n_warmup,
        acceptance=np.array([r[1] for r in results]),
        warmup_acceptance=np.array([r[2] for r in results]),
        seed=seed,
        thin=thin,
        proposal_scale=np.stack([r[3] for r in results]),
    )


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    return acov / n


def ess_diagnostic(draws) -> tuple[float, bool]:
    """Effective sample size and a flag for unreliable estimates.

    ``draws`` is a vector (one chain) or a (chains, draws) matrix. Uses the
    multi-chain autocorrelation estimate truncated by Geyer's initial
    monotone positive sequence. Flagged when the variance is zero (ESS is
    returned as NaN), the positive sequence runs out of lags, or the
    estimate is below ``MIN_ESS_PER_CHAIN`` per chain.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 4:
        raise ValueError("need at least four draws per chain")
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    if not var_plus > 0:
        return float("nan"), True
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    total = 0.0
    prev = np.inf
    terminated = False
    for k in range(n // 2):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            terminated = True
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
    tau = max(-1.0 + 2.0 * total, 1.0 / math.log10(max(m * n, 10)))
    value = m * n / tau
    return float(value), not terminated or value < MIN_ESS_PER_CHAIN * m


def ess(draws) -> float:
    return ess_diagnostic(draws)[0]


def rhat(chains) -> float | None:
    """Split-chain potential scale reduction factor.

    Returns ``None`` when the within-chain variance is zero, where the
    ratio is undefined.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("R-hat needs a (chains, draws) matrix with at least two chains")
    n = x.shape[1] // 2
    if n < 2:
        raise ValueError("chains too short to split")
    split = np.concatenate([x[:, :n], x[:, -n:]], axis=0)
    W = split.var(axis=1, ddof=1).mean()
    if not W > 0:
        return None
    B_over_n = split.mean(axis=1).var(ddof=1)
    var_plus = (n - 1.0) / n * W + B_over_n
    return float(math.sqrt(var_plus / W))


@dataclass
class ConvergenceReport:
    names: tuple[str, ...]
    ess: np.ndarray
    rhat: list
    flags: list[str]

    @property
    def ess_min(self) -> float:
        finite = self.ess[np.isfinite(self.ess)]
        return float(finite.min()) if finite.size else float("nan")

    @property
    def rhat_max(self) -> float | None:
        defined = [r for r in self.rhat if r is not None]
        return max(defined) if defined else None

    def to_json(self) -> dict:
        return {
            "ess_min": self.ess_min,
            "rhat_max": self.rhat_max,
            "names": list(self.names),
            "ess": [float(v) for v in self.ess],
            "rhat": list(self.rhat),
            "flags": list(self.flags),
        }


def convergence_report(chainset: ChainSet) -> ConvergenceReport:
    chains = chainset.chains
    values, rhats, flags = [], [], []
    for j, name in enumerate(chainset.names):
        e, flagged = ess_diagnostic(chains[:, :, j])
        values.append(e)
        if flagged:
            flags.append(f"{name}: ESS estimate unreliable")
        r = rhat(chains[:, :, j]) if chains.shape[0] >= 2 else None
        if r is None and chains.shape[0] >= 2:
            flags.append(f"{name}: R-hat undefined (zero variance)")
        rhats.append(r)
    return ConvergenceReport(tuple(chainset.names), np.array(values), rhats, flags)
