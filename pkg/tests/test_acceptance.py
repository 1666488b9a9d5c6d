"""Acceptance criteria 1-10, one test each, with a pass/fail line per criterion."""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import integrate
from scipy.special import factorial2

from pcaaghq import cli
from pcaaghq.adapt import cumulative_proportion, outer_curvature, outer_optimize, select_rank
from pcaaghq.diagnostics import contraction, ks_statistic, mmd
from pcaaghq.ghq import GridSpec, univariate_rule
from pcaaghq.library import BUILTIN_MODELS, skewnormal_integrand
from pcaaghq.mcmc import convergence_report, ess
from pcaaghq.model_api import make_model, validate_model
from pcaaghq.posterior import eb_posterior, fit_grid, latent_mixture, laplace_normconst

from conftest import ACCEPTANCE_RESULTS, mini_elgm_chains, mode_of


@contextmanager
def criterion(number: int, title: str, limit: float):
    """Time the block, check the runtime limit and record a pass/fail line."""
    detail = {}
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield detail
        elapsed = time.perf_counter() - start + detail.pop("extra_time", 0.0)
        detail["runtime"] = f"{elapsed:.1f}s/{limit:g}s"
        assert elapsed < limit, f"runtime {elapsed:.1f}s exceeds {limit}s"
        status = "PASS"
    finally:
        info = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"criterion {number:2d} [{status}] {title}" + (f" ({info})" if info else "")
        ACCEPTANCE_RESULTS[number] = line
        print(line)


def test_criterion_01_ghq_exactness():
    with criterion(1, "GHQ exactness, k=1..10, degree <= 2k-1", 1.0) as d:
        worst = 0.0
        for k in range(1, 11):
            rule = univariate_rule(k)
            mass = rule.weights * np.exp(-0.5 * rule.nodes**2) / math.sqrt(2 * math.pi)
            for p in range(2 * k):
                exact = 0.0 if p % 2 else (float(factorial2(p - 1)) if p else 1.0)
                err = abs(math.fsum(mass * rule.nodes**p) - exact) / max(1.0, exact)
                worst = max(worst, err)
        d["max_rel_err"] = f"{worst:.1e}"
        assert worst <= 1e-10


def test_criterion_02_laplace_reduction():
    with criterion(2, "k=1 AGHQ equals the Laplace normalizing constant", 10.0) as d:
        worst = 0.0
        for name in BUILTIN_MODELS:
            model = make_model(name)
            outer = outer_optimize(model)
            curv = outer_curvature(model, outer.theta_hat, mode_fit=outer.mode_fit)
            quad = fit_grid(model, (1,) * model.hyper_dim, "spectral", curv)
            worst = max(worst, abs(quad.log_normconst - laplace_normconst(curv)))
        d["max_abs_diff"] = f"{worst:.1e}"
        assert worst <= 1e-12


def test_criterion_03_gaussian_exactness():
    with criterion(3, "Gaussian targets integrated exactly for every k", 10.0) as d:
        worst = 0.0
        for name in ("gauss_quadratic", "gauss_linear"):
            model = make_model(name)
            outer = outer_optimize(model)
            curv = outer_curvature(model, outer.theta_hat, mode_fit=outer.mode_fit)
            for k in range(1, 11):
                for decomposition in ("cholesky", "spectral"):
                    quad = fit_grid(model, (k,) * model.hyper_dim, decomposition, curv)
                    rel = abs(math.expm1(quad.log_normconst - model.true_log_normconst))
                    worst = max(worst, rel)
        d["max_rel_err"] = f"{worst:.1e}"
        assert worst <= 1e-10


def test_criterion_04_fig2_normalizing_constant():
    with criterion(4, "fig2 dense k=7 gives 4.0 +/- 0.02, errors nonincreasing", 5.0) as d:
        model, _, curv = mode_of("fig2")
        values = [math.exp(fit_grid(model, (k, k), "spectral", curv).log_normconst) for k in (1, 3, 5, 7)]
        errors = [abs(v - 4.0) for v in values]
        d["Z_k7"] = f"{values[-1]:.5f}"
        d["errors"] = "/".join(f"{e:.4f}" for e in errors)
        # trapezoid cross-check; [-10, 10]^2 would cut about 1.5% of the mass
        g = np.linspace(-30, 30, 1201)
        T = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
        trap = integrate.trapezoid(integrate.trapezoid(skewnormal_integrand(T), g, axis=1), g)
        d["trapezoid"] = f"{trap:.6f}"
        assert trap == pytest.approx(4.0, abs=1e-6)
        assert values[-1] == pytest.approx(4.0, abs=0.02)
        assert all(a >= b for a, b in zip(errors, errors[1:]))


def test_criterion_05_fig2_eigenstructure():
    with criterion(5, "fig2 first principal component explains 0.95 +/- 0.05", 5.0) as d:
        model = make_model("fig2")
        outer = outer_optimize(model)
        curv = outer_curvature(model, outer.theta_hat, mode_fit=outer.mode_fit)
        ratio = curv.eigenvalues[0] / curv.eigenvalues.sum()
        d["ratio"] = f"{ratio:.4f}"
        assert ratio == pytest.approx(0.95, abs=0.05)


def test_criterion_06_pca_consistency():
    with criterion(6, "mini_elgm_age: PCA s=m equals dense, variance explained monotone", 120.0) as d:
        model = make_model("mini_elgm_age")
        outer = outer_optimize(model)
        curv = outer_curvature(model, outer.theta_hat, mode_fit=outer.mode_fit)
        m = model.hyper_dim
        dense = fit_grid(model, GridSpec.uniform(m, 3), "spectral", curv)
        pca = fit_grid(model, GridSpec.pca(m, m, 3), "spectral", curv)
        diff = abs(dense.log_normconst - pca.log_normconst)
        cum = cumulative_proportion(curv.eigenvalues)
        d["diff"] = f"{diff:.1e}"
        d["variance_explained"] = "/".join(f"{c:.3f}" for c in cum)
        assert diff <= 1e-12
        assert np.all(np.diff(cum) >= 0)


def test_criterion_07_oracle_agreement():
    with criterion(7, "mini_elgm PCA-AGHQ means within 3 MCSE of MCMC, sd-RMSE <= EB", 900.0) as d:
        t0 = time.perf_counter()
        chains, mcmc_time = mini_elgm_chains()
        # charge the reference run even when another test already computed it
        d["extra_time"] = max(0.0, mcmc_time - (time.perf_counter() - t0))
        model = make_model("mini_elgm")
        outer = outer_optimize(model)
        curv = outer_curvature(model, outer.theta_hat, mode_fit=outer.mode_fit)
        sel = select_rank(curv, 0.9)
        quad = fit_grid(model, GridSpec.pca(model.hyper_dim, sel.s, 3), "spectral", curv)
        pca = latent_mixture(quad, model)
        eb = eb_posterior(model, outer)

        report = convergence_report(chains)
        d["rhat_max"] = f"{report.rhat_max:.3f}"
        assert report.rhat_max < 1.05, "reference chains not converged; the check does not count"

        N = model.latent_dim
        draws = chains.chains[:, :, :N]
        ref_mean = draws.reshape(-1, N).mean(axis=0)
        ref_sd = draws.reshape(-1, N).std(axis=0)
        mcse = np.array([ref_sd[i] / math.sqrt(ess(draws[:, :, i])) for i in range(N)])
        z = np.abs(pca.mean() - ref_mean) / mcse
        sd_rmse_pca = float(np.sqrt(np.mean((pca.sd() - ref_sd) ** 2)))
        sd_rmse_eb = float(np.sqrt(np.mean((eb.sd() - ref_sd) ** 2)))
        d["s"] = sel.s
        d["max_z"] = f"{z.max():.2f}"
        d["sd_rmse_pca"] = f"{sd_rmse_pca:.4f}"
        d["sd_rmse_eb"] = f"{sd_rmse_eb:.4f}"
        assert np.all(z < 3.0)
        assert sd_rmse_pca <= sd_rmse_eb


def test_criterion_08_metric_self_tests():
    with criterion(8, "KS, MMD and contraction self-tests", 1.0):
        a = np.random.default_rng(0).normal(size=(200, 2))
        assert ks_statistic(a[:, 0], a[:, 0]) == 0.0
        assert ks_statistic([1, 2], [1.5, 2.5]) == 0.5
        assert mmd(a, a) == 0.0
        assert abs(mmd([[0.0]], [[1.0]], bandwidth=1.0) - math.sqrt(2 - 2 * math.exp(-1))) <= 1e-12
        assert contraction(3.0, 3.0) == 0.0 and contraction(3.0, 0.0) == 1.0


def test_criterion_09_determinism(tmp_path):
    with criterion(9, "fit + sample identical across runs and thread counts", 300.0) as d:
        outs = []
        for run in (1, 2):
            for threads in (1, 4):
                out = tmp_path / f"run{run}_t{threads}"
                argv = ["fit", "--model", "mini_elgm", "--method", "pca-aghq", "--k", "3", "--pca-threshold", "0.9",
                        "--seed", "5", "--threads", str(threads), "--out", str(out)]
                assert cli.main(argv) == 0
                assert cli.main(["sample", "--fit", str(out), "--n", "500", "--threads", str(threads)]) == 0
                outs.append(out)
        names = ("mode.json", "nodes.csv", "scree.csv", "config.lock.json", "samples.csv", "provenance.json")
        for other in outs[1:]:
            for name in names:
                assert (other / name).read_bytes() == (outs[0] / name).read_bytes(), f"{other.name}/{name}"
        d["runs"] = len(outs)


def test_criterion_10_derivative_stack():
    with criterion(10, "validate_model passes on all built-in models at 1e-4", 30.0) as d:
        failed = [name for name in BUILTIN_MODELS if not validate_model(make_model(name), tol=1e-4).passed]
        d["models"] = len(BUILTIN_MODELS)
        assert not failed, failed
