"""Command-line front end: nodes, fit, sample, mcmc, compare, diagnose.

Exit codes: 0 ok, 1 other runtime failure, 2 optimizer failure,
3 curvature not positive definite, 4 missing artifact, 5 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import (
    CurvatureError,
    OptimizerError,
    cumulative_proportion,
    fixed_rank,
    outer_curvature,
    outer_optimize,
    scree_table,
    select_rank,
)
from .config import ConfigError, RunConfig, load_config, with_output
from .diagnostics import COVERAGE_TARGET, compare_samples, node_coverage
from .ghq import GridBudgetError, GridSpec, product_grid
from .io import read_json, read_numeric_table, write_json, write_table
from .laplace import LaplaceError, log_laplace
from .mcmc import SamplerError, convergence_report, run_chains
from .model_api import make_model
from .posterior import (
    MixturePosterior,
    NodeFitError,
    SampleSet,
    fit_grid,
    laplace_normconst,
    sample,
)

__all__ = ["main", "build_parser", "run_fit", "load_fit"]

EXIT_OK, EXIT_ERROR, EXIT_OPTIMIZER, EXIT_CURVATURE, EXIT_MISSING, EXIT_CONFIG = 0, 1, 2, 3, 4, 5


class MissingArtifact(FileNotFoundError):
    pass


@contextmanager
def _pool(threads: int):
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    if threads == 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex


def _model(cfg: RunConfig):
    try:
        return make_model(cfg.model, cfg.model_config)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot build model {cfg.model!r}: {exc}") from None


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing artifact: {path}")
    return path


# -- fit ---------------------------------------------------------------------------


def _levels(cfg: RunConfig, curvature, m: int):
    """Grid levels, retained rank and the variance it explains."""
    if cfg.method == "eb":
        return None, 0, 0.0
    if cfg.method == "aghq":
        return (cfg.k,) * m, m, 1.0
    if cfg.pca_threshold is not None:
        sel = select_rank(curvature, cfg.pca_threshold)
    else:
        s = cfg.s
        if s > m:
            print(f"note: s={s} exceeds the {m} hyperparameters; using s={m}", file=sys.stderr)
            s = m
        sel = fixed_rank(curvature, s)
    return tuple(GridSpec.pca(m, sel.s, cfg.k).levels), sel.s, sel.variance_explained


def run_fit(cfg: RunConfig, executor=None) -> dict:
    """Run the outer fit and quadrature for ``cfg``; returns the artifact contents."""
    if cfg.method == "mcmc":
        raise ConfigError("method mcmc is run with the 'mcmc' command")
    model = _model(cfg)
    outer = outer_optimize(model, executor=executor)
    curv = outer_curvature(model, outer.theta_hat, executor=executor, mode_fit=outer.mode_fit)
    m = model.hyper_dim
    levels, s, explained = _levels(cfg, curv, m)
    names = list(model.space.hyper_names)
    if levels is None:
        log_nc = laplace_normconst(curv)
        nodes = [(outer.theta_hat, outer.log_laplace, 0.0, 1.0)]
    else:
        quad = fit_grid(model, levels, cfg.decomposition, curv, executor=executor)
        log_nc = quad.log_normconst
        nodes = list(zip(quad.theta_points, quad.node_log_laplace, quad.grid.log_weights, quad.node_weights))
    mode = {
        "model": model.name,
        "method": cfg.method,
        "hyper_names": names,
        "theta_hat": outer.theta_hat,
        "log_laplace_at_mode": outer.log_laplace,
        "outer_iterations": outer.iterations,
        "curvature": curv.curvature,
        "eigenvalues": curv.eigenvalues,
        "eigenvectors": curv.eigenvectors,
        "levels": list(levels) if levels is not None else None,
        "s": s,
        "variance_explained": explained,
        "decomposition": cfg.decomposition if levels is not None else None,
        "n_nodes": len(nodes),
        "log_normconst": log_nc,
    }
    node_rows = [list(t) + [ll, lw, lam] for t, ll, lw, lam in nodes]
    return {
        "mode": mode,
        "scree": scree_table(curv),
        "node_header": names + ["log_laplace", "log_weight", "lambda"],
        "nodes": node_rows,
        "lock": cfg.lock(),
    }


def write_fit(result: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "mode.json", result["mode"])
    write_table(out / "scree.csv", ["rank", "eigenvalue", "cumulative_proportion"], result["scree"])
    write_table(out / "nodes.csv", result["node_header"], result["nodes"])
    write_json(out / "config.lock.json", result["lock"])


def load_fit(fit_dir, executor=None):
    """Rebuild the model and latent mixture from fit artifacts.

    Inner fits at every node are recomputed from the stored theta points,
    warm-started from the latent mode at the stored theta_hat, so the mixture
    is a deterministic function of the files.
    """
    fit_dir = Path(fit_dir)
    lock = read_json(_require(fit_dir / "config.lock.json"))
    mode = read_json(_require(fit_dir / "mode.json"))
    header, table = read_numeric_table(_require(fit_dir / "nodes.csv"))
    cfg = RunConfig.from_dict(lock).validate()
    model = _model(cfg)
    m = model.hyper_dim
    if header[:m] != list(model.space.hyper_names):
        raise ConfigError(f"{fit_dir / 'nodes.csv'} does not match model {model.name!r}")
    thetas = table[:, :m]
    lam = table[:, header.index("lambda")]
    anchor = log_laplace(model, np.asarray(mode["theta_hat"], dtype=float)).x_hat

    def fit(theta):
        return log_laplace(model, theta, warm_start=anchor)

    points = list(thetas)
    fits = tuple(executor.map(fit, points) if executor is not None else map(fit, points))
    tag = {"eb": "EB", "aghq": "AGHQ-dense", "pca-aghq": "PCA-AGHQ"}[cfg.method]
    mixture = MixturePosterior(fits, lam / lam.sum(), tag, model.space.latent_names, model.space.hyper_names)
    return cfg, model, mixture, mode


# -- commands ----------------------------------------------------------------------


def _config_from_args(args) -> RunConfig:
    model_config = None
    if getattr(args, "model_config", None):
        try:
            model_config = json.loads(args.model_config)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--model-config is not valid JSON ({exc})") from None
    overrides = {
        "model": args.model,
        "model_config": model_config,
        "method": getattr(args, "method", None),
        "k": getattr(args, "k", None),
        "s": getattr(args, "s", None),
        "pca_threshold": getattr(args, "pca_threshold", None),
        "decomposition": getattr(args, "decomposition", None),
        "n_samples": getattr(args, "n_samples", None),
        "n_chains": getattr(args, "n_chains", None),
        "n_iter": getattr(args, "n_iter", None),
        "thin": getattr(args, "thin", None),
        "seed": args.seed,
    }
    return with_output(load_config(args.config, args.preset, overrides), args.out)


def cmd_nodes(args) -> int:
    if args.levels:
        try:
            levels = tuple(int(v) for v in args.levels.split(","))
        except ValueError:
            raise ConfigError(f"--levels must be comma-separated integers, got {args.levels!r}") from None
    else:
        levels = (args.k,) * args.dim
    try:
        spec = GridSpec(levels)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    grid = product_grid(spec)
    header = [f"dim{j + 1}" for j in range(spec.dim)] + ["weight"]
    rows = [list(p) + [w] for p, w in zip(grid.points, grid.weights)]
    if args.out:
        write_table(args.out, header, rows)
    else:
        from .io import fmt

        sys.stdout.write(",".join(header) + "\n")
        for row in rows:
            sys.stdout.write(",".join(fmt(v) for v in row) + "\n")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out or cfg.output or "fit")
    with _pool(args.threads) as ex:
        result = run_fit(cfg, ex)
    write_fit(result, out)
    mode = result["mode"]
    print(f"{mode['model']} {mode['method']}: {mode['n_nodes']} nodes, log_normconst {mode['log_normconst']:.10g}")
    return EXIT_OK


def cmd_sample(args) -> int:
    fit_dir = Path(args.fit)
    with _pool(args.threads) as ex:
        cfg, model, mixture, mode = load_fit(fit_dir, ex)
    n = args.n if args.n is not None else cfg.n_samples
    seed = args.seed if args.seed is not None else cfg.seed
    draws = sample(mixture, n, seed, model)
    draws.provenance.update(
        {
            "k": cfg.k if cfg.method != "eb" else None,
            "s": mode.get("s"),
            "levels": mode.get("levels"),
            "log_normconst": mode.get("log_normconst"),
            "version": __version__,
        }
    )
    out = Path(args.out) if args.out else fit_dir
    out.mkdir(parents=True, exist_ok=True)
    draws.write(out / "samples.csv", out / "provenance.json")
    print(f"wrote {n} draws ({mixture.method_tag}) to {out / 'samples.csv'}")
    return EXIT_OK


def cmd_mcmc(args) -> int:
    cfg = _config_from_args(args)
    model = _model(cfg)
    out = Path(args.out or cfg.output or "mcmc")
    with _pool(args.threads) as ex:
        chains = run_chains(model, cfg.n_chains, cfg.n_iter, cfg.seed, thin=cfg.thin, executor=ex)
    report = convergence_report(chains)
    draws = chains.to_sample_set(model)
    draws.provenance.update(
        {
            "n_iter": cfg.n_iter,
            "acceptance": chains.acceptance,
            "version": __version__,
        }
    )
    out.mkdir(parents=True, exist_ok=True)
    draws.write(out / "samples.csv", out / "provenance.json")
    write_json(out / "convergence.json", report.to_json())
    write_json(out / "config.lock.json", cfg.lock())
    print(f"{model.name} MCMC: min ESS {report.ess_min:.1f}, max R-hat {report.rhat_max}")
    return EXIT_OK


def _read_samples(path) -> SampleSet:
    path = _require(Path(path))
    prov = path.with_name("provenance.json")
    return SampleSet.read(path, prov if prov.exists() else None)


def cmd_compare(args) -> int:
    a = _read_samples(args.a)
    b = _read_samples(args.b)
    report = compare_samples(a, b, seed=args.seed)
    write_json(args.report, report.to_json())
    print(f"mean KS {np.mean(list(report.ks.values())):.4f}, MMD {report.mmd:.4f}, sd RMSE {report.rmse_sd:.4g}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    fit_dir = Path(args.fit)
    mode = read_json(_require(fit_dir / "mode.json"))
    header, table = read_numeric_table(_require(fit_dir / "nodes.csv"))
    ref = _read_samples(args.reference)
    out = Path(args.out) if args.out else fit_dir
    out.mkdir(parents=True, exist_ok=True)
    vals = np.asarray(mode["eigenvalues"], dtype=float)
    cum = cumulative_proportion(vals)
    write_table(out / "scree.csv", ["rank", "eigenvalue", "cumulative_proportion"],
                [(j + 1, v, c) for j, (v, c) in enumerate(zip(vals, cum))])
    rows = []
    for j, name in enumerate(mode["hyper_names"]):
        if name not in ref.names:
            raise MissingArtifact(f"reference samples have no column {name!r}")
        cov = node_coverage(table[:, j], ref.column(name), name)
        rows.append((name, cov.coverage_sd, COVERAGE_TARGET, cov.degenerate))
    write_table(out / "coverage.csv", ["param", "coverage_sd", "target", "degenerate"], rows)
    for name, sd, _, degenerate in rows:
        print(f"{name}: coverage sd {sd:.4f}" + (" (degenerate)" if degenerate else ""))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _add_run_options(p, mcmc: bool = False) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--preset", help="named preset (fig2, table1)")
    p.add_argument("--model", help="built-in model name")
    p.add_argument("--model-config", help="model configuration as a JSON object")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1)
    if mcmc:
        p.add_argument("--n-chains", type=int)
        p.add_argument("--n-iter", type=int)
        p.add_argument("--thin", type=int)
    else:
        p.add_argument("--method", choices=("eb", "aghq", "pca-aghq"))
        p.add_argument("--k", type=int)
        p.add_argument("--s", type=int)
        p.add_argument("--pca-threshold", type=float)
        p.add_argument("--decomposition", choices=("cholesky", "spectral"))
        p.add_argument("--n-samples", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcaaghq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nodes", help="write a standard Gauss-Hermite product grid")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--levels", help="comma-separated levels per dimension (overrides --k/--dim)")
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_nodes)

    p = sub.add_parser("fit", help="outer fit, adapted grid and normalization")
    _add_run_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sample", help="draw from a fitted latent mixture")
    p.add_argument("--fit", required=True, help="fit directory")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: the fit directory)")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("mcmc", help="adaptive random-walk Metropolis reference run")
    _add_run_options(p, mcmc=True)
    p.set_defaults(func=cmd_mcmc)

    p = sub.add_parser("compare", help="compare two sample files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--report", required=True, help="output JSON path")
    p.add_argument("--seed", type=int, default=0, help="seed for MMD subsampling")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="scree table and node coverage of a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--reference", required=True, help="reference samples CSV")
    p.add_argument("--out", help="output directory (default: the fit directory)")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GridBudgetError as exc:
        print(f"configuration error: {exc} (set AGHQ_POINT_BUDGET to raise the cap)", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    except (OptimizerError, NodeFitError, LaplaceError) as exc:
        print(f"optimisation failed: {exc}", file=sys.stderr)
        trace = getattr(exc, "trace", None)
        if trace:
            last = trace[-1]
            print(f"  last iterate: theta={last['theta']}, gradient norm {last['grad_norm']:.3e}", file=sys.stderr)
        return EXIT_OPTIMIZER
    except CurvatureError as exc:
        print(f"curvature error: {exc}", file=sys.stderr)
        return EXIT_CURVATURE
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
