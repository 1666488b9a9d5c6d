import json
import math

import numpy as np
import pytest

from pcaaghq import cli
from pcaaghq.config import ConfigError, PRESETS, RunConfig, load_config
from pcaaghq.io import read_json, read_numeric_table, read_table, write_json, write_table
from pcaaghq.model_api import LogJointModel, ParameterSpace, available_models, register_model


class _Flat(LogJointModel):
    """No curvature in theta: the Laplace objective is constant."""

    name = "test_flat"

    def __init__(self, slope=0.0):
        self.slope = slope
        self.space = ParameterSpace((), ("t",))

    def log_joint(self, x, theta):
        return self.slope * float(theta[0])

    def latent_gradient(self, x, theta):
        return np.zeros(0)

    def latent_hessian(self, x, theta):
        return np.zeros((0, 0))


if "test_flat" not in available_models():
    register_model("test_flat")(lambda cfg: _Flat(**cfg))


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def mini_fit(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini") / "fit"
    assert run("fit", "--model", "mini_elgm", "--method", "pca-aghq", "--k", 3, "--pca-threshold", 0.9,
               "--seed", 1, "--out", out) == 0
    assert run("sample", "--fit", out, "--n", 200) == 0
    return out


def test_nodes_command(tmp_path, capsys):
    assert run("nodes", "--k", 3, "--dim", 2) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "dim1,dim2,weight" and len(lines) == 10
    out = tmp_path / "n.csv"
    assert run("nodes", "--levels", "3,1", "--out", out) == 0
    header, data = read_numeric_table(out)
    assert header == ["dim1", "dim2", "weight"] and data.shape == (3, 3)
    np.testing.assert_array_equal(data[:, 1], 0.0)


def test_fig2_preset(tmp_path):
    out = tmp_path / "fig2"
    assert run("fit", "--preset", "fig2", "--out", out) == 0
    mode = read_json(out / "mode.json")
    assert math.exp(mode["log_normconst"]) == pytest.approx(4.0, abs=0.02)
    assert mode["n_nodes"] == 49 and mode["levels"] == [7, 7]
    header, _ = read_numeric_table(out / "scree.csv")
    assert header == ["rank", "eigenvalue", "cumulative_proportion"]
    lock = read_json(out / "config.lock.json")
    assert lock["model"] == "fig2" and "output" not in lock


def test_eb_has_one_node(tmp_path):
    out = tmp_path / "eb"
    assert run("fit", "--model", "gauss_conjugate", "--method", "eb", "--seed", 1, "--out", out) == 0
    header, nodes = read_numeric_table(out / "nodes.csv")
    assert nodes.shape[0] == 1 and header == ["log_tau", "log_laplace", "log_weight", "lambda"]
    assert nodes[0, -1] == 1.0


def test_sample_outputs(mini_fit):
    header, draws = read_numeric_table(mini_fit / "samples.csv")
    assert draws.shape[0] == 200 and np.all(np.isfinite(draws))
    assert header[0] == "beta0" and "b_x[0]" in header and "u_x[11]" in header
    assert "log_sigma_x" in header and "rho[0]" in header
    prov = read_json(mini_fit / "provenance.json")
    assert prov["method"] == "PCA-AGHQ" and prov["seed"] == 1 and prov["model"] == "mini_elgm"


def test_same_seed_reproducible(mini_fit, tmp_path):
    again = tmp_path / "again"
    assert run("sample", "--fit", mini_fit, "--n", 200, "--out", again) == 0
    assert (again / "samples.csv").read_bytes() == (mini_fit / "samples.csv").read_bytes()
    other = tmp_path / "other"
    assert run("sample", "--fit", mini_fit, "--n", 200, "--seed", 2, "--out", other) == 0
    assert (other / "samples.csv").read_bytes() != (mini_fit / "samples.csv").read_bytes()


def test_threads_do_not_change_outputs(tmp_path):
    outs = []
    for threads in (1, 4):
        out = tmp_path / f"t{threads}"
        assert run("fit", "--model", "mini_elgm", "--method", "aghq", "--k", 3, "--seed", 4,
                   "--threads", threads, "--out", out) == 0
        assert run("sample", "--fit", out, "--n", 100, "--threads", threads) == 0
        outs.append(out)
    for name in ("mode.json", "nodes.csv", "scree.csv", "samples.csv", "config.lock.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_artifacts_round_trip(mini_fit, tmp_path):
    for name in ("nodes.csv", "scree.csv", "samples.csv"):
        header, data = read_numeric_table(mini_fit / name)
        write_table(tmp_path / name, header, data.tolist())
        assert (tmp_path / name).read_bytes() == (mini_fit / name).read_bytes(), name
    for name in ("mode.json", "config.lock.json", "provenance.json"):
        write_json(tmp_path / name, read_json(mini_fit / name))
        assert (tmp_path / name).read_bytes() == (mini_fit / name).read_bytes(), name


def test_compare_self_is_zero(mini_fit, tmp_path):
    report = tmp_path / "r.json"
    samples = mini_fit / "samples.csv"
    assert run("compare", "--a", samples, "--b", samples, "--report", report) == 0
    data = read_json(report)
    assert data["mmd"] == 0.0 and data["mmd_order3"] == 0.0
    assert all(v == 0.0 for v in data["ks"].values())
    assert data["rmse_mean"] == data["mae_sd"] == 0.0


def test_compare_pca_vs_mcmc(mini_fit, tmp_path):
    mc = tmp_path / "mc"
    assert run("mcmc", "--model", "mini_elgm", "--n-chains", 2, "--n-iter", 4000, "--seed", 3, "--out", mc) == 0
    conv = read_json(mc / "convergence.json")
    assert {"ess_min", "rhat_max", "ess", "rhat"} <= set(conv)
    report = tmp_path / "r.json"
    assert run("compare", "--a", mini_fit / "samples.csv", "--b", mc / "samples.csv", "--report", report) == 0
    data = read_json(report)
    for key in ("ks", "ks_by_block", "mmd", "mmd_order3", "rmse_mean", "mae_mean", "rmse_sd", "mae_sd", "exceedance"):
        assert key in data
    assert set(data["ks_by_block"]) >= {"beta0", "b_x", "u_x", "rho"}
    assert all(math.isfinite(v) for v in data["ks"].values())
    assert all(math.isfinite(data[k]) for k in ("mmd", "mmd_order3", "rmse_mean", "rmse_sd"))
    assert data["metadata"]["a"] == "PCA-AGHQ" and data["metadata"]["b"] == "MCMC"


def test_diagnose(mini_fit, tmp_path):
    k1 = tmp_path / "k1"
    assert run("fit", "--model", "mini_elgm", "--method", "aghq", "--k", 1, "--seed", 1, "--out", k1) == 0
    assert run("diagnose", "--fit", k1, "--reference", mini_fit / "samples.csv") == 0
    header, rows = read_table(k1 / "coverage.csv")
    assert header == ["param", "coverage_sd", "target", "degenerate"]
    assert [r[0] for r in rows] == ["log_sigma_x", "logit_phi_x"]
    assert all(r[3] == "true" and float(r[1]) == 0.0 for r in rows)
    assert float(rows[0][2]) == pytest.approx(0.2887, abs=1e-4)
    assert run("diagnose", "--fit", mini_fit, "--reference", mini_fit / "samples.csv") == 0
    _, rows = read_table(mini_fit / "coverage.csv")
    assert rows[0][3] == "false" and float(rows[0][1]) > 0


def test_exit_codes(tmp_path, capsys):
    assert run("sample", "--fit", tmp_path / "nowhere") == 4
    assert run("fit", "--model", "fig2", "--out", tmp_path / "x") == 5  # no seed
    assert run("fit", "--model", "no_such_model", "--seed", 1, "--out", tmp_path / "x") == 5
    assert run("fit", "--model", "fig2", "--seed", 1, "--method", "pca-aghq", "--k", 3, "--out", tmp_path / "x") == 5
    assert run("fit", "--model", "test_flat", "--seed", 1, "--out", tmp_path / "x") == 3
    assert "identifiab" in capsys.readouterr().err
    assert run("fit", "--model", "test_flat", "--model-config", '{"slope": 1.0}', "--seed", 1,
               "--out", tmp_path / "x") == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert run("fit", "--config", tmp_path / "bad.json", "--out", tmp_path / "x") == 5
    assert run("nodes", "--k", 30) == 5


def test_budget_env_is_a_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv("AGHQ_POINT_BUDGET", "10")
    assert run("fit", "--model", "mini_elgm", "--method", "aghq", "--k", 5, "--seed", 1, "--out", tmp_path / "x") == 5


def test_table1_preset_clips_rank(tmp_path, capsys):
    cfg = load_config(preset="table1")
    assert (cfg.k, cfg.s, cfg.n_samples, cfg.thin, cfg.n_iter) == (3, 8, 1000, 20, 50000)
    assert run("fit", "--preset", "table1", "--out", tmp_path / "t1") == 0
    assert "s=8" in capsys.readouterr().err
    assert read_json(tmp_path / "t1" / "mode.json")["s"] == 4


# -- configuration ------------------------------------------------------------------


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": "mini_elgm", "method": "pca-aghq", "s": 1, "seed": 2}))
    cfg = load_config(path)
    assert cfg.s == 1 and cfg.decomposition == "spectral"
    cfg = load_config(path, overrides={"pca_threshold": 0.9})
    assert cfg.s is None and cfg.pca_threshold == 0.9
    cfg = load_config(path, overrides={"method": "aghq"})
    assert cfg.s is None and cfg.method == "aghq"
    assert set(PRESETS) == {"fig2", "table1"}


@pytest.mark.parametrize(
    "data",
    [
        {"model": "fig2"},
        {"model": "fig2", "seed": 1, "method": "pca-aghq"},
        {"model": "fig2", "seed": 1, "method": "pca-aghq", "s": 1, "decomposition": "cholesky"},
        {"model": "fig2", "seed": 1, "method": "aghq", "s": 1},
        {"model": "fig2", "seed": 1, "k": 0},
        {"model": "fig2", "seed": 1, "k": 26},
        {"model": "fig2", "seed": 1, "colour": "blue"},
        {"model": "fig2", "seed": 1, "method": "pca-aghq", "pca_threshold": 1.5},
    ],
)
def test_config_validation(data):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data).validate()
