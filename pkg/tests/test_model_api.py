import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from pcaaghq.model_api import (
    BudgetExceeded,
    EvaluationBudget,
    LogJointModel,
    NonFiniteEvaluation,
    ParameterSpace,
    available_models,
    default_step,
    fd_gradient,
    fd_hessian,
    fd_jacobian,
    make_model,
    register_model,
    validate_model,
)
from pcaaghq.library import BUILTIN_MODELS


class ToyGaussian(LogJointModel):
    """x ~ N(0, exp(2 theta) I) in two dimensions."""

    name = "toy"

    def __init__(self, flip=False):
        self.flip = flip
        self.space = ParameterSpace(("a", "b"), ("t",))

    def log_joint(self, x, theta):
        v = math.exp(2 * theta[0])
        return float(-0.5 * np.sum(x**2) / v - x.size * theta[0] - math.log(2 * math.pi))

    def latent_gradient(self, x, theta):
        g = -np.asarray(x) / math.exp(2 * theta[0])
        return -g if self.flip else g

    def latent_hessian(self, x, theta):
        return np.eye(2) / math.exp(2 * theta[0])


def test_parameter_space_blocks():
    space = ParameterSpace(("a", "b", "c"), ("t",), (("ab", 0, 2), ("c", 2, 3)))
    assert space.latent_dim == 3 and space.hyper_dim == 1
    assert space.block_slices() == {"ab": slice(0, 2), "c": slice(2, 3)}
    assert space.block_of() == {"a": "ab", "b": "ab", "c": "c", "t": "t"}
    assert ParameterSpace(("a",), ("t",)).latent_blocks == (("x", 0, 1),)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(latent_names=("a", "a"), hyper_names=("t",)),
        dict(latent_names=("a",), hyper_names=()),
        dict(latent_names=("a", "b"), hyper_names=("t",), latent_blocks=(("x", 0, 1),)),
        dict(latent_names=("a", "b"), hyper_names=("t",), latent_blocks=(("x", 0, 1), ("y", 0, 2))),
        dict(latent_names=("t",), hyper_names=("t",)),
    ],
)
def test_parameter_space_rejects(kwargs):
    with pytest.raises(ValueError):
        ParameterSpace(**kwargs)


def test_fd_gradient_examples():
    assert fd_gradient(lambda x: x[0] ** 2, [3.0])[0] == pytest.approx(6.0, abs=1e-6)
    np.testing.assert_array_equal(fd_gradient(lambda x: 5.0, np.zeros(3)), np.zeros(3))
    g = fd_gradient(lambda x: math.exp(x[0] + 2 * x[1]), [0.0, 0.0])
    np.testing.assert_allclose(g, [1.0, 2.0], atol=1e-5)


def test_fd_gradient_threads_identical():
    f = lambda x: float(np.sin(x[0]) * np.exp(x[1]) + x[2] ** 3)
    p = np.array([0.3, -0.7, 1.1])
    with ThreadPoolExecutor(4) as ex:
        np.testing.assert_array_equal(fd_gradient(f, p), fd_gradient(f, p, executor=ex))


def test_default_step():
    np.testing.assert_allclose(default_step(np.array([0.5, -10.0])), np.cbrt(np.finfo(float).eps) * np.array([1, 10]))


def test_fd_hessian_examples():
    assert fd_hessian(lambda x: 0.5 * x[0] ** 2, [0.7])[0, 0] == pytest.approx(1.0, abs=1e-4)
    H = fd_hessian(lambda x: x[0] * x[1], [0.0, 0.0])
    assert H[0, 1] == pytest.approx(1.0, abs=1e-4) and H[1, 0] == H[0, 1]
    np.testing.assert_allclose(fd_hessian(lambda x: 3 * x[0] - x[1], [0.0, 0.0]), 0.0, atol=1e-6)
    # away from the origin, rounding in f dominates unless the step is larger
    affine = lambda x: 3 * x[0] - x[1] + 2
    np.testing.assert_allclose(fd_hessian(affine, [1.0, 2.0], 1e-3), 0.0, atol=1e-6)


def test_fd_hessian_richardson_is_more_accurate():
    f = lambda x: float(np.exp(x[0]) * np.cos(x[1]))
    p = np.array([0.2, 0.4])
    exact = np.array([[math.exp(0.2) * math.cos(0.4), -math.exp(0.2) * math.sin(0.4)],
                      [-math.exp(0.2) * math.sin(0.4), -math.exp(0.2) * math.cos(0.4)]])
    plain = fd_hessian(f, p, 0.05)
    rich = fd_hessian(f, p, 0.05, richardson=True)
    assert np.max(np.abs(rich - exact)) < 0.01 * np.max(np.abs(plain - exact))


def test_fd_jacobian():
    J = fd_jacobian(lambda x: np.array([x[0] * x[1], x[1] ** 2]), [2.0, 3.0])
    np.testing.assert_allclose(J, [[3.0, 2.0], [0.0, 6.0]], atol=1e-6)


def test_fd_reports_nonfinite_coordinate():
    f = lambda x: math.log(x[1]) if x[1] > 0 else float("nan")
    with pytest.raises(NonFiniteEvaluation) as err:
        fd_gradient(f, [1.0, 1e-7])
    assert err.value.coordinate == 1


def test_validate_model_toy_and_flagged():
    assert validate_model(ToyGaussian()).passed
    report = validate_model(ToyGaussian(flip=True))
    assert not report.passed
    assert report.gradient_error["x"] > 1e-4
    assert any("gradient" in issue for issue in report.issues)


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_validate_builtin_models(name):
    report = validate_model(make_model(name), n_points=4, seed=3)
    assert report.passed, report.issues


@pytest.mark.parametrize("name", [n for n in BUILTIN_MODELS if make_model(n).latent_dim > 0])
def test_log_joint_decreases_along_rays(name):
    model = make_model(name)
    rng = np.random.default_rng(11)
    theta = 0.3 * rng.standard_normal(model.hyper_dim)
    x0 = np.zeros(model.latent_dim)
    base = model.log_joint(x0, theta)
    assert np.isfinite(base)
    for _ in range(10):
        d = rng.standard_normal(model.latent_dim)
        d /= np.linalg.norm(d)
        vals = [model.log_joint(x0 + r * d, theta) for r in (10.0, 100.0, 1000.0)]
        assert all(np.isfinite(vals))
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < base - 100


def test_budget():
    budget = EvaluationBudget(max_log_joint_calls=3)
    budget.charge(2)
    assert budget.calls == 2
    with pytest.raises(BudgetExceeded):
        budget.charge(2)
    with pytest.raises(ValueError):
        EvaluationBudget(max_log_joint_calls=0)
    with pytest.raises(ValueError):
        EvaluationBudget(wall_clock_hint=-1.0)


def test_registry():
    assert set(BUILTIN_MODELS) <= set(available_models())
    with pytest.raises(KeyError):
        make_model("no_such_model")
    with pytest.raises(ValueError):
        register_model("fig2")(lambda cfg: None)
    with pytest.raises(ValueError):
        make_model("fig2", {"unexpected": 1})


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_config_rebuilds_model(name):
    model = make_model(name)
    again = make_model(name, model.config())
    rng = np.random.default_rng(0)
    x = rng.standard_normal(model.latent_dim)
    t = 0.2 * rng.standard_normal(model.hyper_dim)
    assert again.log_joint(x, t) == model.log_joint(x, t)
    assert again.space == model.space


def test_default_sampler_coordinates_identity():
    model = ToyGaussian()
    z = np.array([0.3, -1.0])
    x, log_jac = model.sampler_coordinates(z, np.zeros(1))
    np.testing.assert_array_equal(x, z)
    assert log_jac == 0.0
    np.testing.assert_array_equal(model.sampler_inverse(x, np.zeros(1)), z)
