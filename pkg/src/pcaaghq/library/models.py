"""Built-in inference targets.

``fig2``
    Pure-hyperparameter skewnormal product (no latent field).
``gauss_quadratic``
    Scaled multivariate Gaussian over theta; exact normalizing constant.
``gauss_conjugate``
    Normal-normal model with a log-scale prior standard deviation.
``gauss_linear``
    Jointly Gaussian hierarchy where theta enters the latent mean linearly,
    so both the inner and outer integrals are Gaussian.
``mini_elgm`` / ``mini_elgm_age``
    Binomial survey prevalence on a small district graph with a BYM2
    spatial effect (and an AR1 age effect for the ``age`` variant).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, gammaln

from ..model_api import LogJointModel, ParameterSpace, register_model
from .fixtures import (
    default_adjacency_path,
    default_data_path,
    load_survey_csv,
)
from .formulas import log_skewnormal_integrand, weighted_mean, xbin_log_density
from .structures import Adjacency, precision_ar1, precision_icar

__all__ = [
    "Fig2Model",
    "GaussQuadraticModel",
    "GaussConjugateModel",
    "GaussLinearModel",
    "MiniElgmModel",
]

_LOG_2PI = math.log(2.0 * math.pi)
_LOG_HALF_NORMAL_CONST = math.log(2.0) - 0.5 * _LOG_2PI - math.log(2.5)
_LOG_BETA_FN = 2.0 * math.lgamma(0.5) - math.lgamma(1.0)  # B(0.5, 0.5)


def _expit(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def _log_normal(x, mean, sd):
    return -0.5 * _LOG_2PI - math.log(sd) - 0.5 * ((x - mean) / sd) ** 2


def _log_mvn(x, cov):
    sign, logdet = np.linalg.slogdet(cov)
    sol = np.linalg.solve(cov, x)
    return float(-0.5 * (x.size * _LOG_2PI + logdet + x @ sol))


class _NoLatent(LogJointModel):
    def latent_gradient(self, x, theta):
        return np.zeros(0)

    def latent_hessian(self, x, theta):
        return np.zeros((0, 0))


class Fig2Model(_NoLatent):
    name = "fig2"

    def __init__(self):
        self.space = ParameterSpace((), ("theta1", "theta2"))

    def log_joint(self, x, theta):
        return float(log_skewnormal_integrand(theta))

    true_log_normconst = math.log(4.0)


class GaussQuadraticModel(_NoLatent):
    """exp(log_scale) times a Gaussian density in theta."""

    name = "gauss_quadratic"

    def __init__(self, mean=(0.5, -1.0), cov=((1.0, 0.6), (0.6, 2.0)), log_scale=1.5):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        self.log_scale = float(log_scale)
        m = self.mean.size
        if self.cov.shape != (m, m):
            raise ValueError("cov must be m x m")
        np.linalg.cholesky(self.cov)
        self.space = ParameterSpace((), tuple(f"theta{j + 1}" for j in range(m)))

    def log_joint(self, x, theta):
        return self.log_scale + _log_mvn(np.asarray(theta) - self.mean, self.cov)

    @property
    def true_log_normconst(self) -> float:
        return self.log_scale

    def config(self):
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist(), "log_scale": self.log_scale}


class GaussConjugateModel(LogJointModel):
    """y_i ~ N(x, 1), x ~ N(0, exp(theta)^2), theta ~ N(0, prior_sd^2)."""

    name = "gauss_conjugate"
    DEFAULT_Y = (0.8, 1.3, -0.2, 2.1, 0.9, 1.7, 0.4, 1.1)

    def __init__(self, y=DEFAULT_Y, prior_sd=1.0):
        self.y = np.asarray(y, dtype=float)
        self.prior_sd = float(prior_sd)
        self.space = ParameterSpace(("x",), ("log_tau",))

    def log_joint(self, x, theta):
        x0 = float(x[0])
        t = float(theta[0])
        ll = np.sum(-0.5 * _LOG_2PI - 0.5 * (self.y - x0) ** 2)
        return float(ll + _log_normal(x0, 0.0, math.exp(t)) + _log_normal(t, 0.0, self.prior_sd))

    def latent_gradient(self, x, theta):
        x0 = float(x[0])
        return np.array([np.sum(self.y - x0) - x0 * math.exp(-2.0 * float(theta[0]))])

    def latent_hessian(self, x, theta):
        return np.array([[self.y.size + math.exp(-2.0 * float(theta[0]))]])

    def log_marginal(self, theta) -> float:
        """Closed-form log p(y | theta) + log p(theta)."""
        t = float(np.atleast_1d(theta)[0])
        n = self.y.size
        cov = np.eye(n) + math.exp(2.0 * t) * np.ones((n, n))
        return _log_mvn(self.y, cov) + _log_normal(t, 0.0, self.prior_sd)

    def posterior_mean_x(self, theta) -> float:
        prec = self.y.size + math.exp(-2.0 * float(np.atleast_1d(theta)[0]))
        return float(self.y.sum() / prec)

    def output_map(self, x, theta):
        return {"tau": math.exp(float(theta[0]))}

    def config(self):
        return {"y": self.y.tolist(), "prior_sd": self.prior_sd}


class GaussLinearModel(LogJointModel):
    """y_j ~ N(x_j, noise^2), x_j ~ N(theta_1 + theta_2 c_j, tau^2), theta ~ N(0, prior_sd^2 I)."""

    name = "gauss_linear"
    DEFAULT_Y = (1.2, 0.3, -0.4, 2.2, 1.9, 0.1)
    DEFAULT_C = (-1.0, -0.6, -0.2, 0.2, 0.6, 1.0)

    def __init__(self, y=DEFAULT_Y, c=DEFAULT_C, noise=0.7, tau=0.5, prior_sd=2.0):
        self.y = np.asarray(y, dtype=float)
        self.c = np.asarray(c, dtype=float)
        if self.y.shape != self.c.shape:
            raise ValueError("y and c must have equal length")
        self.noise, self.tau, self.prior_sd = float(noise), float(tau), float(prior_sd)
        n = self.y.size
        self.design = np.column_stack([np.ones(n), self.c])
        self.space = ParameterSpace(tuple(f"x[{j}]" for j in range(n)), ("theta1", "theta2"))

    def _prior_mean(self, theta):
        return self.design @ np.asarray(theta, dtype=float)

    def log_joint(self, x, theta):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        lik = np.sum(_log_normal(self.y, x, self.noise))
        prior = np.sum(_log_normal(x, self._prior_mean(theta), self.tau))
        hyper = np.sum(_log_normal(theta, 0.0, self.prior_sd))
        return float(lik + prior + hyper)

    def latent_gradient(self, x, theta):
        x = np.asarray(x, dtype=float)
        return (self.y - x) / self.noise**2 - (x - self._prior_mean(theta)) / self.tau**2

    def latent_hessian(self, x, theta):
        return np.eye(self.y.size) * (1.0 / self.noise**2 + 1.0 / self.tau**2)

    @property
    def true_log_normconst(self) -> float:
        n = self.y.size
        cov = (self.noise**2 + self.tau**2) * np.eye(n) + self.prior_sd**2 * self.design @ self.design.T
        return _log_mvn(self.y, cov)

    def config(self):
        return {
            "y": self.y.tolist(),
            "c": self.c.tolist(),
            "noise": self.noise,
            "tau": self.tau,
            "prior_sd": self.prior_sd,
        }


class MiniElgmModel(LogJointModel):
    """Survey prevalence with logit link and BYM2 (plus optional AR1 age) effects.

    The spatial effect uses the centred BYM2 form: the latent field holds
    the combined area effect ``b`` and its structured part ``u`` with

        b | u ~ N(sigma sqrt(phi) u, sigma^2 (1 - phi) I),   u ~ scaled ICAR,

    which is the same distribution as ``bym2_effect(v, u, sigma, phi)`` with
    ``v`` standard normal. The ICAR sum-to-zero constraint is soft (a
    Gaussian on the sum with sd 0.001 n). Hyperparameters are log standard
    deviations, logit BYM2 proportion and, for the ``age`` variant, a
    logit-transformed AR1 correlation mapped to (-1, 1).
    """

    INTERCEPT_SD = 5.0
    SIGMA_PRIOR_SD = 2.5  # must match _LOG_HALF_NORMAL_CONST
    BETA_A = BETA_B = 0.5

    def __init__(self, variant="base", data=None, adjacency=None):
        if variant not in ("base", "age"):
            raise ValueError(f"unknown mini_elgm variant {variant!r}")
        self.variant = variant
        self.data_path = str(data) if data else None
        self.adjacency_path = str(adjacency) if adjacency else None
        table = load_survey_csv(data or default_data_path())
        self.table = table
        n_areas = int(table.area_id.max()) + 1
        adj = Adjacency.read_csv(adjacency or default_adjacency_path(), n=n_areas)
        self.adjacency = adj
        self.n_areas = A = n_areas
        self.n_ages = int(table.age_group.max()) + 1 if variant == "age" else 0
        self.name = "mini_elgm" if variant == "base" else "mini_elgm_age"

        icar = precision_icar(adj, scale=True).matrix
        sd_sum = 0.001 * A
        self.Q_icar = icar + np.ones((A, A)) / sd_sum**2
        self._Q_icar_scaled = icar
        self._sum_precision = 1.0 / sd_sum**2
        self._icar_eigval, self._icar_eigvec = np.linalg.eigh(self.Q_icar)
        self._icar_logdet = float(np.linalg.slogdet(self.Q_icar)[1])

        names = ["beta0"]
        names += [f"b_x[{a}]" for a in range(A)]
        names += [f"u_x[{a}]" for a in range(A)]
        blocks = [("beta0", 0, 1), ("b_x", 1, 1 + A), ("u_x", 1 + A, 1 + 2 * A)]
        hyper = ["log_sigma_x", "logit_phi_x"]
        if variant == "age":
            start = 1 + 2 * A
            names += [f"u_age[{g}]" for g in range(self.n_ages)]
            blocks.append(("u_age", start, start + self.n_ages))
            hyper += ["log_sigma_a", "logit_phi_a"]
        self.space = ParameterSpace(tuple(names), tuple(hyper), tuple(blocks))

        rows = len(table)
        N = self.space.latent_dim
        D = np.zeros((rows, N))
        D[:, 0] = 1.0
        D[np.arange(rows), 1 + table.area_id] = 1.0
        if variant == "age":
            D[np.arange(rows), 1 + 2 * A + table.age_group] = 1.0
        self._design = D
        self._y = table.y
        self._m = table.m_eff
        self._lik_const = float(
            np.sum(gammaln(self._m + 1.0) - gammaln(self._y + 1.0) - gammaln(self._m - self._y + 1.0))
        )

    # -- hyperparameters ---------------------------------------------------------
    def _hyper(self, theta):
        t = [float(v) for v in theta]
        out = {"sigma_x": math.exp(t[0]), "phi_x": _expit(t[1])}
        if self.variant == "age":
            out["sigma_a"] = math.exp(t[2])
            out["phi_a"] = 2.0 * _expit(t[3]) - 1.0
        return out

    def _log_hyperprior(self, theta) -> float:
        theta = [float(t) for t in theta]

        def half_normal_log(t):
            # sigma = exp(t) ~ N+(0, 2.5); includes the log-Jacobian t
            sigma = math.exp(t)
            return _LOG_HALF_NORMAL_CONST - 0.5 * (sigma / self.SIGMA_PRIOR_SD) ** 2 + t

        def log_expit_pair(t):
            log_p = -math.log1p(math.exp(-t)) if t > -30 else t
            log_q = -math.log1p(math.exp(t)) if t < 30 else -t
            return log_p, log_q

        # phi = expit(t) ~ Beta(0.5, 0.5); log-Jacobian log phi(1-phi)
        log_p, log_q = log_expit_pair(theta[1])
        lp = half_normal_log(theta[0]) + self.BETA_A * log_p + self.BETA_B * log_q - _LOG_BETA_FN
        if self.variant == "age":
            # phi_a = 2 expit(t) - 1 ~ U(-1, 1): density 1/2 times Jacobian 2 expit(1-expit)
            log_p, log_q = log_expit_pair(theta[3])
            lp += half_normal_log(theta[2]) + log_p + log_q
        return float(lp)

    def _ar1_logdet(self, h) -> float:
        # det of the AR1 precision: (sigma^2)^-n (1 - phi^2)^-(n-1)
        n = self.n_ages
        return -2.0 * n * math.log(h["sigma_a"]) - (n - 1) * math.log1p(-h["phi_a"] ** 2)

    def _prior_precision(self, h):
        """Prior precision of the latent field and its log-determinant."""
        A = self.n_areas
        N = self.latent_dim
        c = h["sigma_x"] * math.sqrt(h["phi_x"])
        s2 = h["sigma_x"] ** 2 * (1.0 - h["phi_x"])
        Q = np.zeros((N, N))
        Q[0, 0] = 1.0 / self.INTERCEPT_SD**2
        b = slice(1, 1 + A)
        u = slice(1 + A, 1 + 2 * A)
        eye = np.eye(A)
        Q[b, b] = eye / s2
        Q[b, u] = Q[u, b] = -c / s2 * eye
        Q[u, u] = self.Q_icar + (c * c / s2) * eye
        logdet = -2.0 * math.log(self.INTERCEPT_SD) - A * math.log(s2) + self._icar_logdet
        if self.variant == "age":
            g = slice(1 + 2 * A, N)
            Q[g, g] = precision_ar1(self.n_ages, h["sigma_a"], h["phi_a"]).matrix
            logdet += self._ar1_logdet(h)
        return Q, logdet

    # -- density -----------------------------------------------------------------
    def _eta(self, x) -> np.ndarray:
        A = self.n_areas
        eta = x[0] + x[1 : 1 + A][self.table.area_id]
        if self.variant == "age":
            eta = eta + x[1 + 2 * A :][self.table.age_group]
        return eta

    def log_joint(self, x, theta):
        x = np.asarray(x, dtype=float)
        h = self._hyper(theta)
        eta = self._eta(x)
        # log p and log(1-p) without overflow
        log_p = -np.logaddexp(0.0, -eta)
        log_q = -np.logaddexp(0.0, eta)
        lik = self._lik_const + np.sum(self._y * log_p + (self._m - self._y) * log_q)
        A = self.n_areas
        b = x[1 : 1 + A]
        u = x[1 + A : 1 + 2 * A]
        c = h["sigma_x"] * math.sqrt(h["phi_x"])
        s2 = h["sigma_x"] ** 2 * (1.0 - h["phi_x"])
        r = b - c * u
        # the sum-to-zero term is added separately to limit cancellation error
        u_sum = float(np.sum(u))
        quad = (
            (x[0] / self.INTERCEPT_SD) ** 2
            + (r @ r) / s2
            + u @ self._Q_icar_scaled @ u
            + self._sum_precision * u_sum * u_sum
        )
        logdet = -2.0 * math.log(self.INTERCEPT_SD) - A * math.log(s2) + self._icar_logdet
        if self.variant == "age":
            a = x[1 + 2 * A :]
            phi = h["phi_a"]
            innov = a[1:] - phi * a[:-1]
            quad += ((1.0 - phi**2) * a[0] ** 2 + innov @ innov) / (h["sigma_a"] ** 2 * (1.0 - phi**2))
            logdet += self._ar1_logdet(h)
        prior = -0.5 * self.latent_dim * _LOG_2PI + 0.5 * logdet - 0.5 * quad
        return float(lik + prior + self._log_hyperprior(theta))

    def latent_gradient(self, x, theta):
        x = np.asarray(x, dtype=float)
        p = expit(self._design @ x)
        Q, _ = self._prior_precision(self._hyper(theta))
        return self._design.T @ (self._y - self._m * p) - Q @ x

    def latent_hessian(self, x, theta):
        x = np.asarray(x, dtype=float)
        p = expit(self._design @ x)
        Q, _ = self._prior_precision(self._hyper(theta))
        D = self._design
        H = (D * (self._m * p * (1.0 - p))[:, None]).T @ D + Q
        return 0.5 * (H + H.T)

    def _u_conditional(self, b, theta):
        """Eigen-coordinates of u | b, theta ~ N(A^-1 (c/s2) b, A^-1), A = Q_c + e^t I.

        The likelihood does not involve u, so this is also its posterior
        conditional; t = logit(phi) gives c^2/s2 = e^t.
        """
        h = self._hyper(theta)
        c = h["sigma_x"] * math.sqrt(h["phi_x"])
        s2 = h["sigma_x"] ** 2 * (1.0 - h["phi_x"])
        a = self._icar_eigval + c * c / s2
        mean = (self._icar_eigvec.T @ b) * (c / s2) / a
        return mean, a

    def sampler_coordinates(self, z, theta):
        # u = mu(b, theta) + A^{-1/2} w, which removes the funnel between
        # u and logit(phi) for the reference sampler
        z = np.asarray(z, dtype=float)
        A = self.n_areas
        x = z.copy()
        mean, a = self._u_conditional(z[1 : 1 + A], theta)
        x[1 + A : 1 + 2 * A] = self._icar_eigvec @ (mean + z[1 + A : 1 + 2 * A] / np.sqrt(a))
        return x, float(-0.5 * np.sum(np.log(a)))

    def sampler_inverse(self, x, theta):
        x = np.asarray(x, dtype=float)
        A = self.n_areas
        z = x.copy()
        mean, a = self._u_conditional(x[1 : 1 + A], theta)
        z[1 + A : 1 + 2 * A] = (self._icar_eigvec.T @ x[1 + A : 1 + 2 * A] - mean) * np.sqrt(a)
        return z

    def check_likelihood(self, x, theta) -> float:
        """Likelihood via ``xbin_log_density`` (slow reference path)."""
        p = expit(self._design @ np.asarray(x, dtype=float))
        return float(np.sum(xbin_log_density(self._y, self._m, p)))

    def output_map(self, x, theta):
        x = np.asarray(x, dtype=float)
        A = self.n_areas
        spatial = x[0] + x[1 : 1 + A]
        out = {}
        if self.variant == "base":
            rho = expit(spatial)
            for a in range(A):
                out[f"rho[{a}]"] = float(rho[a])
            return out
        rho = expit(spatial[:, None] + x[1 + 2 * A :][None, :])
        for a in range(A):
            for g in range(self.n_ages):
                out[f"rho[{a}_{g}]"] = float(rho[a, g])
        # area aggregates weighted by effective sample size per cell
        cell_w = np.zeros((A, self.n_ages))
        np.add.at(cell_w, (self.table.area_id, self.table.age_group), self._m)
        for a in range(A):
            if cell_w[a].sum() > 0:
                out[f"rho_area[{a}]"] = weighted_mean(rho[a], cell_w[a])
            else:
                out[f"rho_area[{a}]"] = float(rho[a].mean())
        return out

    def config(self):
        cfg = {"variant": self.variant}
        if self.data_path:
            cfg["data"] = self.data_path
        if self.adjacency_path:
            cfg["adjacency"] = self.adjacency_path
        return cfg


@register_model("fig2")
def _fig2(config):
    if config:
        raise ValueError("model 'fig2' takes no configuration")
    return Fig2Model()


@register_model("gauss_quadratic")
def _gauss_quadratic(config):
    return GaussQuadraticModel(**config)


@register_model("gauss_conjugate")
def _gauss_conjugate(config):
    return GaussConjugateModel(**config)


@register_model("gauss_linear")
def _gauss_linear(config):
    return GaussLinearModel(**config)


@register_model("mini_elgm")
def _mini_elgm(config):
    config = dict(config)
    config.setdefault("variant", "base")
    return MiniElgmModel(**config)


@register_model("mini_elgm_age")
def _mini_elgm_age(config):
    config = dict(config)
    config.setdefault("variant", "age")
    return MiniElgmModel(**config)
