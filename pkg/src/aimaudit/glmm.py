"""Random-intercept binary regression with probit (or logit) link.

The marginal likelihood integrates the county intercept out of

    y_ij ~ Bernoulli(link(x_ij' beta + u_j)),   u_j ~ Normal(0, sigma^2)

by adaptive Gauss-Hermite quadrature: each county's integrand is
re-centered at its posterior mode and re-scaled by the curvature there
(one node = the Laplace approximation).  The gradient is the exact
derivative of the quadrature approximation, including the dependence of
the node placement on the parameters, so finite differences of the
objective reproduce it to machine precision.

Standard errors come from the inverse observed information at the
optimum; county BLUPs are the posterior modes given the estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import minimize
from scipy.special import expit, log_ndtr, logsumexp, ndtr
from sklearn.base import BaseEstimator

from ._validation import as_binary_labels, check_fitted

_LOG_2PI = math.log(2.0 * math.pi)
_SIGMA_BOUNDARY = 1e-4
_GAMMA_BOUNDS = (math.log(1e-6), math.log(100.0))


def _link_derivs(m: np.ndarray, link: str, order: int = 3):
    """log p and its first `order` derivatives w.r.t. the signed predictor.

    For y in {0,1} and q = 2y - 1, the per-row log-likelihood is
    c(eta) = log link(q * eta) evaluated at m = q * eta; derivatives in
    eta follow by the chain rule with q^2 = 1.
    """
    if link == "probit":
        lp = log_ndtr(m)
        r = np.exp(-0.5 * m * m - 0.5 * _LOG_2PI - lp)
        d1 = r
        d2 = -r * (m + r)
        d3 = -d2 * (m + r) - r * (1.0 + d2) if order >= 3 else None
    elif link == "logit":
        s = expit(m)
        lp = -np.logaddexp(0.0, -m)
        d1 = 1.0 - s
        d2 = -s * (1.0 - s)
        d3 = s * (1.0 - s) * (2.0 * s - 1.0) if order >= 3 else None
    else:
        raise ValueError(f"unknown link {link!r}")
    return lp, d1, d2, d3


def _inverse_link(z: np.ndarray, link: str) -> np.ndarray:
    return ndtr(z) if link == "probit" else expit(z)


class _Marginal:
    """Marginal log-likelihood machinery for one design (X, y, groups)."""

    def __init__(self, X, y, group_ids, n_groups, link, n_quadrature):
        self.X = np.asarray(X, dtype=float)
        self.y = as_binary_labels(y)
        self.q = 2.0 * self.y - 1.0
        self.gid = np.asarray(group_ids, dtype=np.int64)
        self.J = n_groups
        self.link = link
        nodes, weights = hermgauss(n_quadrature)
        self.nodes = nodes
        self.log_omega = np.log(weights) + nodes**2  # log(w_k) + t_k^2
        self.K = n_quadrature

    # -- helpers -------------------------------------------------------------

    def _gsum(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.gid, weights=values, minlength=self.J)

    def modes(self, beta: np.ndarray, sigma: float, tol: float = 1e-12) -> np.ndarray:
        """Posterior mode of u_j per group (Newton, vectorized over groups)."""
        eta0 = self.X @ beta
        u = np.zeros(self.J)
        inv_var = 1.0 / (sigma * sigma)
        for _ in range(200):
            m = self.q * (eta0 + u[self.gid])
            _, d1, d2, _ = _link_derivs(m, self.link, order=2)
            hprime = self._gsum(self.q * d1) - u * inv_var
            hsec = self._gsum(d2) - inv_var
            delta = hprime / hsec
            # concave 1-d problems: clipped Newton converges globally
            delta = np.clip(delta, -5.0, 5.0)
            u = u - delta
            if np.max(np.abs(delta)) < tol:
                break
        return u

    # -- sigma = 0: plain pooled GLM ------------------------------------------

    def pooled_nll_grad(self, beta: np.ndarray):
        m = self.q * (self.X @ beta)
        lp, d1, _, _ = _link_derivs(m, self.link, order=1)
        nll = -float(np.sum(lp))
        grad = -(self.X.T @ (self.q * d1))
        return nll, grad

    # -- adaptive quadrature ---------------------------------------------------

    def nll_grad(self, beta: np.ndarray, gamma: float, want_grad: bool = True):
        """Negative marginal loglik and its gradient in (beta, gamma).

        gamma = log(sigma).  Differentiates through the adaptive node
        placement (mode and curvature) exactly.
        """
        sigma = math.exp(gamma)
        inv_var = 1.0 / (sigma * sigma)
        eta0 = self.X @ beta
        u_hat = self.modes(beta, sigma)

        m0 = self.q * (eta0 + u_hat[self.gid])
        _, d1_0, d2_0, d3_0 = _link_derivs(m0, self.link, order=3)
        V = inv_var - self._gsum(d2_0)  # -h''(u_hat) > 0
        tau = 1.0 / np.sqrt(V)

        # nodes: (J, K)
        U = u_hat[:, None] + math.sqrt(2.0) * tau[:, None] * self.nodes[None, :]
        H = np.empty((self.J, self.K))
        G1 = np.empty((self.J, self.K)) if want_grad else None
        rows_eta = np.empty((self.X.shape[0], self.K)) if want_grad else None
        for k in range(self.K):
            mk = self.q * (eta0 + U[self.gid, k])
            lp, d1, _, _ = _link_derivs(mk, self.link, order=1)
            H[:, k] = self._gsum(lp)
            if want_grad:
                g1 = self.q * d1
                rows_eta[:, k] = g1
                G1[:, k] = self._gsum(g1)
        H -= U * U * (0.5 * inv_var)
        H -= gamma + 0.5 * _LOG_2PI

        A_log = self.log_omega[None, :] + H
        lse = logsumexp(A_log, axis=1)
        loglik = float(np.sum(0.5 * math.log(2.0) + np.log(tau) + lse))
        if not want_grad:
            return -loglik, None

        P = np.exp(A_log - lse[:, None])  # node weights, rows sum to 1
        hprime_nodes = G1 - U * inv_var  # h'(u_jk)

        A = np.sum(P * hprime_nodes, axis=1)  # dl/d(u_hat) per group
        B = 1.0 / tau + math.sqrt(2.0) * np.sum(
            P * hprime_nodes * self.nodes[None, :], axis=1
        )  # dl/d(tau) per group

        G3 = self._gsum(self.q * d3_0)  # h'''(u_hat)
        half_Vm32 = 0.5 * V ** (-1.5)

        # dl/d(beta): every group-level p-vector is a weighted row sum, so
        # fold all coefficients into one per-row vector and hit X once.
        row_coef = np.sum(P[self.gid, :] * rows_eta, axis=1)  # direct part
        coef_mode = A / V + (B * half_Vm32) * (G3 / V)  # multiplies d2 rows
        coef_tau = B * half_Vm32  # multiplies d3 rows
        row_coef = row_coef + coef_mode[self.gid] * d2_0 + coef_tau[self.gid] * (self.q * d3_0)
        grad_beta = self.X.T @ row_coef

        # dl/d(gamma)
        direct_gamma = np.sum(P * (U * U * inv_var - 1.0), axis=1)
        du_dgamma = 2.0 * u_hat * inv_var / V
        dtau_dgamma = half_Vm32 * (2.0 * inv_var + G3 * du_dgamma)
        grad_gamma = float(np.sum(direct_gamma + A * du_dgamma + B * dtau_dgamma))

        return -loglik, -np.concatenate([grad_beta, [grad_gamma]])

    def nll_grad_fixed_sigma(self, beta: np.ndarray, sigma: float):
        """Objective/gradient over beta only, sigma held fixed (> 0)."""
        gamma = math.log(sigma)
        nll, grad = self.nll_grad(beta, gamma, want_grad=True)
        return nll, grad[:-1]


@dataclass(frozen=True)
class FixedEffect:
    name: str
    estimate: float
    std_error: float
    z_value: float
    p_value: float


class RandomInterceptProbit(BaseEstimator):
    """Binary GLMM with a single random intercept per group.

    Parameters
    ----------
    n_quadrature : int
        Adaptive Gauss-Hermite nodes; 1 = Laplace approximation.
    tol : float
        Gradient inf-norm convergence tolerance.
    max_iter : int
        Optimizer iteration cap.
    link : str
        "probit" (default) or "logit".
    sigma_fixed : float or None
        Hold the random-intercept standard deviation fixed (0 collapses
        to a pooled plain GLM); None estimates it.
    seed : int
        Seeds the randomized starting point.
    init_scale : float
        Spread of the randomized start (0 = deterministic zero start).
    """

    def __init__(
        self,
        n_quadrature: int = 15,
        tol: float = 1e-6,
        max_iter: int = 200,
        link: str = "probit",
        sigma_fixed=None,
        seed: int = 0,
        init_scale: float = 0.0,
    ):
        self.n_quadrature = n_quadrature
        self.tol = tol
        self.max_iter = max_iter
        self.link = link
        self.sigma_fixed = sigma_fixed
        self.seed = seed
        self.init_scale = init_scale

    def _make_marginal(self, X, y, groups):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-d")
        groups = list(groups)
        if len(groups) != X.shape[0]:
            raise ValueError("groups and X have different lengths")
        names = sorted(set(groups))
        if self.sigma_fixed is None and len(names) < 2:
            raise ValueError("need at least 2 groups to estimate a random intercept")
        index = {name: i for i, name in enumerate(names)}
        gid = np.array([index[g] for g in groups], dtype=np.int64)
        return _Marginal(X, y, gid, len(names), self.link, self.n_quadrature), names

    def fit(self, X, y, groups):
        marginal, names = self._make_marginal(X, y, groups)
        p = marginal.X.shape[1]
        rng = np.random.default_rng(self.seed)
        beta0 = rng.normal(0.0, self.init_scale, size=p) if self.init_scale > 0 else np.zeros(p)

        bounds = None
        if self.sigma_fixed is not None and float(self.sigma_fixed) == 0.0:
            fun = lambda th: marginal.pooled_nll_grad(th)
            theta0 = beta0
        elif self.sigma_fixed is not None:
            fun = lambda th: marginal.nll_grad_fixed_sigma(th, float(self.sigma_fixed))
            theta0 = beta0
        else:
            fun = lambda th: marginal.nll_grad(th[:-1], th[-1])
            gamma0 = math.log(0.3)
            if self.init_scale > 0:
                gamma0 += rng.normal(0.0, self.init_scale)
            gamma0 = min(max(gamma0, _GAMMA_BOUNDS[0] + 1.0), _GAMMA_BOUNDS[1] - 1.0)
            theta0 = np.concatenate([beta0, [gamma0]])
            # gamma bounded so line searches cannot wander into overflow;
            # the lower bound realizes the sigma -> 0 boundary
            bounds = [(None, None)] * p + [_GAMMA_BOUNDS]

        def projected_grad_norm(theta, grad):
            projected = np.asarray(grad, dtype=float).copy()
            if bounds is not None:
                for i, (low, high) in enumerate(bounds):
                    if low is not None and theta[i] <= low and projected[i] > 0:
                        projected[i] = 0.0
                    if high is not None and theta[i] >= high and projected[i] < 0:
                        projected[i] = 0.0
            return float(np.max(np.abs(projected)))

        theta = theta0
        result = None
        # restarts reset the L-BFGS memory, which polishes the last digits
        # when a line search aborts right next to the optimum
        for _ in range(2):
            result = minimize(
                fun,
                theta,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"gtol": self.tol, "ftol": 1e-15, "maxiter": self.max_iter},
            )
            theta = result.x
            if projected_grad_norm(theta, result.jac) < self.tol:
                break
        message = result.message
        nll, grad = fun(theta)
        grad_norm = projected_grad_norm(theta, grad)
        if grad_norm >= self.tol:
            # Newton polish: L-BFGS-B can stall on flat, ill-conditioned
            # valleys where the per-step objective change drops below
            # double-precision resolution; a curvature step does not
            theta, nll, grad = self._newton_polish(fun, theta, nll, grad, bounds)
            grad_norm = projected_grad_norm(theta, grad)
        self.converged_ = bool(grad_norm < self.tol)
        self.optimizer_message_ = message
        self.gradient_norm_ = grad_norm
        result_fun = nll

        if self.sigma_fixed is not None:
            beta = theta
            sigma = float(self.sigma_fixed)
            self.boundary_ = sigma == 0.0
        else:
            beta = theta[:-1]
            sigma = math.exp(theta[-1])
            self.boundary_ = sigma < _SIGMA_BOUNDARY
            if self.boundary_:
                sigma = 0.0

        self.coef_ = beta
        self.sigma_ = sigma
        self.sigma2_ = sigma * sigma
        self.loglik_ = -float(result_fun)
        self.n_obs_ = marginal.X.shape[0]
        self.group_names_ = tuple(names)
        self.run_seed_ = self.seed

        # information-based standard errors (numerical Hessian of the
        # analytic gradient, central differences)
        hess = self._numerical_hessian(fun, theta)
        p_beta = beta.shape[0]
        try:
            cov = np.linalg.inv(hess)
            cov_beta = cov[:p_beta, :p_beta]
            if np.any(np.diag(cov_beta) <= 0):
                raise np.linalg.LinAlgError("non-positive variance")
        except np.linalg.LinAlgError:
            cov_beta = np.linalg.pinv(hess)[:p_beta, :p_beta]
        self.se_ = np.sqrt(np.abs(np.diag(cov_beta)))
        with np.errstate(divide="ignore", invalid="ignore"):
            self.z_ = np.where(self.se_ > 0, beta / self.se_, np.inf * np.sign(beta))
        self.p_values_ = 2.0 * (1.0 - ndtr(np.abs(self.z_)))

        if sigma > 0:
            modes = marginal.modes(beta, sigma)
        else:
            modes = np.zeros(len(names))
        self.blups_ = {name: float(modes[i]) for i, name in enumerate(names)}
        return self

    def _newton_polish(self, fun, theta, nll, grad, bounds, max_steps: int = 8):
        """Damped Newton steps from the numerical Hessian of the gradient."""
        for _ in range(max_steps):
            hess = self._numerical_hessian(fun, theta)
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                break
            improved = False
            alpha = 1.0
            for _ in range(20):
                candidate = theta - alpha * step
                if bounds is not None:
                    for i, (low, high) in enumerate(bounds):
                        if low is not None:
                            candidate[i] = max(candidate[i], low)
                        if high is not None:
                            candidate[i] = min(candidate[i], high)
                cand_nll, cand_grad = fun(candidate)
                if np.isfinite(cand_nll) and cand_nll <= nll + 1e-12 * (1 + abs(nll)):
                    theta, nll, grad = candidate, cand_nll, cand_grad
                    improved = True
                    break
                alpha *= 0.5
            if not improved or float(np.max(np.abs(grad))) < self.tol * 0.01:
                break
        return theta, nll, grad

    @staticmethod
    def _numerical_hessian(fun, theta, rel_step: float = 1e-5) -> np.ndarray:
        n = theta.shape[0]
        hess = np.empty((n, n))
        for i in range(n):
            h = rel_step * max(1.0, abs(theta[i]))
            plus = np.array(theta)
            minus = np.array(theta)
            plus[i] += h
            minus[i] -= h
            _, g_plus = fun(plus)
            _, g_minus = fun(minus)
            hess[i] = (g_plus - g_minus) / (2.0 * h)
        return 0.5 * (hess + hess.T)

    # -- derived quantities ----------------------------------------------------

    @property
    def n_params_(self) -> int:
        check_fitted(self, "coef_")
        return self.coef_.shape[0] + 1  # fixed effects + sigma

    @property
    def aic_(self) -> float:
        return -2.0 * self.loglik_ + 2.0 * self.n_params_

    @property
    def bic_(self) -> float:
        return -2.0 * self.loglik_ + self.n_params_ * math.log(self.n_obs_)

    def fixed_effects(self, columns) -> list:
        check_fitted(self, "coef_")
        if len(columns) != self.coef_.shape[0]:
            raise ValueError("column names do not match coefficient count")
        return [
            FixedEffect(
                name=name,
                estimate=float(self.coef_[i]),
                std_error=float(self.se_[i]),
                z_value=float(self.z_[i]),
                p_value=float(self.p_values_[i]),
            )
            for i, name in enumerate(columns)
        ]


@dataclass(frozen=True)
class RunRecord:
    seed: int
    loglik: float
    aic: float
    bic: float
    converged: bool


def multi_start_select(
    X,
    y,
    groups,
    n_runs: int,
    n_quadrature: int = 15,
    tol: float = 1e-6,
    max_iter: int = 200,
    link: str = "probit",
    seed: int = 0,
    init_scale: float = 0.5,
):
    """Fit from `n_runs` seeded starting points and keep the best model.

    Selection: lowest AIC among converged runs, BIC as tiebreak, then
    seed order.  Returns (best_fit, run_records).  Every run failing to
    converge is an error carrying per-run diagnostics.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    fits = []
    records = []
    for run in range(n_runs):
        run_seed = seed + run
        model = RandomInterceptProbit(
            n_quadrature=n_quadrature,
            tol=tol,
            max_iter=max_iter,
            link=link,
            seed=run_seed,
            init_scale=init_scale if run > 0 else 0.0,
        )
        model.fit(X, y, groups)
        fits.append(model)
        records.append(
            RunRecord(
                seed=run_seed,
                loglik=model.loglik_,
                aic=model.aic_,
                bic=model.bic_,
                converged=model.converged_,
            )
        )
    converged = [(i, rec) for i, rec in enumerate(records) if rec.converged]
    if not converged:
        details = "; ".join(
            f"seed {rec.seed}: loglik {rec.loglik:.4f}, converged {rec.converged}"
            for rec in records
        )
        raise RuntimeError(f"no run converged ({details})")
    best_index = min(converged, key=lambda pair: (pair[1].aic, pair[1].bic, pair[0]))[0]
    return fits[best_index], records


def report_anomalies(blups: dict, clusters: dict):
    """Pair county BLUPs with their LISA cluster for anomalous counties.

    Only counties in one of the four cluster quadrants are reported.
    Every county carrying a BLUP must be present in the cluster map;
    significant counties missing from the fit are returned separately.
    """
    anomaly_clusters = {"High-High", "Low-Low", "Low-High", "High-Low"}
    unknown = sorted(set(blups) - set(clusters))
    if unknown:
        raise ValueError(f"county universe mismatch: no cluster for {unknown[:5]}")
    rows = []
    missing = []
    for county, cluster in clusters.items():
        value = getattr(cluster, "value", cluster)
        if value not in anomaly_clusters:
            continue
        if county in blups:
            rows.append((county, blups[county], value))
        else:
            missing.append(county)
    rows.sort(key=lambda item: item[0])
    return rows, sorted(missing)
