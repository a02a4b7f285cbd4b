"""Bayesian linear regression with Gaussian covariates and clamped cross-product summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ..mechanisms import (
    NoiseFamily,
    NoiseSpec,
    regression_record_statistics,
    regression_sensitivity,
    regression_summary_dim,
)
from .base import Model, NumericBreakdown


def _chol(a, what):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NumericBreakdown(f"{what} is not positive definite") from None


@dataclass
class RegressionParams:
    beta: np.ndarray
    tau: float
    mu: np.ndarray
    Phi: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.Phi = np.asarray(self.Phi, dtype=float)
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def copy(self):
        return RegressionParams(self.beta.copy(), self.tau, self.mu.copy(), self.Phi.copy())


@dataclass
class RegressionHyper:
    """Prior hyperparameters: ``beta|tau ~ N(m, (tau V)^-1)``, ``tau ~ Gamma(a/2, b/2)``,
    ``mu ~ N(theta0, Sigma)``, ``Phi ~ Wishart(d, W)``; clamping bounds ``[L, U]``."""

    p: int = 2
    m: np.ndarray = None
    V: np.ndarray = None
    a: float = 2.0
    b: float = 2.0
    theta0: np.ndarray = None
    Sigma: np.ndarray = None
    d: float = 2.0
    W: np.ndarray = None
    L: float = -5.0
    U: float = 5.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        p = self.p
        self.m = np.zeros(p + 1) if self.m is None else np.asarray(self.m, dtype=float)
        self.V = np.eye(p + 1) if self.V is None else np.asarray(self.V, dtype=float)
        self.theta0 = np.zeros(p) if self.theta0 is None else np.asarray(self.theta0, dtype=float)
        self.Sigma = np.eye(p) if self.Sigma is None else np.asarray(self.Sigma, dtype=float)
        self.W = np.eye(p) if self.W is None else np.asarray(self.W, dtype=float)
        if not self.L < self.U:
            raise ValueError("need L < U")
        if not (self.a > 0 and self.b > 0 and self.d > p - 1):
            raise ValueError("invalid Gamma/Wishart hyperparameters")
        for name in ("V", "Sigma", "W"):
            _chol(getattr(self, name), name)
        self._cache["Sigma_inv"] = np.linalg.inv(self.Sigma)
        self._cache["W_inv"] = np.linalg.inv(self.W)
        self._cache["Vm"] = self.V @ self.m
        self._cache["mVm"] = float(self.m @ self.V @ self.m)

    def to_dict(self):
        return {
            "p": self.p, "m": self.m.tolist(), "V": self.V.tolist(), "a": self.a,
            "b": self.b, "theta0": self.theta0.tolist(), "Sigma": self.Sigma.tolist(),
            "d": self.d, "W": self.W.tolist(), "L": self.L, "U": self.U,
        }


def sample_wishart(df, scale_chol, rng):
    """Bartlett-decomposition draw from ``Wishart(df, S)`` with ``S = C C^T``."""
    p = scale_chol.shape[0]
    A = np.zeros((p, p))
    for i in range(p):
        A[i, i] = math.sqrt(rng.chisquare(df - i))
        A[i, :i] = rng.standard_normal(i)
    LA = scale_chol @ A
    return LA @ LA.T


class RegressionModel(Model):
    """Records are rows ``(x_1, ..., x_p, y)``; the summary holds the unique
    cells of the clamped, normalised cross products (count cell excluded)."""

    name = "regression"

    def __init__(self, hyper: RegressionHyper | None = None, epsilon_s: float = 1.0):
        hyper = hyper or RegressionHyper()
        p = hyper.p
        delta = regression_sensitivity(p)
        super().__init__(NoiseSpec.from_epsilon(NoiseFamily.CONTINUOUS_LAPLACE, epsilon_s, delta))
        self.hyper = hyper
        self.p = p
        self.summary_dim = regression_summary_dim(p)
        self.record_dim = p + 1
        iu = np.triu_indices(p)
        self._iu = iu
        self._il = np.tril_indices(p)
        self.theta_labels = tuple(
            [f"beta{j}" for j in range(p + 1)]
            + ["tau"]
            + [f"mu{j + 1}" for j in range(p)]
            + [f"Phi{i + 1}{j + 1}" for i, j in zip(*iu)]
        )

    # -- prior / data ------------------------------------------------------
    def sample_prior(self, rng):
        h = self.hyper
        p = self.p
        tau = rng.gamma(h.a / 2.0, 2.0 / h.b)
        Lv = _chol(h.V, "V")
        beta = h.m + solve_triangular(Lv.T, rng.standard_normal(p + 1), lower=False) / math.sqrt(tau)
        mu = h.theta0 + _chol(h.Sigma, "Sigma") @ rng.standard_normal(p)
        Phi = sample_wishart(h.d, _chol(h.W, "W"), rng)
        return RegressionParams(beta, tau, mu, Phi)

    def prior_mean(self):
        h = self.hyper
        return RegressionParams(h.m.copy(), h.a / h.b, h.theta0.copy(), h.d * h.W)

    def sample_data(self, theta: RegressionParams, size, rng):
        p = self.p
        z = rng.standard_normal((size, p + 1))
        Lphi = _chol(theta.Phi, "Phi")
        X = theta.mu + solve_triangular(Lphi.T, z[:, :p].T, lower=False).T
        y = theta.beta[0] + X @ theta.beta[1:] + z[:, p] / math.sqrt(theta.tau)
        return np.column_stack([X, y])

    def log_datum_density(self, x, theta: RegressionParams):
        x = np.atleast_2d(x)
        p = self.p
        X, y = x[:, :p], x[:, p]
        Lphi = _chol(theta.Phi, "Phi")
        dev = (X - theta.mu) @ Lphi
        lx = np.sum(np.log(np.diag(Lphi))) - 0.5 * np.sum(dev * dev, axis=1)
        r = y - theta.beta[0] - X @ theta.beta[1:]
        ly = 0.5 * math.log(theta.tau) - 0.5 * theta.tau * r * r
        return lx + ly - 0.5 * (p + 1) * math.log(2 * math.pi)

    # -- summaries -------------------------------------------------------
    def record_statistics(self, x, s=None):
        x = np.atleast_2d(x)
        return regression_record_statistics(x[:, : self.p], x[:, self.p], self.hyper.L, self.hyper.U)

    # -- sufficient statistics -------------------------------------------
    def sufficient_stats(self, x):
        """Flattened ``(A^T A, A^T y, y^T y)`` with ``A = [1, X]``."""
        x = np.atleast_2d(x)
        p = self.p
        A = np.empty((x.shape[0], p + 1))
        A[:, 0] = 1.0
        A[:, 1:] = x[:, :p]
        y = x[:, p]
        return np.concatenate([(A.T @ A).ravel(), A.T @ y, [y @ y]])

    def _unpack(self, stats):
        q = self.p + 1
        AtA = stats[: q * q].reshape(q, q)
        Aty = stats[q * q: q * q + q]
        yty = stats[q * q + q]
        return AtA, Aty, yty

    def _xstats(self, AtA):
        n = AtA[0, 0]
        sx = AtA[0, 1:]
        sxx = AtA[1:, 1:]
        return n, sx, sxx

    def update_theta(self, theta: RegressionParams, x, rng):
        """Blocked conditional draws: ``mu | Phi``, ``Phi | mu``, then ``(beta, tau)`` jointly."""
        return self.update_theta_from_stats(theta, self.sufficient_stats(x) if len(x) else None, rng)

    def update_theta_from_stats(self, theta, stats, rng):
        h = self.hyper
        p = self.p
        if stats is None:
            stats = np.zeros((p + 1) ** 2 + p + 2)
        AtA, Aty, yty = self._unpack(stats)
        n, sx, sxx = self._xstats(AtA)
        Sinv = h._cache["Sigma_inv"]
        # mu | Phi, x
        P = Sinv + n * theta.Phi
        Lp = _chol(P, "mu precision")
        mean = cho_solve((Lp, True), Sinv @ h.theta0 + theta.Phi @ sx)
        mu = mean + solve_triangular(Lp.T, rng.standard_normal(p), lower=False)
        # Phi | mu, x
        S = sxx - np.outer(mu, sx) - np.outer(sx, mu) + n * np.outer(mu, mu)
        scale = np.linalg.inv(h._cache["W_inv"] + S)
        Phi = sample_wishart(h.d + n, _chol(0.5 * (scale + scale.T), "Wishart scale"), rng)
        # (beta, tau) | x, y
        Vn = h.V + AtA
        Lv = _chol(Vn, "beta precision")
        mn = cho_solve((Lv, True), h._cache["Vm"] + Aty)
        an = h.a + n
        bn = h.b + yty + h._cache["mVm"] - mn @ Vn @ mn
        if not bn > 0:
            raise NumericBreakdown(f"non-positive posterior rate {bn}")
        tau = rng.gamma(an / 2.0, 2.0 / bn)
        beta = mn + solve_triangular(Lv.T, rng.standard_normal(p + 1), lower=False) / math.sqrt(tau)
        return RegressionParams(beta, float(tau), mu, Phi)

    def posterior_beta_mean(self, stats):
        """Analytic marginal posterior mean of ``beta`` given complete data."""
        h = self.hyper
        AtA, Aty, _ = self._unpack(stats)
        return np.linalg.solve(h.V + AtA, h._cache["Vm"] + Aty)

    # -- parameters ------------------------------------------------------
    def flatten_theta(self, theta: RegressionParams):
        return np.concatenate([theta.beta, [theta.tau], theta.mu, theta.Phi[self._iu]])

    def unflatten_theta(self, v):
        p = self.p
        v = np.asarray(v, dtype=float)
        Phi = np.zeros((p, p))
        Phi[self._iu] = v[2 * p + 2:]
        Phi = Phi + np.triu(Phi, 1).T
        return RegressionParams(v[: p + 1], float(v[p + 1]), v[p + 2: 2 * p + 2], Phi)

    # -- MCEM ------------------------------------------------------------
    def closed_form_mstep(self, stats, n_total=None):
        """Complete-data MLE: OLS for ``beta``, ``N/RSS`` for ``tau``, Gaussian MLE for ``(mu, Phi)``."""
        AtA, Aty, yty = self._unpack(stats)
        n, sx, sxx = self._xstats(AtA)
        try:
            beta = np.linalg.solve(AtA, Aty)
        except np.linalg.LinAlgError:
            raise NumericBreakdown("singular pooled design") from None
        rss = yty - beta @ Aty
        if not rss > 0:
            raise NumericBreakdown("non-positive residual sum of squares")
        mu = sx / n
        cov = sxx / n - np.outer(mu, mu)
        _chol(cov, "pooled covariate covariance")
        return RegressionParams(beta, float(n / rss), mu, np.linalg.inv(cov))

    def complete_loglik(self, theta, stats, n_total=None):
        AtA, Aty, yty = self._unpack(stats)
        n, sx, sxx = self._xstats(AtA)
        mu, Phi, beta, tau = theta.mu, theta.Phi, theta.beta, theta.tau
        S = sxx - np.outer(mu, sx) - np.outer(sx, mu) + n * np.outer(mu, mu)
        _, logdet = np.linalg.slogdet(Phi)
        rss = yty - 2 * beta @ Aty + beta @ AtA @ beta
        return 0.5 * n * logdet - 0.5 * np.sum(Phi * S) + 0.5 * n * math.log(tau) - 0.5 * tau * rss

    def to_unconstrained(self, theta):
        Lphi = _chol(theta.Phi, "Phi")
        low = Lphi[self._il].copy()
        diag = self._il[0] == self._il[1]
        low[diag] = np.log(low[diag])
        return np.concatenate([theta.beta, [math.log(theta.tau)], theta.mu, low])

    def from_unconstrained(self, u):
        p = self.p
        u = np.asarray(u, dtype=float)
        low = u[2 * p + 2:].copy()
        diag = self._il[0] == self._il[1]
        low[diag] = np.exp(low[diag])
        Lphi = np.zeros((p, p))
        Lphi[self._il] = low
        return RegressionParams(u[: p + 1].copy(), float(math.exp(u[p + 1])), u[p + 2: 2 * p + 2].copy(), Lphi @ Lphi.T)

    def _grad_phi_block(self, G, theta):
        # d/dL of tr(G Phi) with Phi = L L^T, log-diagonal parameterisation
        Lphi = _chol(theta.Phi, "Phi")
        dL = 2.0 * G @ Lphi
        out = dL[self._il].copy()
        diag = self._il[0] == self._il[1]
        out[diag] *= Lphi[self._il][diag]
        return out

    def grad_log_datum_density(self, x, theta):
        x = np.atleast_2d(x)
        p = self.p
        X, y = x[:, :p], x[:, p]
        A = np.column_stack([np.ones(len(x)), X])
        r = y - A @ theta.beta
        g_beta = theta.tau * r[:, None] * A
        g_ltau = 0.5 - 0.5 * theta.tau * r * r
        dev = X - theta.mu
        g_mu = dev @ theta.Phi
        Phi_inv = np.linalg.inv(theta.Phi)
        g_phi = np.array([
            self._grad_phi_block(0.5 * (Phi_inv - np.outer(dv, dv)), theta) for dv in dev
        ])
        return np.column_stack([g_beta, g_ltau, g_mu, g_phi])

    def grad_from_stats(self, theta, stats, n_total=None):
        AtA, Aty, yty = self._unpack(stats)
        n, sx, sxx = self._xstats(AtA)
        beta, tau, mu, Phi = theta.beta, theta.tau, theta.mu, theta.Phi
        g_beta = tau * (Aty - AtA @ beta)
        rss = yty - 2 * beta @ Aty + beta @ AtA @ beta
        g_ltau = 0.5 * n - 0.5 * tau * rss
        g_mu = Phi @ (sx - n * mu)
        S = sxx - np.outer(mu, sx) - np.outer(sx, mu) + n * np.outer(mu, mu)
        g_phi = self._grad_phi_block(0.5 * (n * np.linalg.inv(Phi) - S), theta)
        return np.concatenate([g_beta, [g_ltau], g_mu, g_phi])

    def initial_theta(self, s, n_hat, rng=None):
        """Moment estimate from the noisy summary with ``n`` plugged in; prior mean on failure."""
        h = self.hyper
        p = self.p
        n_hat = max(float(n_hat), p + 2.0)
        s = np.asarray(s, dtype=float)
        c = 0.5 * (h.L + h.U)
        half = 0.5 * (h.U - h.L)
        sx = s[:p]
        sxx_d = s[p: 2 * p]
        k = 2 * p
        sxx = np.diag(sxx_d)
        for i in range(p):
            for j in range(i + 1, p):
                sxx[i, j] = sxx[j, i] = s[k]
                k += 1
        sxy = s[k: k + p]
        sy, syy = s[k + p], s[k + p + 1]
        AtA = np.empty((p + 1, p + 1))
        AtA[0, 0] = n_hat
        AtA[0, 1:] = AtA[1:, 0] = sx
        AtA[1:, 1:] = sxx
        Aty = np.concatenate([[sy], sxy])
        # eigenvalue floor keeps the noisy Gram matrix usable
        w, v = np.linalg.eigh(AtA)
        AtA = (v * np.maximum(w, 0.05 * n_hat / (p + 1))) @ v.T
        try:
            bt = np.linalg.solve(AtA, Aty)
            beta = np.concatenate([[c + half * bt[0] - c * bt[1:].sum()], bt[1:]])
            rss = max(syy - bt @ Aty, 0.01 * n_hat)
            tau = n_hat / (rss * half * half)
            mu_t = sx / n_hat
            cov_t = sxx / n_hat - np.outer(mu_t, mu_t)
            wc, vc = np.linalg.eigh(cov_t)
            cov = (vc * np.maximum(wc, 1e-3)) @ vc.T * half * half
            theta = RegressionParams(beta, float(np.clip(tau, 1e-3, 1e3)), c + half * mu_t, np.linalg.inv(cov))
            _chol(theta.Phi, "Phi")
            if not np.all(np.isfinite(self.flatten_theta(theta))):
                raise NumericBreakdown("non-finite moment estimate")
            return theta
        except (np.linalg.LinAlgError, NumericBreakdown):
            return self.prior_mean()
