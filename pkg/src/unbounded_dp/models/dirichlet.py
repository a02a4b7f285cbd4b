"""Dirichlet model for 3-part compositions released through floored log sums."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from ..mechanisms import NoiseFamily, NoiseSpec, dirichlet_record_statistics
from .base import Model

_TINY = np.finfo(float).tiny


@dataclass
class DirichletParams:
    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.shape != (3,) or not np.all(self.alpha > 0):
            raise ValueError("alpha must be three positive numbers")


class DirichletModel(Model):
    """``x_i ~ Dirichlet(alpha)``, ``alpha_j ~ Gamma(shape, rate)`` iid.

    The summary is ``sum_i log [x_i]_floor^1`` plus Laplace noise with scale
    ``-3 log(floor) / epsilon_s``. ``alpha`` is updated by a componentwise
    random-walk Metropolis kernel on ``log alpha`` with step ``step``.
    """

    name = "dirichlet"
    summary_dim = 3
    record_dim = 3
    exact_theta_update = False
    theta_labels = ("alpha1", "alpha2", "alpha3")

    def __init__(self, epsilon_s=1.0, floor=0.0006, prior_shape=1.0, prior_rate=0.1, step=0.15):
        if not 0.0 < floor < 1.0:
            raise ValueError("floor must lie in (0, 1)")
        if step < 0:
            raise ValueError("step must be non-negative")
        sens = -3.0 * math.log(floor)
        super().__init__(NoiseSpec.from_epsilon(NoiseFamily.CONTINUOUS_LAPLACE, epsilon_s, sens))
        self.floor = float(floor)
        self.prior_shape = float(prior_shape)
        self.prior_rate = float(prior_rate)
        self.step = float(step)

    def sample_prior(self, rng):
        return DirichletParams(rng.gamma(self.prior_shape, 1.0 / self.prior_rate, 3))

    def prior_mean(self):
        return DirichletParams(np.full(3, self.prior_shape / self.prior_rate))

    def sample_data(self, theta, size, rng):
        # normalised gammas; floor at tiny so logs stay finite
        g = rng.standard_gamma(theta.alpha, (size, 3))
        x = g / g.sum(axis=1, keepdims=True)
        return np.maximum(x, _TINY)

    def log_datum_density(self, x, theta):
        x = np.atleast_2d(x)
        a = theta.alpha
        return gammaln(a.sum()) - gammaln(a).sum() + np.log(np.maximum(x, _TINY)) @ (a - 1.0)

    def record_statistics(self, x, s=None):
        return dirichlet_record_statistics(x, self.floor)

    def sufficient_stats(self, x):
        return np.log(np.maximum(np.atleast_2d(x), _TINY)).sum(axis=0)

    def log_posterior(self, log_alpha, stats, n):
        """Unnormalised ``log p(log alpha | x)`` including the log-Jacobian."""
        a = np.exp(log_alpha)
        ll = n * (gammaln(a.sum()) - gammaln(a).sum()) + (a - 1.0) @ stats
        lp = np.sum(self.prior_shape * log_alpha - self.prior_rate * a)
        return ll + lp

    def update_theta(self, theta, x, rng):
        n = len(x)
        stats = self.sufficient_stats(x) if n else np.zeros(3)
        return self.update_theta_from_stats(theta, stats, n, rng)

    def update_theta_from_stats(self, theta, stats, n, rng):
        if self.step == 0.0:
            return DirichletParams(theta.alpha.copy())
        la = np.log(theta.alpha)
        cur = self.log_posterior(la, stats, n)
        z = rng.standard_normal(3)
        lu = np.log(rng.random(3))
        moved = False
        for j in range(3):
            prop = la.copy()
            prop[j] += self.step * z[j]
            new = self.log_posterior(prop, stats, n)
            if lu[j] < new - cur:
                la, cur = prop, new
                moved = True
        # unchanged components keep their exact value rather than exp(log(.))
        return DirichletParams(np.exp(la) if moved else theta.alpha.copy())

    def flatten_theta(self, theta):
        return theta.alpha.copy()

    def unflatten_theta(self, v):
        return DirichletParams(v)

    # MCEM (gradient M-step only; no closed form)
    def complete_loglik(self, theta, stats, n_total):
        a = theta.alpha
        return n_total * (gammaln(a.sum()) - gammaln(a).sum()) + (a - 1.0) @ stats

    def to_unconstrained(self, theta):
        return np.log(theta.alpha)

    def from_unconstrained(self, u):
        return DirichletParams(np.exp(u))

    def grad_log_datum_density(self, x, theta):
        x = np.atleast_2d(x)
        a = theta.alpha
        return a * (digamma(a.sum()) - digamma(a) + np.log(np.maximum(x, _TINY)))

    def grad_from_stats(self, theta, stats, n_total):
        a = theta.alpha
        return a * (n_total * (digamma(a.sum()) - digamma(a)) + stats)

    def initial_theta(self, s, n_hat, rng=None):
        return self.prior_mean()
