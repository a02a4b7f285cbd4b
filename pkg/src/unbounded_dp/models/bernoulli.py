"""Bernoulli data with a Beta prior: a minimal model with exact oracles."""

import math

import numpy as np

from ..mechanisms import NoiseFamily, NoiseSpec
from .base import Model


class BernoulliModel(Model):
    """``x_i ~ Bernoulli(theta)``, ``theta ~ Beta(a, b)``, ``s = sum x_i + noise``.

    ``noise=None`` gives the zero-noise mechanism ``s = sum x_i``.
    """

    name = "bernoulli"
    summary_dim = 1
    record_dim = 1
    theta_labels = ("theta",)

    def __init__(self, noise=None, a=1.0, b=1.0):
        if not (a > 0 and b > 0):
            raise ValueError("Beta hyperparameters must be positive")
        super().__init__(noise)
        self.a = float(a)
        self.b = float(b)

    @classmethod
    def with_epsilon(cls, epsilon_s, family=NoiseFamily.DISCRETE_LAPLACE, a=1.0, b=1.0):
        return cls(NoiseSpec.from_epsilon(family, epsilon_s), a, b)

    def sample_prior(self, rng):
        return float(rng.beta(self.a, self.b))

    def sample_data(self, theta, size, rng):
        return (rng.random(size) < theta).astype(float).reshape(-1, 1)

    def log_datum_density(self, x, theta):
        x = np.asarray(x, dtype=float).reshape(-1)
        return x * math.log(theta) + (1.0 - x) * math.log1p(-theta)

    def update_theta(self, theta, x, rng):
        k = float(np.sum(x))
        n = len(x)
        return float(rng.beta(self.a + k, self.b + n - k))

    def record_statistics(self, x, s=None):
        return np.asarray(x, dtype=float).reshape(-1, 1)

    def summary_loglik(self, s, t):
        if self.noise is None:
            return 0.0 if np.allclose(s, t, rtol=0.0, atol=1e-9) else -math.inf
        return super().summary_loglik(s, t)

    def kernel_spec(self):
        if self.noise is None:
            return None
        return super().kernel_spec()

    def simulate_summary(self, x, rng):
        t = self.record_statistics(x).sum(axis=0)
        if self.noise is None:
            return t
        return t + self.noise.sample(t.shape, rng)

    # MCEM
    def sufficient_stats(self, x):
        return np.array([float(np.sum(x))])

    def closed_form_mstep(self, stats, n_total):
        return float(stats[0] / n_total)

    def complete_loglik(self, theta, stats, n_total):
        k = stats[0]
        return k * math.log(theta) + (n_total - k) * math.log1p(-theta)

    def unflatten_theta(self, v):
        return float(np.asarray(v, dtype=float).reshape(-1)[0])

    def to_unconstrained(self, theta):
        return np.array([math.log(theta) - math.log1p(-theta)])

    def from_unconstrained(self, u):
        return float(1.0 / (1.0 + math.exp(-u[0])))

    def grad_log_datum_density(self, x, theta):
        return (np.asarray(x, dtype=float).reshape(-1) - theta)[:, None]

    def grad_from_stats(self, theta, stats, n_total):
        return np.array([stats[0] - n_total * theta])
