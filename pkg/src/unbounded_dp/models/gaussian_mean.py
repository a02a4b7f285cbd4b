"""Unit-variance Gaussian with unknown mean and a clamped-sum release."""

import math

import numpy as np

from ..mechanisms import NoiseFamily, NoiseSpec
from .base import Model


class GaussianMeanModel(Model):
    """``x_i ~ N(theta, 1)``, ``theta ~ N(m0, v0)``; ``s = sum [x_i]_L^U + Laplace``."""

    name = "gaussian_mean"
    summary_dim = 1
    record_dim = 1
    theta_labels = ("theta",)

    def __init__(self, epsilon_s=1.0, lower=-5.0, upper=5.0, m0=0.0, v0=100.0):
        if not lower < upper:
            raise ValueError("need lower < upper")
        sens = max(abs(lower), abs(upper))
        super().__init__(NoiseSpec.from_epsilon(NoiseFamily.CONTINUOUS_LAPLACE, epsilon_s, sens))
        self.lower, self.upper = float(lower), float(upper)
        self.m0, self.v0 = float(m0), float(v0)

    def sample_prior(self, rng):
        return float(self.m0 + math.sqrt(self.v0) * rng.standard_normal())

    def sample_data(self, theta, size, rng):
        return (theta + rng.standard_normal(size)).reshape(-1, 1)

    def log_datum_density(self, x, theta):
        z = np.asarray(x, dtype=float).reshape(-1) - theta
        return -0.5 * z * z - 0.5 * math.log(2 * math.pi)

    def update_theta(self, theta, x, rng):
        n = len(x)
        prec = 1.0 / self.v0 + n
        mean = (self.m0 / self.v0 + float(np.sum(x))) / prec
        return float(mean + rng.standard_normal() / math.sqrt(prec))

    def record_statistics(self, x, s=None):
        return np.clip(np.asarray(x, dtype=float).reshape(-1, 1), self.lower, self.upper)

    def sufficient_stats(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.array([x.sum(), (x * x).sum()])

    def closed_form_mstep(self, stats, n_total):
        return float(stats[0] / n_total)

    def complete_loglik(self, theta, stats, n_total):
        return -0.5 * (stats[1] - 2 * theta * stats[0] + n_total * theta * theta)

    def unflatten_theta(self, v):
        return float(np.asarray(v, dtype=float).reshape(-1)[0])

    def to_unconstrained(self, theta):
        return np.array([float(theta)])

    def from_unconstrained(self, u):
        return float(u[0])

    def grad_log_datum_density(self, x, theta):
        return (np.asarray(x, dtype=float).reshape(-1) - theta)[:, None]

    def grad_from_stats(self, theta, stats, n_total):
        return np.array([stats[0] - n_total * theta])
