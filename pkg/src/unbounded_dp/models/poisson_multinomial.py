"""Poissonised contingency table: independent Poisson cells with Gamma rates.

The released table is ``s_i = x_i + noise_i`` with sensitivity-1 integer noise
per cell. The sampler never tracks the total count; a cycle costs ``O(k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..mechanisms import NoiseFamily, NoiseSpec

LOG_HALF = math.log(0.5)
LOG_TWO = math.log(2.0)


@dataclass
class PoissonMultinomialParams:
    lambda_tilde: np.ndarray

    def __post_init__(self):
        self.lambda_tilde = np.asarray(self.lambda_tilde, dtype=float)
        if not np.all(self.lambda_tilde > 0):
            raise ValueError("cell rates must be positive")

    @property
    def total_rate(self) -> float:
        return float(self.lambda_tilde.sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.lambda_tilde / self.lambda_tilde.sum()


@dataclass
class PMTrace:
    x: np.ndarray
    lambda_tilde: np.ndarray
    accepted: np.ndarray
    proposed: int
    burn_in: int

    @property
    def n(self) -> np.ndarray:
        return self.x.sum(axis=1)


class PoissonMultinomialModel:
    """``lambda_i ~ Gamma(alpha_i, rate)``, ``x_i ~ Poisson(lambda_i)``."""

    name = "poisson_multinomial"

    def __init__(self, alpha, rate=1.0, epsilon=1.0, family=NoiseFamily.DISCRETE_LAPLACE):
        self.alpha = np.asarray(alpha, dtype=float)
        if not np.all(self.alpha > 0) or not rate > 0:
            raise ValueError("Gamma hyperparameters must be positive")
        self.k = len(self.alpha)
        self.rate = float(rate)
        self.noise = NoiseSpec.from_epsilon(family, epsilon)

    def sample_prior(self, rng):
        return PoissonMultinomialParams(rng.gamma(self.alpha, 1.0 / self.rate))

    def sample_data(self, theta, rng):
        return rng.poisson(theta.lambda_tilde)

    def privatize(self, x, rng):
        x = np.asarray(x)
        return x + np.asarray(self.noise.sample(x.shape, rng))

    def update_theta(self, x, rng):
        """Exact draw ``lambda_i | x_i ~ Gamma(alpha_i + x_i, rate + 1)``."""
        return PoissonMultinomialParams(rng.gamma(self.alpha + np.asarray(x), 1.0 / (self.rate + 1.0)))

    def count_move(self, x, i, lam, s, u_dir):
        """Propose ``x_i +- 1`` and return ``(new_value, log acceptance ratio)``.

        ``u_dir`` is a uniform deciding the direction; at ``x_i = 0`` the move
        is always up.
        """
        xi = int(x[i])
        if xi == 0 or u_dir < 0.5:
            new = xi + 1
            log_data = math.log(lam) - math.log(xi + 1)
            log_q = LOG_HALF if xi == 0 else 0.0
        else:
            new = xi - 1
            log_data = math.log(xi) - math.log(lam)
            log_q = LOG_TWO if new == 0 else 0.0
        log_mech = float(self.noise.log_density(s[i] - new) - self.noise.log_density(s[i] - xi))
        return new, log_mech + log_data + log_q

    def run(self, s, iterations, burn_in=0, seed=0, x0=None):
        """Metropolis-within-Gibbs: exact rate draw, then one ``+-1`` move per cell."""
        if not 0 <= burn_in < iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        rng = np.random.default_rng(seed)
        s = np.asarray(s, dtype=float)
        x = np.maximum(np.rint(s), 0).astype(np.int64) if x0 is None else np.array(x0, dtype=np.int64)
        xs = np.empty((iterations, self.k), dtype=np.int64)
        lams = np.empty((iterations, self.k))
        acc = np.zeros(self.k, dtype=np.int64)
        for it in range(iterations):
            lam = self.update_theta(x, rng).lambda_tilde
            u = rng.random((2, self.k))
            for i in range(self.k):
                new, la = self.count_move(x, i, lam[i], s, u[0, i])
                if la >= 0.0 or u[1, i] < math.exp(la):
                    x[i] = new
                    acc[i] += 1
            xs[it] = x
            lams[it] = lam
        return PMTrace(xs, lams, acc, iterations * self.k, burn_in)
