"""The contract a data model satisfies to plug into the sampler and MCEM."""

from __future__ import annotations

import numpy as np

from ..mechanisms import NoiseSpec


class NumericBreakdown(ArithmeticError):
    """A numerical failure (non-finite density, lost positive-definiteness)."""


class Model:
    """Base class for record-additive privatized-data models.

    Records are stored as rows of a float array of width ``record_dim``.
    Subclasses implement the prior, the data model, the record statistic and
    the parameter update; MCEM support is optional.

    Attributes
    ----------
    name : str
    summary_dim : int
        Dimension ``d`` of the released summary ``s``.
    record_dim : int
        Width of one stored record.
    exact_theta_update : bool
        True when :meth:`update_theta` is an exact conditional draw, False when
        it is a kernel leaving ``p(theta | x)`` invariant.
    """

    name = "model"
    summary_dim = 1
    record_dim = 1
    exact_theta_update = True
    theta_labels: tuple = ()

    def __init__(self, noise: NoiseSpec):
        self.noise = noise

    # -- prior and data model --------------------------------------------
    def sample_prior(self, rng):
        raise NotImplementedError

    def sample_data(self, theta, size, rng) -> np.ndarray:
        raise NotImplementedError

    def sample_datum(self, theta, rng) -> np.ndarray:
        return self.sample_data(theta, 1, rng)[0]

    def log_datum_density(self, x, theta) -> np.ndarray:
        raise NotImplementedError

    def update_theta(self, theta, x, rng):
        raise NotImplementedError

    # -- privacy mechanism -----------------------------------------------
    def record_statistics(self, x, s=None) -> np.ndarray:
        raise NotImplementedError

    def record_statistic(self, s, x_i) -> np.ndarray:
        return self.record_statistics(np.atleast_2d(x_i), s)[0]

    def summary_loglik(self, s, t) -> float:
        """``log g(s, t)``: the mechanism log-density of ``s`` given the statistic ``t``."""
        return float(np.sum(self.noise.log_density(np.asarray(s) - np.asarray(t))))

    def kernel_spec(self):
        return self.noise.kernel_spec(self.summary_dim)

    def simulate_summary(self, x, rng):
        t = self.record_statistics(x).sum(axis=0)
        return t + self.noise.sample(t.shape, rng)

    # -- parameters ------------------------------------------------------
    def flatten_theta(self, theta) -> np.ndarray:
        return np.atleast_1d(np.asarray(theta, dtype=float))

    # -- MCEM ------------------------------------------------------------
    def sufficient_stats(self, x) -> np.ndarray:
        """Summed complete-data sufficient statistics of the rows of ``x``."""
        raise NotImplementedError

    def closed_form_mstep(self, stats, n_total):
        raise NotImplementedError

    def complete_loglik(self, theta, stats, n_total) -> float:
        """``sum_i log p(x_i | theta)`` from summed sufficient statistics, up to a constant."""
        raise NotImplementedError

    def to_unconstrained(self, theta) -> np.ndarray:
        raise NotImplementedError

    def from_unconstrained(self, u):
        raise NotImplementedError

    def grad_log_datum_density(self, x, theta) -> np.ndarray:
        """Per-row gradient of ``log p(x_i | theta)`` with respect to the unconstrained parameters."""
        raise NotImplementedError

    def grad_from_stats(self, theta, stats, n_total) -> np.ndarray:
        """Sum of per-datum gradients computed from sufficient statistics."""
        raise NotImplementedError

    def initial_theta(self, s, n_hat, rng):
        """Starting value for MCEM; defaults to a prior draw."""
        return self.sample_prior(rng)
