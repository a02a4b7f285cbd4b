"""Posterior of the true sample size given its privatized release."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mechanisms import NoiseFamily, NoiseSpec, as_family, window_half_width


class WindowOverflow(RuntimeError):
    pass


class DegenerateLikelihood(ValueError):
    pass


@dataclass(frozen=True)
class FlatPrior:
    """Flat prior on ``{1, ..., n_max}``; ``n_max=None`` is the improper flat prior."""

    n_max: int | None = None

    def log_prob(self, n) -> float:
        if n < 1 or (self.n_max is not None and n > self.n_max):
            return -math.inf
        return 0.0


def default_n_max(n_dp: float, epsilon_n: float) -> int:
    top = math.ceil(max(n_dp, 1.0))
    if math.isinf(epsilon_n):
        return 2 * top
    return max(2 * top, math.ceil(n_dp) + window_half_width(epsilon_n))


@dataclass(frozen=True)
class NPosterior:
    """Normalised posterior weights over the integer window ``[n_lo, n_hi]``."""

    n_lo: int
    log_weights: np.ndarray

    @property
    def n_hi(self) -> int:
        return self.n_lo + len(self.log_weights) - 1

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.n_lo, self.n_hi + 1)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def mean(self) -> float:
        return float(self.probs @ self.support)

    def var(self) -> float:
        p, k = self.probs, self.support
        m = p @ k
        return float(p @ (k - m) ** 2)

    def sample(self, size, rng):
        p = self.probs
        return self.n_lo + rng.choice(len(p), size=size, p=p / p.sum())


def count_log_likelihood(n_dp, n, noise: NoiseSpec | None):
    """``log p(n_dp | n)`` for additive count noise; ``noise=None`` is exact release."""
    n = np.asarray(n)
    if noise is None:
        return np.where(n == n_dp, 0.0, -np.inf)
    return noise.log_density(n_dp - n)


def build_n_posterior(n_dp, epsilon_n, family=NoiseFamily.DISCRETE_LAPLACE,
                      prior: FlatPrior | None = None, window_cap: int = 10_000_000,
                      half_width: int | None = None) -> NPosterior:
    """Posterior ``p(n | n_dp)`` under a flat prior, truncated to ``n >= 1``.

    The window is ``n_dp ± ceil(40/epsilon_n)`` clipped to the prior support,
    so the excluded mass is below ``exp(-40)`` relative to the mode.
    """
    if math.isinf(epsilon_n):
        n0 = int(round(n_dp))
        if n0 < 1:
            raise DegenerateLikelihood("exact count must be >= 1")
        return NPosterior(n0, np.zeros(1))
    if not epsilon_n > 0:
        raise ValueError("epsilon_n must be positive")
    family = as_family(family)
    if prior is None:
        prior = FlatPrior(default_n_max(n_dp, epsilon_n))
    h = window_half_width(epsilon_n) if half_width is None else half_width
    lo = max(1, math.floor(n_dp) - h)
    hi = math.ceil(n_dp) + h
    if prior.n_max is not None:
        hi = min(hi, prior.n_max)
        lo = min(lo, prior.n_max)
    if hi - lo + 1 > window_cap:
        raise WindowOverflow(f"window of {hi - lo + 1} exceeds cap {window_cap}")
    ns = np.arange(lo, hi + 1)
    noise = NoiseSpec.from_epsilon(family, epsilon_n)
    lw = np.asarray(noise.log_density(n_dp - ns), dtype=float)
    return NPosterior(lo, lw - logsumexp(lw))


def expected_abs_deviation(post: NPosterior, n0: int) -> float:
    """``E|n - n0|`` under the posterior, summed exactly over the support."""
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    return float(post.probs @ np.abs(post.support - n0))


def expectation_bound(family, epsilon: float) -> float:
    """Closed-form bound on ``E|n - n0|``: ``2/(e^eps - 1)`` (Laplace) or ``2/eps`` (Gaussian)."""
    family = as_family(family)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if family is NoiseFamily.DISCRETE_LAPLACE:
        return 2.0 / math.expm1(epsilon)
    if family is NoiseFamily.DISCRETE_GAUSSIAN:
        return 2.0 / epsilon
    raise ValueError(f"no closed-form bound for {family.value}")


def mixture_loglik(post: NPosterior, per_n_loglik) -> float:
    """``log sum_k p(n=k | n_dp) p(s | n=k, theta)`` via log-sum-exp."""
    ll = np.array([per_n_loglik(int(k)) for k in post.support], dtype=float)
    terms = post.log_weights + ll
    if not np.any(np.isfinite(terms)):
        raise DegenerateLikelihood("all mixture components have zero likelihood")
    return float(logsumexp(terms))
