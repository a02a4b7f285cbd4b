"""Privacy mechanisms: noise samplers, log-densities, clamping and sensitivities.

All densities are exposed in log form only. Every sampler takes an explicit
:class:`numpy.random.Generator`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy import special, stats


class InvalidBounds(ValueError):
    pass


class InvalidBudget(ValueError):
    pass


class InvalidInput(ValueError):
    pass


class NoiseFamily(str, enum.Enum):
    CONTINUOUS_LAPLACE = "continuous_laplace"
    DISCRETE_LAPLACE = "discrete_laplace"
    DISCRETE_GAUSSIAN = "discrete_gaussian"
    KNG = "kng"

    @property
    def is_discrete(self) -> bool:
        return self in (NoiseFamily.DISCRETE_LAPLACE, NoiseFamily.DISCRETE_GAUSSIAN)

    @property
    def is_pure_dp(self) -> bool:
        return self is not NoiseFamily.DISCRETE_GAUSSIAN


def as_family(family) -> NoiseFamily:
    return family if isinstance(family, NoiseFamily) else NoiseFamily(family)


@dataclass(frozen=True)
class PrivacyBudget:
    """Budgets for the summary ``s`` and the count ``n_dp``.

    ``epsilon_n = inf`` means the count is released exactly (bounded DP).
    """

    epsilon_s: float
    epsilon_n: float = math.inf

    def __post_init__(self):
        if not self.epsilon_s > 0:
            raise InvalidBudget(f"epsilon_s must be positive, got {self.epsilon_s}")
        if not self.epsilon_n > 0:
            raise InvalidBudget(f"epsilon_n must be positive, got {self.epsilon_n}")

    @property
    def bounded(self) -> bool:
        return math.isinf(self.epsilon_n)


def window_half_width(epsilon: float) -> int:
    """Half-width ``ceil(40 / epsilon)`` of the truncation window for discrete noise."""
    return int(math.ceil(40.0 / epsilon))


# --- scalar densities -------------------------------------------------------


def laplace_log_density(z, scale):
    """Log-density of Laplace(0, scale) at ``z``."""
    if not scale > 0:
        raise InvalidInput("scale must be positive")
    return -math.log(2.0 * scale) - np.abs(z) / scale


def discrete_laplace_log_pmf(k, epsilon):
    """Log-pmf of the two-sided geometric ``(1-q)/(1+q) q^|k|`` with ``q = exp(-epsilon)``."""
    if not epsilon > 0:
        raise InvalidInput("epsilon must be positive")
    # log((1-q)/(1+q)) = log(tanh(epsilon/2))
    return math.log(math.tanh(epsilon / 2.0)) - epsilon * np.abs(k)


def discrete_gaussian_log_weight(k, epsilon):
    """Unnormalised log-weight ``-(epsilon^2/2) k^2``."""
    if not epsilon > 0:
        raise InvalidInput("epsilon must be positive")
    return -0.5 * epsilon * epsilon * np.square(k)


@lru_cache(maxsize=64)
def _discrete_table(family: NoiseFamily, epsilon: float):
    h = window_half_width(epsilon)
    ks = np.arange(-h, h + 1)
    if family is NoiseFamily.DISCRETE_LAPLACE:
        logp = discrete_laplace_log_pmf(ks, epsilon)
    else:
        logw = discrete_gaussian_log_weight(ks, epsilon)
        logp = logw - special.logsumexp(logw)
    cdf = np.cumsum(np.exp(logp))
    cdf /= cdf[-1]
    ks.setflags(write=False)
    cdf.setflags(write=False)
    return ks, cdf, float(special.logsumexp(discrete_gaussian_log_weight(ks, epsilon)))


def discrete_gaussian_log_pmf(k, epsilon):
    """Log-pmf of the discrete Gaussian with ``sigma = 1/epsilon`` (window-normalised)."""
    log_z = _discrete_table(NoiseFamily.DISCRETE_GAUSSIAN, float(epsilon))[2]
    return discrete_gaussian_log_weight(k, epsilon) - log_z


def sample_discrete(family, epsilon, size, rng):
    """Inverse-CDF draw from a discrete Laplace or Gaussian on the ``±ceil(40/eps)`` window."""
    family = as_family(family)
    if not family.is_discrete:
        raise InvalidInput(f"{family.value} is not a discrete family")
    ks, cdf, _ = _discrete_table(family, float(epsilon))
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    return ks[np.minimum(idx, len(ks) - 1)]


# --- truncated Laplace / KNG -------------------------------------------------


def _laplace_cdf(x, loc, scale):
    z = (x - loc) / scale
    return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))


def _laplace_ppf(p, loc, scale):
    return np.where(
        p < 0.5,
        loc + scale * np.log(2.0 * np.maximum(p, 1e-300)),
        loc - scale * np.log(2.0 * np.maximum(1.0 - p, 1e-300)),
    )


def truncated_laplace_cdf(x, loc, scale, lo=0.0, hi=1.0):
    f_lo = _laplace_cdf(lo, loc, scale)
    f_hi = _laplace_cdf(hi, loc, scale)
    return np.clip((_laplace_cdf(x, loc, scale) - f_lo) / (f_hi - f_lo), 0.0, 1.0)


def truncated_laplace_ppf(u, loc, scale, lo=0.0, hi=1.0):
    f_lo = _laplace_cdf(lo, loc, scale)
    f_hi = _laplace_cdf(hi, loc, scale)
    return np.clip(_laplace_ppf(f_lo + u * (f_hi - f_lo), loc, scale), lo, hi)


def kng_mean_sample(xbar, n, epsilon, rng, size=None):
    """K-norm gradient release of a mean in [0, 1]: truncated Laplace(xbar, 2/(n eps)) on [0, 1]."""
    xbar = np.asarray(xbar, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(xbar < 0.0) or np.any(xbar > 1.0):
        raise InvalidInput("xbar must lie in [0, 1]")
    if np.any(n < 1) or not epsilon > 0:
        raise InvalidInput("need n >= 1 and epsilon > 0")
    if size is None:
        size = np.broadcast(xbar, n).shape or None
    scale = 2.0 / (n * epsilon)
    return truncated_laplace_ppf(rng.random(size), xbar, scale)


# --- noise specification ----------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """An additive noise mechanism ``z ~ eta``.

    For the Laplace families ``scale = sensitivity / epsilon``; for the discrete
    Gaussian ``scale`` is the standard-deviation parameter ``1/epsilon`` times
    the sensitivity.
    """

    family: NoiseFamily
    scale: float
    sensitivity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", as_family(self.family))
        if not self.scale > 0 or not self.sensitivity > 0:
            raise InvalidInput("scale and sensitivity must be positive")

    @classmethod
    def from_epsilon(cls, family, epsilon, sensitivity=1.0):
        if not epsilon > 0:
            raise InvalidBudget(f"epsilon must be positive, got {epsilon}")
        return cls(as_family(family), sensitivity / epsilon, sensitivity)

    @property
    def epsilon(self) -> float:
        return self.sensitivity / self.scale

    @property
    def rate(self) -> float:
        """Per-unit epsilon of the integer-lattice families (``1/scale``)."""
        return 1.0 / self.scale

    def log_density(self, z):
        """Log density (continuous) or log pmf (discrete) of the noise at ``z``."""
        fam = self.family
        if fam is NoiseFamily.CONTINUOUS_LAPLACE:
            return laplace_log_density(z, self.scale)
        if fam is NoiseFamily.DISCRETE_LAPLACE:
            return discrete_laplace_log_pmf(z, self.rate)
        if fam is NoiseFamily.DISCRETE_GAUSSIAN:
            return discrete_gaussian_log_pmf(z, self.rate)
        raise InvalidInput("KNG noise is not additive; use kng_mean_sample")

    def sample(self, size, rng):
        fam = self.family
        if fam is NoiseFamily.CONTINUOUS_LAPLACE:
            return rng.laplace(0.0, self.scale, size)
        if fam.is_discrete:
            return sample_discrete(fam, self.rate, size, rng)
        raise InvalidInput("KNG noise is not additive; use kng_mean_sample")

    def kernel_spec(self, d):
        """``(kind, weights)`` for :func:`unbounded_dp.kernels` (constants dropped)."""
        from . import kernels

        if self.family in (NoiseFamily.CONTINUOUS_LAPLACE, NoiseFamily.DISCRETE_LAPLACE):
            return kernels.LAPLACE, np.full(d, 1.0 / self.scale)
        if self.family is NoiseFamily.DISCRETE_GAUSSIAN:
            return kernels.GAUSSIAN, np.full(d, 0.5 / self.scale**2)
        return None


# --- clamping and sensitivities ---------------------------------------------


def clamp_normalize(x, lower, upper):
    """Clamp to ``[lower, upper]`` and map affinely onto ``[-1, 1]``."""
    if not lower < upper:
        raise InvalidBounds(f"need lower < upper, got [{lower}, {upper}]")
    return 2.0 * (np.clip(x, lower, upper) - lower) / (upper - lower) - 1.0


def regression_summary_dim(p: int) -> int:
    return p + p + math.comb(p, 2) + p + 1 + 1


def regression_sensitivity(p: int) -> float:
    """L1 sensitivity of the unique clamped cross-product cells (count cell excluded)."""
    if p < 1:
        raise InvalidInput("regression needs at least one covariate")
    return p * p / 2.0 + 2.5 * p + 2.0


def regression_record_statistics(x, y, lower, upper):
    """Per-record contributions to the unique cells of the normalised cross products.

    Column order: ``sum x_j``, ``sum x_j^2``, ``sum x_j x_k`` (j < k),
    ``sum x_j y``, ``sum y``, ``sum y^2``.
    """
    xt = clamp_normalize(np.atleast_2d(x), lower, upper)
    yt = clamp_normalize(np.asarray(y, dtype=float).reshape(-1), lower, upper)
    p = xt.shape[1]
    cols = [xt, xt * xt]
    if p > 1:
        j, k = np.array(list(combinations(range(p), 2))).T
        cols.append(xt[:, j] * xt[:, k])
    cols += [xt * yt[:, None], yt[:, None], (yt * yt)[:, None]]
    return np.hstack(cols)


def privatize_regression_summaries(X, Y, lower, upper, budget: PrivacyBudget, rng,
                                   count_family=NoiseFamily.CONTINUOUS_LAPLACE,
                                   zero_noise=False):
    """Release ``(s, n_dp)`` for the clamped regression cross products.

    Returns ``(s, n_dp)``. ``zero_noise`` returns the exact statistic and
    count, for testing.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if X.size == 0 or Y.size == 0:
        raise InvalidInput("empty data")
    if X.shape[0] != Y.shape[0]:
        raise InvalidInput("X and Y row counts differ")
    t = regression_record_statistics(X, Y, lower, upper).sum(axis=0)
    n = X.shape[0]
    if zero_noise:
        return t, n
    delta = regression_sensitivity(X.shape[1])
    s = t + rng.laplace(0.0, delta / budget.epsilon_s, t.shape)
    return s, privatize_count(n, budget.epsilon_n, count_family, rng)


def dirichlet_record_statistics(X, floor):
    """Per-record ``log [x_ij]_floor^1``; each entry lies in ``[log floor, 0]``."""
    if not 0.0 < floor < 1.0:
        raise InvalidInput(f"floor must lie in (0, 1), got {floor}")
    return np.log(np.clip(np.atleast_2d(X), floor, 1.0))


def dirichlet_noise_scale(floor, epsilon_s):
    return -3.0 * math.log(floor) / epsilon_s


def privatize_dirichlet_summaries(X, floor, epsilon_s, rng, zero_noise=False):
    """Noisy sum of floored log-proportions for 3-part compositions."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not 0.0 < floor < 1.0:
        raise InvalidInput(f"floor must lie in (0, 1), got {floor}")
    if X.shape[1] != 3 or np.any(np.abs(X.sum(axis=1) - 1.0) > 1e-9):
        raise InvalidInput("rows must be 3-part compositions summing to 1")
    t = dirichlet_record_statistics(X, floor).sum(axis=0)
    if zero_noise:
        return t
    return t + rng.laplace(0.0, dirichlet_noise_scale(floor, epsilon_s), 3)


def privatize_count(n, epsilon_n, family, rng):
    """Release ``n`` with sensitivity-1 noise; ``epsilon_n = inf`` releases ``n`` exactly."""
    family = as_family(family)
    if n < 1:
        raise InvalidInput("n must be positive")
    if math.isinf(epsilon_n):
        return int(n) if family.is_discrete else float(n)
    if not epsilon_n > 0:
        raise InvalidBudget("epsilon_n must be positive")
    spec = NoiseSpec.from_epsilon(family, epsilon_n)
    z = spec.sample(None, rng)
    if family.is_discrete:
        return int(n + int(z))
    return float(n + z)


# --- conversions to (0, delta)-DP -------------------------------------------


class Framework(str, enum.Enum):
    PURE = "pure"
    APPROX = "approx"
    GDP = "gdp"
    ZCDP = "zcdp"
    RENYI = "renyi"


def dp_to_tv_delta(framework, *params) -> float:
    """Total-variation delta implied by a DP guarantee.

    ``pure``: ``(eps,)``; ``approx``: ``(eps, delta)``; ``gdp``: ``(mu,)``;
    ``zcdp``: ``(rho,)``; ``renyi``: ``(alpha, eps)`` where ``eps`` bounds the KL
    divergence.
    """
    framework = Framework(framework)
    if any(p < 0 for p in params):
        raise InvalidBudget(f"negative budget parameter in {params}")
    if framework is Framework.PURE:
        (eps,) = params
        if math.isinf(eps):
            return 1.0
        return math.expm1(eps) / (math.exp(eps) + 1.0)
    if framework is Framework.APPROX:
        eps, delta = params
        if delta > 1:
            raise InvalidBudget("delta must be <= 1")
        if math.isinf(eps):
            return 1.0
        return min(1.0, (2.0 * delta + math.expm1(eps)) / (math.exp(eps) + 1.0))
    if framework is Framework.GDP:
        (mu,) = params
        return 2.0 * stats.norm.cdf(mu / 2.0) - 1.0
    if framework is Framework.ZCDP:
        (rho,) = params
        return _kl_to_tv(rho)
    alpha, eps = params
    if alpha < 1:
        raise InvalidBudget("Renyi order must be >= 1")
    return _kl_to_tv(eps)


def _kl_to_tv(kl):
    # Pinsker and Bretagnolle-Huber
    return min(math.sqrt(kl / 2.0), math.sqrt(-math.expm1(-kl)))
