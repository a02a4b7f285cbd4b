"""Exact enumeration oracles, distance estimators and Monte Carlo checks of the limit results.

Everything here is slow and simple on purpose: it is the ground truth the
samplers are compared against.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats
from scipy.special import betaln, gammaln, logsumexp

from .mechanisms import (
    Framework,
    NoiseFamily,
    NoiseSpec,
    as_family,
    dp_to_tv_delta,
    kng_mean_sample,
    window_half_width,
)
from .n_posterior import build_n_posterior, expected_abs_deviation


class GridTooLarge(ValueError):
    pass


class RectangleTooSmall(RuntimeError):
    pass


@dataclass(frozen=True)
class EnumeratedPosterior:
    grid: tuple
    probabilities: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        if len(set(self.grid)) != len(self.grid):
            raise ValueError("grid states must be distinct")

    def as_dict(self):
        return dict(zip(self.grid, self.probabilities.tolist()))

    def marginal(self, axis):
        out = {}
        for g, p in zip(self.grid, self.probabilities):
            out[g[axis]] = out.get(g[axis], 0.0) + p
        return out


def _normalise(grid, logw, tail=0.0):
    logw = np.asarray(logw, dtype=float)
    return EnumeratedPosterior(tuple(grid), np.exp(logw - logsumexp(logw)), tail)


def _log_eta(noise, z):
    if noise is None:
        return 0.0 if abs(z) < 1e-9 else -math.inf
    return float(noise.log_density(z))


def log_beta_binomial(k, n, a, b):
    return (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
            + betaln(k + a, n - k + b) - betaln(a, b))


# --- Bernoulli toy ------------------------------------------------------------


def enumerate_bernoulli_posterior(s, n_dp, a, b, n_range, summary_noise: NoiseSpec | None,
                                  count_noise: NoiseSpec | None) -> EnumeratedPosterior:
    """Exact ``p(n, k | s, n_dp)`` with ``k = sum x`` and ``theta`` integrated out.

    ``n`` has a flat prior on ``n_range = (lo, hi)``; ``None`` noise means exact release.
    """
    lo, hi = n_range
    grid, logw = [], []
    for n in range(lo, hi + 1):
        ln = _log_eta(count_noise, n_dp - n)
        for k in range(n + 1):
            grid.append((n, k))
            logw.append(ln + _log_eta(summary_noise, s - k) + log_beta_binomial(k, n, a, b))
    return _normalise(grid, logw)


def bernoulli_posterior_brute_force(s, n_dp, a, b, n_range, summary_noise, count_noise):
    """Second path: sum over every binary dataset, integrating ``theta`` by quadrature."""
    lo, hi = n_range
    acc = {}
    prior_norm = math.exp(betaln(a, b))
    for n in range(lo, hi + 1):
        eta_n = math.exp(_log_eta(count_noise, n_dp - n))
        for xs in itertools.product((0, 1), repeat=n):
            k = sum(xs)
            like, _ = integrate.quad(
                lambda th: th ** (k + a - 1) * (1 - th) ** (n - k + b - 1), 0.0, 1.0,
                epsabs=1e-14, epsrel=1e-12)
            w = eta_n * math.exp(_log_eta(summary_noise, s - k)) * like / prior_norm
            acc[(n, k)] = acc.get((n, k), 0.0) + w
    grid = sorted(acc)
    p = np.array([acc[g] for g in grid])
    return EnumeratedPosterior(tuple(grid), p / p.sum())


# --- Poisson-multinomial ------------------------------------------------------


def log_negbin(x, alpha, rate):
    """Gamma-Poisson marginal of a count: ``NegBin(alpha, rate / (rate + 1))``."""
    return (gammaln(alpha + x) - gammaln(alpha) - gammaln(x + 1)
            + alpha * (math.log(rate) - math.log1p(rate)) - x * math.log1p(rate))


def enumerate_poisson_multinomial_posterior(s, alpha, rate, noise: NoiseSpec | None, count_cap,
                                            max_states=100_000) -> EnumeratedPosterior:
    """Exact posterior over ``{0..count_cap}^k`` with the cell rates integrated out.

    ``tail_mass`` is the posterior mass outside the grid, computed from the
    per-cell marginals summed far beyond the cap.
    """
    alpha = np.asarray(alpha, dtype=float)
    s = np.asarray(s, dtype=float)
    k = len(alpha)
    if (count_cap + 1) ** k > max_states:
        raise GridTooLarge(f"{count_cap + 1}^{k} states exceed {max_states}")
    xs = np.arange(count_cap + 1)
    cell = [np.array([log_negbin(x, alpha[i], rate) + _log_eta(noise, s[i] - x) for x in xs])
            for i in range(k)]
    grid = list(itertools.product(range(count_cap + 1), repeat=k))
    idx = np.array(grid)
    logw = sum(cell[i][idx[:, i]] for i in range(k))
    # the posterior factorises over cells, so the tail follows from the marginals
    inside = 1.0
    for i in range(k):
        far = np.arange(20 * (count_cap + 1) + 200)
        lw = np.array([log_negbin(x, alpha[i], rate) + _log_eta(noise, s[i] - x) for x in far])
        inside *= math.exp(logsumexp(lw[: count_cap + 1]) - logsumexp(lw))
    return _normalise(grid, logw, max(0.0, 1.0 - inside))


def poisson_multinomial_posterior_nested(s, alpha, rate, noise, count_cap):
    """Second path: explicit nested loops over three cells with ``math`` arithmetic."""
    if len(alpha) != 3:
        raise ValueError("nested-loop path is written for three cells")

    def w(x, i):
        a = float(alpha[i])
        nb = math.exp(math.lgamma(a + x) - math.lgamma(a) - math.lgamma(x + 1)) \
            * (rate / (rate + 1.0)) ** a * (1.0 / (rate + 1.0)) ** x
        return nb * math.exp(_log_eta(noise, float(s[i]) - x))

    table = {}
    for x0 in range(count_cap + 1):
        for x1 in range(count_cap + 1):
            for x2 in range(count_cap + 1):
                table[(x0, x1, x2)] = w(x0, 0) * w(x1, 1) * w(x2, 2)
    z = sum(table.values())
    grid = sorted(table)
    return EnumeratedPosterior(tuple(grid), np.array([table[g] / z for g in grid]))


# --- distances ----------------------------------------------------------------


def ks_distance_1d(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be non-empty")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_distance(a, b) -> float:
    """Max over coordinates of the 1-d KS statistic (a lower bound on the rectangle KS)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        return ks_distance_1d(a, b)
    return max(ks_distance_1d(a[:, j], b[:, j]) for j in range(a.shape[1]))


def tv_distance_discrete(p, q) -> float:
    """``(1/2) sum |p - q|`` over the union of supports; accepts dicts or enumerations."""
    p = p.as_dict() if isinstance(p, EnumeratedPosterior) else dict(p)
    q = q.as_dict() if isinstance(q, EnumeratedPosterior) else dict(q)
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical_distribution(samples) -> dict:
    vals, counts = np.unique(np.asarray(samples), axis=0, return_counts=True)
    total = counts.sum()
    if vals.ndim == 1:
        return {v.item(): c / total for v, c in zip(vals, counts)}
    return {tuple(int(u) for u in v): c / total for v, c in zip(vals, counts)}


def kendall_tau(x, y) -> float:
    return float(stats.kendalltau(x, y).statistic)


# --- TV of (s, n) versus (s, n_dp) --------------------------------


def _summary_pmf(n, theta, eps_s, family, s_grid):
    """pmf of ``s = Binomial(n, theta) + noise`` on an integer grid."""
    noise = NoiseSpec.from_epsilon(family, eps_s)
    ks = np.arange(n + 1)
    pk = stats.binom.pmf(ks, n, theta)
    return np.array([pk @ np.exp(noise.log_density(sv - ks)) for sv in s_grid])


def coupling_tv_check(n_lo, n_hi, theta, epsilon_s, epsilon_n, family=NoiseFamily.DISCRETE_LAPLACE):
    """Exact ``TV(p(s, n), p(s, n_dp))`` and ``P(n_dp != n)`` on a Bernoulli-sum toy.

    ``n`` is uniform on ``[n_lo, n_hi]``; ``s = sum x + noise(eps_s)`` and
    ``n_dp = n + noise(eps_n)``, both integer-valued.
    """
    family = as_family(family)
    if not family.is_discrete:
        raise ValueError("needs an integer-valued count mechanism")
    count = NoiseSpec.from_epsilon(family, epsilon_n)
    ws = window_half_width(epsilon_s)
    wn = window_half_width(epsilon_n)
    s_grid = np.arange(-ws, n_hi + ws + 1)
    ns = np.arange(n_lo, n_hi + 1)
    pn = np.full(len(ns), 1.0 / len(ns))
    ps = np.array([_summary_pmf(n, theta, epsilon_s, family, s_grid) for n in ns])  # (n, s)
    joint_true = pn[:, None] * ps
    m_grid = np.arange(n_lo - wn, n_hi + wn + 1)
    eta = np.exp(count.log_density(m_grid[:, None] - ns[None, :]))  # (m, n)
    joint_dp = eta @ joint_true  # (m, s)
    true_on_m = np.zeros_like(joint_dp)
    true_on_m[n_lo - m_grid[0]: n_hi - m_grid[0] + 1] = joint_true
    tv = 0.5 * float(np.abs(true_on_m - joint_dp).sum())
    bound = 1.0 - float(np.exp(count.log_density(0)))
    return tv, bound


# --- TV of s | n = n0 versus s | n_dp = n0 ---------------------------


def tv_privacy_check(n0, theta, epsilon_s, epsilon_n, family=NoiseFamily.DISCRETE_LAPLACE):
    """Exact ``TV(p(s | n=n0), p(s | n_dp=n0))`` and the bound ``delta * E|n - n0|``.

    Summary ``s = Binomial(n, theta) + discrete Laplace(eps_s)``, which is
    ``eps_s``-DP and hence ``(0, delta)``-DP with the pure-DP conversion.
    """
    post = build_n_posterior(n0, epsilon_n, family)
    ws = window_half_width(epsilon_s)
    s_grid = np.arange(-ws, post.n_hi + ws + 1)
    summ = NoiseFamily.DISCRETE_LAPLACE
    p_true = _summary_pmf(n0, theta, epsilon_s, summ, s_grid)
    p_mix = sum(w * _summary_pmf(int(n), theta, epsilon_s, summ, s_grid)
                for n, w in zip(post.support, post.probs) if w > 1e-300)
    tv = 0.5 * float(np.abs(p_true - p_mix).sum())
    delta = dp_to_tv_delta(Framework.PURE, epsilon_s)
    return tv, delta * expected_abs_deviation(post, n0)


# --- KS convergence as n0 grows ------------------------------------


MECHANISM_RATES = {"laplace_sum": (1.0, 0.5), "kng": (0.0, 0.5)}


def _simulate_summaries(mechanism, ns, theta, epsilon_s, rng):
    k = rng.binomial(ns, theta)
    if mechanism == "laplace_sum":
        return k + rng.laplace(0.0, 1.0 / epsilon_s, len(ns))
    if mechanism == "kng":
        return kng_mean_sample(k / ns, ns, epsilon_s, rng)
    raise ValueError(f"unknown mechanism {mechanism!r}")


def standardise(mechanism, s, n0, theta):
    a, b = MECHANISM_RATES[mechanism]
    return n0 ** b * (s / n0 ** a - theta)


def ks_convergence_check(mechanism, theta, n0_grid, replicates, rng, epsilon_s=1.0,
                                epsilon_n=1.0, count_family=NoiseFamily.DISCRETE_LAPLACE,
                                samples=100_000):
    """Empirical KS between ``s | n = n0`` and ``s | n_dp = n0`` (``n`` drawn from its posterior).

    Returns ``(rows, summary)``; ``rows`` has one dict per (n0, replicate),
    ``summary`` the per-n0 mean, standard error and the Kendall tau of the
    means against ``n0``.
    """
    rows = []
    for n0 in n0_grid:
        if math.isinf(epsilon_n):
            post = None
        else:
            post = build_n_posterior(n0, epsilon_n, count_family)
        for r in range(replicates):
            fixed = _simulate_summaries(mechanism, np.full(samples, n0), theta, epsilon_s, rng)
            ns = np.full(samples, n0) if post is None else post.sample(samples, rng)
            mixed = _simulate_summaries(mechanism, ns, theta, epsilon_s, rng)
            ks = ks_distance_1d(standardise(mechanism, fixed, n0, theta),
                                standardise(mechanism, mixed, n0, theta))
            rows.append({"mechanism": mechanism, "n0": n0, "replicate": r, "ks": ks})
    summary = []
    for n0 in n0_grid:
        v = np.array([r["ks"] for r in rows if r["n0"] == n0])
        summary.append({"n0": n0, "mean": float(v.mean()),
                        "se": float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0})
    tau = kendall_tau(list(n0_grid), [s["mean"] for s in summary]) if len(n0_grid) > 1 else math.nan
    return rows, {"per_n0": summary, "kendall_tau": tau}


# --- ABC-type posteriors ------------------------------------------------------


def _hist_tv(a, b, bins):
    ha, _ = np.histogram(a, bins=bins)
    hb, _ = np.histogram(b, bins=bins)
    return 0.5 * float(np.abs(ha / ha.sum() - hb / hb.sum()).sum())


def abc_posterior_check(rectangle, n0, epsilon_n_grid, replicates, rng, epsilon_s=1.0, a=1.0, b=1.0,
                        count_family=NoiseFamily.DISCRETE_LAPLACE, draws=200_000, bins=20):
    """Rejection-sampled ``theta | s in R`` with ``n = n0`` versus ``n_dp = n0``, Bernoulli toy.

    ``rectangle=None`` conditions on nothing. Returns one row per ``epsilon_n``
    with the mean histogram TV over replicates and its standard error.
    """
    edges = np.linspace(0.0, 1.0, bins + 1)

    def draw(ns):
        th = rng.beta(a, b, len(ns))
        s = rng.binomial(ns, th) + rng.laplace(0.0, 1.0 / epsilon_s, len(ns))
        if rectangle is None:
            return th
        keep = (s >= rectangle[0]) & (s <= rectangle[1])
        if keep.mean() < 1e-3:
            raise RectangleTooSmall(f"acceptance rate {keep.mean():.2e} below 1e-3")
        return th[keep]

    rows = []
    for eps_n in epsilon_n_grid:
        post = None if math.isinf(eps_n) else build_n_posterior(n0, eps_n, count_family)
        vals = []
        for _ in range(replicates):
            ref = draw(np.full(draws, n0))
            ns = np.full(draws, n0) if post is None else post.sample(draws, rng)
            vals.append(_hist_tv(ref, draw(ns), edges))
        v = np.array(vals)
        rows.append({"epsilon_n": eps_n, "tv": float(v.mean()),
                     "se": float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0})
    return rows


# --- privacy ratio audit ------------------------------------------------------


def dp_ratio_audit(family, epsilon, tol=1e-9):
    """Max over ``k`` in ``+-ceil(40/eps)`` of ``|log eta(k) - log eta(k+1)|`` for count noise.

    Returns ``(max_log_ratio, passed)`` where ``passed`` means the ratio never
    exceeds ``epsilon + tol``.
    """
    noise = NoiseSpec.from_epsilon(family, epsilon)
    h = window_half_width(epsilon)
    ks = np.arange(-h, h + 1)
    lr = np.abs(noise.log_density(ks) - noise.log_density(ks + 1))
    worst = float(np.max(lr))
    return worst, worst <= epsilon + tol
