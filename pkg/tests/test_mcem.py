import math

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import binom

from unbounded_dp.mcem import EmConfig, e_step, m_step_closed_form, m_step_gradient, run_mcem
from unbounded_dp.mechanisms import NoiseFamily, NoiseSpec
from unbounded_dp.models import BernoulliModel, GaussianMeanModel, RegressionModel
from unbounded_dp.models.base import NumericBreakdown
from unbounded_dp.models.regression import RegressionParams
from unbounded_dp.rjmcmc import effective_sample_size

DLAP = NoiseFamily.DISCRETE_LAPLACE


def test_config_validation():
    with pytest.raises(ValueError):
        EmConfig(m_step_mode="newton")
    with pytest.raises(ValueError):
        EmConfig(convergence_tol=0.0)
    with pytest.raises(ValueError):
        EmConfig(burn_in_fraction=1.0)
    cfg = EmConfig(tau0=0.1, kappa=0.5)
    assert cfg.learning_rate(0) == 0.1
    assert math.isclose(cfg.learning_rate(2), 0.05)


def test_bounded_e_step_keeps_n():
    model = BernoulliModel.with_epsilon(1.0)
    est = e_step(model, [3.0], 6, 0.4, EmConfig(e_step_samples=50, thin=1), None)
    assert np.all(est.n_draws == 6) and est.n_total == 300 and est.m == 50


def test_warm_start_uses_previous_state():
    model = BernoulliModel.with_epsilon(1.0)
    noise = NoiseSpec.from_epsilon(DLAP, 1.0)
    cfg = EmConfig(e_step_samples=1, thin=1)
    first = e_step(model, [3.0], 5, 0.4, cfg, noise)
    first.state.n = 1
    first.state.x[0] = 1.0
    first.state.t = np.array([1.0])
    nxt = e_step(model, [3.0], 5, 0.4, cfg, noise, t=1, state=first.state)
    assert nxt.n_draws[0] <= 2


def _conditional_mean_k(s, n_dp, theta, eps_s, eps_n, n_hi):
    rows = []
    for n in range(1, n_hi + 1):
        for k in range(n + 1):
            lw = (binom.logpmf(k, n, theta) + math.log(math.tanh(eps_s / 2)) - eps_s * abs(s - k)
                  - eps_n * abs(n_dp - n))
            rows.append((k, lw))
    k, lw = np.array(rows).T
    p = np.exp(lw - logsumexp(lw))
    return float(p @ k)


def test_e_step_matches_conditional_oracle():
    model = BernoulliModel.with_epsilon(1.0)
    noise = NoiseSpec.from_epsilon(DLAP, 1.0)
    cfg = EmConfig(e_step_samples=20_000, thin=1, e_step_burn_in=200, seed=4)
    pooled = []

    class Recording(BernoulliModel):
        def sufficient_stats(self, x):
            out = super().sufficient_stats(x)
            pooled.append(out[0])
            return out

    rec = Recording(model.noise)
    e_step(rec, [3.0], 4, 0.35, cfg, noise, n_max=8)
    k = np.array(pooled)
    target = _conditional_mean_k(3.0, 4, 0.35, 1.0, 1.0, 8)
    se = k.std() / math.sqrt(effective_sample_size(k))
    assert abs(k.mean() - target) < 3 * se


def test_gradient_zero_step_and_stationarity(rng):
    rm = RegressionModel()
    truth = RegressionParams(np.array([0.1, -0.9, 0.8]), 1.0, np.zeros(2), np.eye(2))
    x = rm.sample_data(truth, 100, rng)
    est = type("E", (), {})()
    est.stats, est.n_total, est.m = rm.sufficient_stats(x), 100, 1
    th = rm.prior_mean()
    assert m_step_gradient(rm, th, est, 0.0) is th
    mle = m_step_closed_form(rm, est)
    step = m_step_gradient(rm, mle, est, 1e-3)
    assert np.linalg.norm(rm.flatten_theta(step) - rm.flatten_theta(mle)) < 1e-6


def test_gradient_fixed_point_matches_closed_form(rng):
    rm = RegressionModel()
    truth = RegressionParams(np.array([0.1, -0.9, 0.8]), 1.0, np.array([0.2, 0.1]), np.eye(2))
    x = rm.sample_data(truth, 100, rng)
    est = type("E", (), {})()
    est.stats, est.n_total = rm.sufficient_stats(x), 100
    th = rm.prior_mean()
    for _ in range(8000):
        th = m_step_gradient(rm, th, est, 2e-3)
    mle = m_step_closed_form(rm, est)
    assert np.max(np.abs(rm.flatten_theta(th) - rm.flatten_theta(mle))) < 1e-6


def test_gaussian_single_datum_step():
    gm = GaussianMeanModel()
    est = type("E", (), {})()
    est.stats, est.n_total = gm.sufficient_stats(np.array([[2.5]])), 1
    assert math.isclose(m_step_gradient(gm, 0.5, est, 0.1), 0.5 + 0.1 * (2.5 - 0.5))


def test_non_finite_gradient_raises():
    gm = GaussianMeanModel()
    est = type("E", (), {})()
    est.stats, est.n_total = np.array([np.nan, 0.0]), 1
    with pytest.raises(NumericBreakdown):
        m_step_gradient(gm, 0.0, est, 0.1)


def test_single_sample_noise_free_is_mle():
    model = BernoulliModel(None)
    cfg = EmConfig(outer_iterations=1, e_step_samples=1, thin=1)
    res = run_mcem(model, [3.0], 7, cfg, None, theta0=0.5)
    assert res.theta_hat == 3 / 7


def test_noise_free_converges_to_mle():
    model = BernoulliModel(None)
    res = run_mcem(model, [3.0], 7, EmConfig(outer_iterations=50, e_step_samples=3, thin=1), None, theta0=0.5)
    assert res.trace.converged and len(res.trace) == 4
    assert math.isclose(res.theta_hat, 3 / 7)


def test_closed_form_is_monotone_on_fixed_samples(rng):
    rm = RegressionModel()
    truth = RegressionParams(np.array([0.1, -0.9, 0.8]), 1.0, np.zeros(2), np.eye(2))
    x = rm.sample_data(truth, 300, rng)
    s = rm.simulate_summary(x, rng)
    res = run_mcem(rm, s, 300, EmConfig(outer_iterations=8, e_step_samples=5, thin=2, seed=1),
                   NoiseSpec.from_epsilon(NoiseFamily.CONTINUOUS_LAPLACE, 1.0))
    q0, q1 = np.array(res.trace.q_before), np.array(res.trace.q_after)
    assert np.all(q1 >= q0 - 1e-9)
    assert len(res.theta_hat_flat) == len(rm.theta_labels)


def test_seed_determinism():
    model = BernoulliModel.with_epsilon(1.0)
    noise = NoiseSpec.from_epsilon(DLAP, 1.0)
    cfg = EmConfig(outer_iterations=10, e_step_samples=20, thin=2, seed=8)
    a = run_mcem(model, [4.0], 9, cfg, noise)
    b = run_mcem(model, [4.0], 9, cfg, noise)
    assert np.array_equal(np.array(a.trace.theta), np.array(b.trace.theta))
    assert a.theta_hat == b.theta_hat


def _exact_fixed_n_em(s, n, eps, theta, iterations=500):
    # E[k | s, n, theta] by summation, then theta <- E[k] / n
    k = np.arange(n + 1)
    for _ in range(iterations):
        lw = binom.logpmf(k, n, theta) - eps * np.abs(s - k)
        p = np.exp(lw - logsumexp(lw))
        theta = float(p @ k) / n
    return theta


def test_bounded_reduction_matches_exact_em():
    model = BernoulliModel.with_epsilon(1.0)
    s, n = 6.0, 10
    target = _exact_fixed_n_em(s, n, 1.0, 0.5)
    cfg = EmConfig(outer_iterations=60, e_step_samples=400, thin=1, seed=2, convergence_tol=1e-12)
    res = run_mcem(model, [s], n, cfg, None, theta0=0.5)
    assert abs(res.theta_hat - target) < 0.01


def test_burn_in_fraction_average():
    model = BernoulliModel(None)
    cfg = EmConfig(outer_iterations=10, e_step_samples=1, thin=1, burn_in_fraction=0.3, convergence_tol=1e-300)
    res = run_mcem(model, [2.0], 4, cfg, None, theta0=0.9)
    th = np.array(res.trace.theta)[:, 0]
    assert math.isclose(res.theta_hat_flat[0], th[3:].mean())


def test_breakdown_reports_outer_iteration(monkeypatch):
    model = BernoulliModel.with_epsilon(1.0)

    def broken(stats, n_total):
        raise NumericBreakdown("singular")

    monkeypatch.setattr(model, "closed_form_mstep", broken)
    with pytest.raises(NumericBreakdown, match="outer iteration 0"):
        run_mcem(model, [3.0], 5, EmConfig(outer_iterations=2, e_step_samples=2, thin=1), None)


def test_em_trace_csv(tmp_path):
    model = BernoulliModel.with_epsilon(1.0)
    res = run_mcem(model, [3.0], 5, EmConfig(outer_iterations=4, e_step_samples=5, thin=1), None)
    path = res.trace.write_csv(tmp_path / "em.csv")
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == ["outer_iteration", "theta", "q_before", "q_after", "step_norm", "n_mean"]
    assert len(lines) == 1 + len(res.trace)
