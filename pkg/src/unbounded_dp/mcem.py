"""Monte Carlo EM for the maximum-likelihood estimate given ``(s, n_dp)``.

The E-step runs the reversible-jump sampler with the parameters held fixed
and pools complete-data sufficient statistics over the kept draws. The M-step
is either the model's closed-form complete-data MLE or a gradient step on the
unconstrained parameterisation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models.base import NumericBreakdown
from .mechanisms import NoiseSpec
from .rjmcmc import LatentState, Sampler, SamplerConfig


@dataclass
class EmConfig:
    outer_iterations: int = 50
    e_step_samples: int = 200
    e_step_burn_in: int = 0
    thin: int = 10
    tau0: float = 1e-3
    kappa: float = 0.0
    m_step_mode: str = "closed_form"
    convergence_tol: float = 1e-6
    warm_start: bool = True
    burn_in_fraction: float = 0.3
    seed: int = 0
    backend: str | None = None

    def __post_init__(self):
        if self.outer_iterations < 1 or self.e_step_samples < 1 or self.thin < 1:
            raise ValueError("outer_iterations, e_step_samples and thin must be positive")
        if self.e_step_burn_in < 0:
            raise ValueError("e_step_burn_in must be non-negative")
        if not self.tau0 >= 0 or not self.kappa >= 0:
            raise ValueError("learning-rate parameters must be non-negative")
        if self.m_step_mode not in ("closed_form", "gradient"):
            raise ValueError(f"unknown m_step_mode {self.m_step_mode!r}")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in [0, 1)")

    def learning_rate(self, t):
        return self.tau0 / (1.0 + self.kappa * t)


@dataclass
class EStepResult:
    stats: np.ndarray
    n_total: int
    n_draws: np.ndarray
    state: LatentState

    @property
    def m(self):
        return len(self.n_draws)


@dataclass
class EmTrace:
    theta: list = field(default_factory=list)
    q_before: list = field(default_factory=list)
    q_after: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    n_mean: list = field(default_factory=list)
    labels: tuple = ()
    converged: bool = False

    def __len__(self):
        return len(self.theta)

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["outer_iteration", *self.labels, "q_before", "q_after", "step_norm", "n_mean"])
            for t, th in enumerate(self.theta):
                w.writerow([t, *(repr(float(v)) for v in th), repr(float(self.q_before[t])),
                            repr(float(self.q_after[t])), repr(float(self.step_norm[t])),
                            repr(float(self.n_mean[t]))])
        return path


@dataclass
class EmResult:
    theta_hat: object
    theta_hat_flat: np.ndarray
    trace: EmTrace


def _chain_seed(seed, t):
    return int(np.random.SeedSequence(seed, spawn_key=(t,)).generate_state(1)[0])


def e_step(model, s, n_dp, theta, config: EmConfig, count_noise: NoiseSpec | None,
           t: int = 0, state: LatentState | None = None, n_max=None) -> EStepResult:
    """Run the sampler with ``theta`` fixed and pool sufficient statistics over kept draws."""
    m, thin, burn = config.e_step_samples, config.thin, config.e_step_burn_in
    cfg = SamplerConfig(iterations=burn + m * thin, burn_in=burn if burn else 0,
                        seed=_chain_seed(config.seed, t), update_theta=False,
                        record_acceptance=False, backend=config.backend, n_max=n_max)
    sampler = Sampler(model, s, n_dp, count_noise, cfg)
    if state is None:
        state = sampler.init_state(theta=theta)
    else:
        state.theta = theta
    pooled = []
    ns = []

    def collect(it, st):
        if it >= burn and (it - burn + 1) % thin == 0:
            pooled.append(model.sufficient_stats(st.data))
            ns.append(st.n)

    sampler.run(state, on_iteration=collect)
    stats = np.sum(pooled, axis=0)
    return EStepResult(stats, int(np.sum(ns)), np.asarray(ns), sampler.final_state)


def m_step_closed_form(model, est: EStepResult):
    return model.closed_form_mstep(est.stats, est.n_total)


def m_step_gradient(model, theta, est: EStepResult, tau_t):
    """``theta + tau_t * sum_j sum_i grad log p(x_i^(j) | theta)`` on the unconstrained scale."""
    g = model.grad_from_stats(theta, est.stats, est.n_total)
    if not np.all(np.isfinite(g)):
        raise NumericBreakdown("non-finite gradient")
    if tau_t == 0:
        return theta
    return model.from_unconstrained(model.to_unconstrained(theta) + tau_t * g)


def run_mcem(model, s, n_dp, config: EmConfig, count_noise: NoiseSpec | None = None,
             theta0=None, n_max=None) -> EmResult:
    """Iterate E- and M-steps; report the average of iterates after the burn-in fraction.

    ``count_noise=None`` treats ``n_dp`` as the exact count.
    """
    if theta0 is None:
        theta0 = model.initial_theta(s, max(1.0, float(n_dp)), np.random.default_rng(config.seed))
    theta = theta0
    tr = EmTrace(labels=tuple(model.theta_labels))
    state = None
    small = 0
    for t in range(config.outer_iterations):
        try:
            est = e_step(model, s, n_dp, theta, config, count_noise, t,
                         state if config.warm_start else None, n_max)
            q0 = model.complete_loglik(theta, est.stats, est.n_total) / est.m
            if config.m_step_mode == "closed_form":
                new = m_step_closed_form(model, est)
            else:
                new = m_step_gradient(model, theta, est, config.learning_rate(t))
            q1 = model.complete_loglik(new, est.stats, est.n_total) / est.m
        except NumericBreakdown as exc:
            raise NumericBreakdown(f"outer iteration {t}: {exc}") from exc
        state = est.state
        step = float(np.linalg.norm(model.flatten_theta(new) - model.flatten_theta(theta)))
        theta = new
        tr.theta.append(model.flatten_theta(theta))
        tr.q_before.append(q0)
        tr.q_after.append(q1)
        tr.step_norm.append(step)
        tr.n_mean.append(float(est.n_draws.mean()))
        small = small + 1 if step < config.convergence_tol else 0
        if small >= 3:
            tr.converged = True
            break
    thetas = np.asarray(tr.theta)
    start = int(math.floor(config.burn_in_fraction * len(thetas)))
    flat = thetas[start:].mean(axis=0)
    unflatten = getattr(model, "unflatten_theta", None)
    theta_hat = unflatten(flat) if unflatten is not None else flat
    return EmResult(theta_hat, flat, tr)
