"""Reversible-jump data-augmentation sampler for privatized summaries with a private sample size.

Each iteration runs a within-model sweep (parameter update, then one
independence proposal per record accepted on the summary likelihood ratio)
followed by a birth/death move on ``n``. Record additivity keeps both steps
``O(n)`` per iteration via the running statistic ``t``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .mechanisms import NoiseFamily, NoiseSpec, as_family
from .models.base import NumericBreakdown
from .n_posterior import FlatPrior, default_n_max

LOG_Q_UP_FROM_ONE = math.log(0.5)   # 1 -> 2: q(1|2) / q(2|1)
LOG_Q_DOWN_TO_ONE = math.log(2.0)   # 2 -> 1: q(2|1) / q(1|2)


class InvalidInit(ValueError):
    pass


def count_noise_for(epsilon_n, family=NoiseFamily.CONTINUOUS_LAPLACE):
    """Noise law of ``n_dp - n``; ``None`` when ``epsilon_n`` is infinite (``n`` public)."""
    if math.isinf(epsilon_n):
        return None
    return NoiseSpec.from_epsilon(as_family(family), epsilon_n)


def stream(seed, iteration, purpose):
    """Independent generator for one (iteration, purpose) pair.

    Separate streams keep the draws of one step from shifting the draws of
    another, so chains started from different ``n`` stay coupled.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(iteration, purpose))
    return np.random.Generator(np.random.PCG64(ss))


THETA, PROPOSE, UNIFORM, BETWEEN, INIT = range(5)


@dataclass
class SamplerConfig:
    iterations: int = 10_000
    burn_in: int = 5_000
    seed: int = 0
    t_refresh_period: int = 1_000
    n_max: int | None = None
    record_acceptance: bool = True
    update_theta: bool = True
    backend: str | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.t_refresh_period < 1:
            raise ValueError("t_refresh_period must be positive")
        if self.n_max is not None and self.n_max < 1:
            raise ValueError("n_max must be positive")


class LatentState:
    """Parameters plus a capacity-doubled record buffer with logical length ``n``."""

    def __init__(self, theta, x, model, s):
        x = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
        n = x.shape[0]
        if n < 1:
            raise InvalidInit("need at least one record")
        self.theta = theta
        self.n = n
        cap = max(2, n)
        self.x = np.zeros((cap, model.record_dim))
        self.rec = np.zeros((cap, model.summary_dim))
        self.x[:n] = x
        self.rec[:n] = model.record_statistics(x, s)
        self.t = self.rec[:n].sum(axis=0)

    @property
    def capacity(self) -> int:
        return self.x.shape[0]

    def reserve(self, capacity):
        if capacity <= self.capacity:
            return
        x = np.zeros((capacity, self.x.shape[1]))
        rec = np.zeros((capacity, self.rec.shape[1]))
        x[: self.n] = self.x[: self.n]
        rec[: self.n] = self.rec[: self.n]
        self.x, self.rec = x, rec

    def push(self, x_new, rec_new, t_new):
        if self.n == self.capacity:
            self.reserve(2 * self.capacity)
        self.x[self.n] = x_new
        self.rec[self.n] = rec_new
        self.n += 1
        self.t = t_new

    def pop(self, t_new):
        # the slot stays allocated; it is simply past the logical end
        self.n -= 1
        self.t = t_new

    @property
    def data(self):
        return self.x[: self.n]


@dataclass
class Trace:
    """Per-iteration chain output."""

    theta: np.ndarray
    n: np.ndarray
    within_accepted: np.ndarray
    within_proposed: np.ndarray
    within_min_log_alpha: np.ndarray
    between_direction: np.ndarray
    between_from_n: np.ndarray
    between_accepted: np.ndarray
    between_log_alpha: np.ndarray
    theta_labels: tuple
    burn_in: int
    meta: dict = field(default_factory=dict)
    drift: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.n)

    def post_burn_in(self):
        return slice(self.burn_in, None)

    def within_accept_rate(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.within_accepted / np.maximum(self.within_proposed, 1)

    def summary(self):
        sl = self.post_burn_in()
        th = self.theta[sl]
        n = self.n[sl].astype(float)
        out = {}
        for j, lab in enumerate(self.theta_labels):
            out[f"E({lab})"] = float(th[:, j].mean())
            out[f"Var({lab})"] = float(th[:, j].var())
        out["E(n)"] = float(n.mean())
        out["Var(n)"] = float(n.var())
        return out


class Sampler:
    """One chain's fixed ingredients: model, released summaries and count mechanism."""

    INIT_ATTEMPTS = 10_000

    def __init__(self, model, s, n_dp, count_noise: NoiseSpec | None, config: SamplerConfig,
                 prior: FlatPrior | None = None):
        self.model = model
        self.s = np.ascontiguousarray(np.atleast_1d(np.asarray(s, dtype=float)))
        if self.s.shape != (model.summary_dim,):
            raise ValueError(f"summary has shape {self.s.shape}, expected ({model.summary_dim},)")
        self.n_dp = n_dp
        self.count_noise = count_noise
        self.config = config
        eps_n = math.inf if count_noise is None else count_noise.epsilon
        n_max = config.n_max if config.n_max is not None else default_n_max(n_dp, eps_n)
        self.prior = prior if prior is not None else FlatPrior(n_max)
        self.n_max = n_max if self.prior.n_max is None else min(n_max, self.prior.n_max)
        self.kern = kernels.get_backend(config.backend)
        spec = model.kernel_spec()
        self.kind, self.w = (None, None) if spec is None else (spec[0], np.ascontiguousarray(spec[1], dtype=float))

    # -- initialisation --------------------------------------------------
    def initial_n(self):
        return int(min(max(1, round(self.n_dp)), self.n_max))

    def init_state(self, theta=None, n=None):
        rng = stream(self.config.seed, 0, INIT)
        if theta is None:
            theta = self.model.sample_prior(rng)
        n = self.initial_n() if n is None else int(n)
        if n > self.n_max:
            raise InvalidInit(f"initial n={n} exceeds n_max={self.n_max}")
        # redraw until the summary likelihood is positive (matters for degenerate noise)
        for _ in range(self.INIT_ATTEMPTS):
            state = LatentState(theta, self.model.sample_data(theta, n, rng), self.model, self.s)
            if math.isfinite(self.log_g(state.t)):
                break
        else:
            raise InvalidInit(f"no initial dataset with positive summary likelihood in {self.INIT_ATTEMPTS} draws")
        state.reserve(2 * max(1, math.ceil(max(self.n_dp, 1))))
        return state

    # -- pieces ----------------------------------------------------------
    def log_g(self, t):
        v = self.model.summary_loglik(self.s, t)
        return v

    def log_count(self, n):
        if self.count_noise is None:
            return 0.0
        return float(self.count_noise.log_density(self.n_dp - n))

    def within_sweep(self, state, it, log_alpha_out=None):
        """Parameter update then one independence proposal per record.

        Returns ``(accepted, min_log_alpha)``.
        """
        model, cfg = self.model, self.config
        if cfg.update_theta:
            state.theta = model.update_theta(state.theta, state.data, stream(cfg.seed, it, THETA))
        n = state.n
        x_star = np.ascontiguousarray(model.sample_data(state.theta, n, stream(cfg.seed, it, PROPOSE)), dtype=float)
        rec_star = np.ascontiguousarray(model.record_statistics(x_star, self.s), dtype=float)
        with np.errstate(divide="ignore"):
            log_u = np.log(stream(cfg.seed, it, UNIFORM).random(n))
        if self.kind is not None:
            acc, min_la = self.kern.additive_sweep(
                state.x[:n], state.rec[:n], x_star, rec_star, state.t, self.s, self.w,
                log_u, n, self.kind, log_alpha_out)
        else:
            acc, min_la = self._generic_sweep(state, x_star, rec_star, log_u, log_alpha_out)
        return acc, min_la

    def _generic_sweep(self, state, x_star, rec_star, log_u, log_alpha_out=None):
        cur = self.log_g(state.t)
        if not math.isfinite(cur):
            raise NumericBreakdown("current state has zero summary likelihood")
        acc = 0
        min_la = 0.0
        for i in range(state.n):
            t_new = state.t - state.rec[i] + rec_star[i]
            new = self.log_g(t_new)
            la = min(0.0, new - cur)
            min_la = min(min_la, la)
            if log_alpha_out is not None:
                log_alpha_out[i] = la
            if log_u[i] < la:
                acc += 1
                cur = new
                state.t = t_new
                state.rec[i] = rec_star[i]
                state.x[i] = x_star[i]
        return acc, min_la

    def between_move(self, state, it):
        """Birth/death proposal on ``n``.

        Returns ``(direction, accepted, log_alpha)``; ``log_alpha`` is NaN when
        the proposal falls outside ``[1, n_max]`` and is rejected outright.
        """
        if self.count_noise is None:
            return 0, False, math.nan
        rng = stream(self.config.seed, it, BETWEEN)
        n = state.n
        u_dir, u_acc = rng.random(2)
        if n == 1:
            n_star, log_q = 2, LOG_Q_UP_FROM_ONE
        elif u_dir < 0.5:
            n_star, log_q = n + 1, 0.0
        else:
            n_star = n - 1
            log_q = LOG_Q_DOWN_TO_ONE if n_star == 1 else 0.0
        direction = 1 if n_star > n else -1
        if n_star > self.n_max or self.prior.log_prob(n_star) == -math.inf:
            return direction, False, math.nan
        if direction == 1:
            x_new = self.model.sample_data(state.theta, 1, rng)[0]
            rec_new = self.model.record_statistics(x_new[None, :], self.s)[0]
            t_star = state.t + rec_new
        else:
            t_star = state.t - state.rec[n - 1]
        log_r = (self.prior.log_prob(n_star) - self.prior.log_prob(n)
                 + self.log_g(t_star) - self.log_g(state.t)
                 + self.log_count(n_star) - self.log_count(n) + log_q)
        if math.isnan(log_r):
            raise NumericBreakdown(f"NaN between-model ratio at iteration {it}")
        la = min(0.0, log_r)
        accept = math.log(u_acc) < la if u_acc > 0 else True
        if accept:
            if direction == 1:
                state.push(x_new, rec_new, t_star)
            else:
                state.pop(t_star)
        return direction, accept, la

    def refresh(self, state):
        """Recompute ``t`` from the stored records; return the drift."""
        rec = self.model.record_statistics(state.data, self.s)
        fresh = rec.sum(axis=0)
        drift = float(np.max(np.abs(fresh - state.t)))
        state.rec[: state.n] = rec
        state.t = fresh
        return drift

    # -- driver ----------------------------------------------------------
    def run(self, state=None, on_iteration=None) -> Trace:
        cfg = self.config
        if state is None:
            state = self.init_state()
        elif state.n > self.n_max:
            raise InvalidInit(f"initial n={state.n} exceeds n_max={self.n_max}")
        T = cfg.iterations
        labels = self.model.theta_labels
        p = len(self.model.flatten_theta(state.theta))
        tr = Trace(
            theta=np.empty((T, p)), n=np.empty(T, dtype=np.int64),
            within_accepted=np.empty(T, dtype=np.int64), within_proposed=np.empty(T, dtype=np.int64),
            within_min_log_alpha=np.full(T, np.nan), between_direction=np.zeros(T, dtype=np.int8),
            between_from_n=np.empty(T, dtype=np.int64), between_accepted=np.zeros(T, dtype=bool),
            between_log_alpha=np.full(T, np.nan), theta_labels=tuple(labels) or tuple(f"theta{j}" for j in range(p)),
            burn_in=cfg.burn_in,
        )
        for it in range(T):
            n_before = state.n
            acc, min_la = self.within_sweep(state, it)
            tr.within_accepted[it] = acc
            tr.within_proposed[it] = n_before
            if cfg.record_acceptance:
                tr.within_min_log_alpha[it] = min_la
            tr.between_from_n[it] = state.n
            d, a, la = self.between_move(state, it)
            tr.between_direction[it] = d
            tr.between_accepted[it] = a
            if cfg.record_acceptance:
                tr.between_log_alpha[it] = la
            if (it + 1) % cfg.t_refresh_period == 0:
                tr.drift.append((it, self.refresh(state)))
            if not np.all(np.isfinite(state.t)):
                raise NumericBreakdown(f"non-finite running statistic at iteration {it}")
            tr.theta[it] = self.model.flatten_theta(state.theta)
            tr.n[it] = state.n
            if on_iteration is not None:
                on_iteration(it, state)
        tr.meta = {
            "model": self.model.name,
            "config": asdict(cfg),
            "n_dp": float(self.n_dp),
            "epsilon_n": None if self.count_noise is None else self.count_noise.epsilon,
            "count_family": None if self.count_noise is None else self.count_noise.family.value,
            "epsilon_s": self.model.noise.epsilon if self.model.noise is not None else None,
            "summary_family": self.model.noise.family.value if self.model.noise is not None else None,
            "n_max": self.n_max,
            "backend": kernels.backend_name(self.kern),
            "s": self.s.tolist(),
        }
        self.final_state = state
        return tr


def run_chain(model, s, n_dp, config: SamplerConfig, count_noise: NoiseSpec | None = None,
              initial: LatentState | None = None, prior: FlatPrior | None = None) -> Trace:
    """Run one chain; ``count_noise=None`` keeps ``n`` fixed at the released count."""
    return Sampler(model, s, n_dp, count_noise, config, prior).run(initial)


# --- acceptance floor audit ---------------------------------------------------


@dataclass
class AuditReport:
    applicable: bool
    within_floor: float | None
    between_floor: float | None
    within_violations: list
    between_violations: list
    reason: str = ""

    @property
    def ok(self) -> bool:
        return not self.within_violations and not self.between_violations


def acceptance_audit(trace: Trace, epsilon_s: float, epsilon_n: float,
                     pure_dp: bool = True, tol: float = 1e-12) -> AuditReport:
    """Check recorded acceptance probabilities against the pure-DP floors.

    Within-model: ``exp(-2 eps_s)``. Between-model: ``exp(-(eps_s + eps_n))``
    for moves from ``n >= 2``, half that for ``1 -> 2``.
    """
    if not pure_dp:
        return AuditReport(False, None, None, [], [], "floor not applicable: mechanism is not pure epsilon-DP")
    if np.all(np.isnan(trace.within_min_log_alpha)):
        return AuditReport(False, None, None, [], [], "acceptance probabilities were not recorded")
    w_floor = math.exp(-2.0 * epsilon_s)
    within = np.exp(trace.within_min_log_alpha)
    bad_w = np.flatnonzero(within < w_floor - tol).tolist()
    b_floor = 0.0 if math.isinf(epsilon_n) else math.exp(-(epsilon_s + epsilon_n))
    bad_b = []
    if not math.isinf(epsilon_n):
        alpha = np.exp(trace.between_log_alpha)
        floor = np.where(trace.between_from_n == 1, 0.5 * b_floor, b_floor)
        mask = ~np.isnan(alpha)
        bad_b = np.flatnonzero(mask & (alpha < floor - tol)).tolist()
    return AuditReport(True, w_floor, b_floor, bad_w, bad_b)


# --- diagnostics --------------------------------------------------------------


def effective_sample_size(x) -> float:
    """ESS via Geyer's initial positive sequence on the autocorrelations."""
    x = np.asarray(x, dtype=float)
    m = len(x)
    if m < 4:
        return float(m)
    x = x - x.mean()
    var = x @ x / m
    if var == 0:
        return float(m)
    f = np.fft.rfft(x, 2 * m)
    acf = np.fft.irfft(f * np.conj(f))[:m] / (m * var)
    tau = -1.0
    for k in range(0, m - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(m / max(tau, 1e-12))


# --- serialisation ------------------------------------------------------------


_FIXED_COLUMNS = ("n", "within_accepted", "within_proposed", "within_accept_rate", "between_accept",
                  "between_direction", "between_from_n", "within_min_log_alpha", "between_log_alpha")


def write_trace(trace: Trace, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (one row per iteration) and ``<path>.json`` (metadata)."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    meta_path = path.with_suffix(".json")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    rate = trace.within_accept_rate()
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", *trace.theta_labels, *_FIXED_COLUMNS])
        for it in range(trace.iterations):
            w.writerow([it, *(repr(float(v)) for v in trace.theta[it]), int(trace.n[it]),
                        int(trace.within_accepted[it]), int(trace.within_proposed[it]),
                        repr(float(rate[it])), int(trace.between_accepted[it]),
                        int(trace.between_direction[it]), int(trace.between_from_n[it]),
                        repr(float(trace.within_min_log_alpha[it])),
                        repr(float(trace.between_log_alpha[it]))])
    meta = dict(trace.meta)
    meta.update(burn_in=trace.burn_in, theta_labels=list(trace.theta_labels),
                drift=[[int(i), float(d)] for i, d in trace.drift])
    meta_path.write_text(json.dumps(meta, indent=2))
    return csv_path, meta_path


def read_trace(path) -> Trace:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    labels = tuple(meta["theta_labels"])
    with open(path.with_suffix(".csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    body = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(header))
    col = {name: body[:, j] for j, name in enumerate(header)}
    return Trace(
        theta=body[:, 1:1 + len(labels)], n=col["n"].astype(np.int64),
        within_accepted=col["within_accepted"].astype(np.int64),
        within_proposed=col["within_proposed"].astype(np.int64),
        within_min_log_alpha=col["within_min_log_alpha"],
        between_direction=col["between_direction"].astype(np.int8),
        between_from_n=col["between_from_n"].astype(np.int64),
        between_accepted=col["between_accept"].astype(bool),
        between_log_alpha=col["between_log_alpha"], theta_labels=labels,
        burn_in=meta["burn_in"], meta=meta, drift=[tuple(d) for d in meta.get("drift", [])],
    )
