"""Config-driven simulation studies: posterior summaries, MCEM estimates, the Dirichlet study
and the theory checks, with replicate seeding, parallel execution and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mcem import EmConfig, run_mcem
from .mechanisms import (
    NoiseFamily,
    NoiseSpec,
    as_family,
    dirichlet_noise_scale,
    dirichlet_record_statistics,
)
from .models import (
    BernoulliModel,
    DirichletModel,
    DirichletParams,
    GaussianMeanModel,
    RegressionHyper,
    RegressionModel,
    RegressionParams,
)
from .models.base import NumericBreakdown
from .n_posterior import build_n_posterior, expectation_bound, expected_abs_deviation
from . import oracle
from .rjmcmc import SamplerConfig, acceptance_audit, count_noise_for, effective_sample_size, run_chain

log = logging.getLogger(__name__)

KINDS = ("table1", "mcem_table2", "dirichlet", "theory_check", "custom")


class ConfigError(ValueError):
    pass


# --- configuration ------------------------------------------------------------


def _parse_eps(v):
    if isinstance(v, str):
        if v.lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"bad privacy budget {v!r}")
    v = float(v)
    if not v > 0:
        raise ConfigError(f"privacy budgets must be positive, got {v}")
    return v


def _dump_eps(v):
    return "Inf" if math.isinf(v) else v


@dataclass
class SamplerSection:
    iterations: int = 10_000
    burn_in: int = 5_000
    t_refresh_period: int = 1_000
    n_max: int | None = None
    backend: str | None = None


@dataclass
class EmSection:
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


@dataclass
class DirichletSection:
    floor: float = 0.0006
    step: float = 0.15
    realizations: int = 10


@dataclass
class TheorySection:
    epsilon_grid: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    n0_values: list = field(default_factory=lambda: list(range(50, 1001, 50)))
    coupling_configs: int = 20
    ks_n0_grid: list = field(default_factory=lambda: [100, 400, 1600])
    ks_theta: float = 0.95
    ks_samples: int = 100_000
    ks_replicates: int = 10
    abc_epsilon_n_grid: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    abc_n0: int = 8
    abc_rectangle: list | None = field(default_factory=lambda: [2.0, 6.0])
    abc_replicates: int = 5
    abc_draws: int = 200_000


@dataclass
class ModelSection:
    name: str = "regression"
    hyper: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    kind: str = "table1"
    model: ModelSection = field(default_factory=ModelSection)
    truth: dict = field(default_factory=dict)
    n_true: int = 1000
    epsilon_s: list = field(default_factory=lambda: [1.0])
    epsilon_n: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0, math.inf])
    count_family: str = "continuous_laplace"
    replicates: int = 20
    sampler: SamplerSection = field(default_factory=SamplerSection)
    em: EmSection = field(default_factory=EmSection)
    dirichlet: DirichletSection = field(default_factory=DirichletSection)
    theory: TheorySection = field(default_factory=TheorySection)
    released: dict | None = None
    master_seed: int = 2024
    data_seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.n_true < 1:
            raise ConfigError("n_true must be >= 1")
        from .models import REGISTRY

        if self.model.name not in REGISTRY:
            raise ConfigError(f"model {self.model.name!r} is not registered")
        self.epsilon_s = [_parse_eps(v) for v in self.epsilon_s]
        self.epsilon_n = [_parse_eps(v) for v in self.epsilon_n]
        if self.kind != "theory_check" and not (self.epsilon_s and self.epsilon_n):
            raise ConfigError("epsilon_s and epsilon_n grids must be non-empty")
        as_family(self.count_family)

    # parse / serialise
    @classmethod
    def from_dict(cls, d):
        return _build(cls, d, "config")

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["epsilon_s"] = [_dump_eps(v) for v in self.epsilon_s]
        d["epsilon_n"] = [_dump_eps(v) for v in self.epsilon_n]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def smoke(self):
        """Shrunk copy for CI: ``n = 200``, three replicates, short chains."""
        d = self.to_dict()
        d["n_true"] = 200
        d["replicates"] = min(3, self.replicates)
        d["sampler"].update(iterations=min(self.sampler.iterations, 400),
                            burn_in=min(self.sampler.burn_in, 200))
        d["em"].update(outer_iterations=min(self.em.outer_iterations, 20),
                       e_step_samples=min(self.em.e_step_samples, 5), thin=1)
        d["dirichlet"]["realizations"] = min(self.dirichlet.realizations, 2)
        t = d["theory"]
        t.update(n0_values=t["n0_values"][:3], coupling_configs=min(t["coupling_configs"], 3),
                 ks_samples=min(t["ks_samples"], 30_000), ks_replicates=min(t["ks_replicates"], 3),
                 abc_replicates=min(t["abc_replicates"], 2), abc_draws=min(t["abc_draws"], 20_000))
        return ExperimentConfig.from_dict(d)


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        default = names[k].default_factory if names[k].default_factory is not dataclasses.MISSING else None
        proto = default() if default is not None else None
        if dataclasses.is_dataclass(proto):
            kwargs[k] = _build(type(proto), v, f"{where}.{k}")
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


DEFAULT_TRUTH = {
    "regression": {"beta": [0.0, -1.0, 1.0], "tau": 1.0, "mu": [-1.0, 1.0], "Phi": [[1.0, 0.0], [0.0, 1.0]]},
    "dirichlet": {"alpha": [8.0, 1.0, 11.0]},
    "bernoulli": {"theta": 0.3},
    "gaussian_mean": {"theta": 0.5},
}


def default_config(kind) -> ExperimentConfig:
    if kind == "table1":
        return ExperimentConfig(kind="table1")
    if kind == "mcem_table2":
        return ExperimentConfig(kind="mcem_table2", epsilon_n=[0.1, 1.0, 10.0, math.inf], replicates=10)
    if kind == "dirichlet":
        return ExperimentConfig(kind="dirichlet", model=ModelSection("dirichlet"), n_true=6656,
                                epsilon_s=[1.0, 10.0], epsilon_n=[0.01, 0.1, 1.0, 10.0],
                                sampler=SamplerSection(iterations=2000, burn_in=1000),
                                dirichlet=DirichletSection(step=0.03))
    if kind == "theory_check":
        return ExperimentConfig(kind="theory_check", model=ModelSection("bernoulli"))
    if kind == "custom":
        return ExperimentConfig(kind="custom", replicates=1, epsilon_n=[1.0])
    raise ConfigError(f"unknown kind {kind!r}")


def replicate_seed(master_seed, replicate, grid=0) -> int:
    """Seed for one (replicate, grid point): ``SeedSequence(master, spawn_key=(grid, replicate))``."""
    return int(np.random.SeedSequence(master_seed, spawn_key=(grid, replicate)).generate_state(1)[0])


# --- models and data ----------------------------------------------------------


def build_model(cfg: ExperimentConfig, epsilon_s):
    name, hyper = cfg.model.name, dict(cfg.model.hyper)
    if name == "regression":
        return RegressionModel(RegressionHyper(**hyper), epsilon_s)
    if name == "dirichlet":
        hyper.setdefault("floor", cfg.dirichlet.floor)
        hyper.setdefault("step", cfg.dirichlet.step)
        return DirichletModel(epsilon_s=epsilon_s, **hyper)
    if name == "bernoulli":
        fam = hyper.pop("family", NoiseFamily.DISCRETE_LAPLACE)
        return BernoulliModel.with_epsilon(epsilon_s, fam, **hyper)
    if name == "gaussian_mean":
        return GaussianMeanModel(epsilon_s=epsilon_s, **hyper)
    raise ConfigError(f"model {name!r} cannot be used in a chain experiment")


def truth_for(cfg):
    t = dict(DEFAULT_TRUTH.get(cfg.model.name, {}))
    t.update(cfg.truth)
    name = cfg.model.name
    if name == "regression":
        return RegressionParams(t["beta"], t["tau"], t["mu"], t["Phi"])
    if name == "dirichlet":
        return DirichletParams(t["alpha"])
    return float(t["theta"])


def generate_regression_data(params: RegressionParams | None = None, n=1000, seed=0, hyper=None):
    """``(X, y)`` drawn from the regression data model; deterministic in ``seed``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    params = params or RegressionParams([0.0, -1.0, 1.0], 1.0, [-1.0, 1.0], np.eye(2))
    model = RegressionModel(hyper or RegressionHyper(p=len(params.mu)))
    D = model.sample_data(params, n, np.random.default_rng(seed))
    return D[:, :-1], D[:, -1]


def generate_data(cfg, model, n=None):
    n = cfg.n_true if n is None else n
    rng = np.random.default_rng(cfg.data_seed)
    return model.sample_data(truth_for(cfg), n, rng)


def release(model, data, eps_n, count_family, rng_s, z_count):
    """Privatise a dataset: summary noise from ``rng_s``; ``n_dp = n + z_count / eps_n``.

    ``z_count`` is a unit-scale draw shared across the ``eps_n`` grid so the
    released counts are coupled across budgets.
    """
    t = model.record_statistics(data).sum(axis=0)
    s = t + np.asarray(model.noise.sample(t.shape, rng_s))
    n = len(data)
    if math.isinf(eps_n):
        return s, n
    fam = as_family(count_family)
    if fam.is_discrete:
        return s, n + int(z_count[fam.value](eps_n))
    return s, n + z_count[fam.value](eps_n)


def _unit_count_noise(rng):
    """Draw once per replicate; returns callables mapping ``eps_n`` to a noise value."""
    lap = rng.laplace()
    u = rng.random()
    out = {
        NoiseFamily.CONTINUOUS_LAPLACE.value: lambda e: lap / e,
        NoiseFamily.DISCRETE_LAPLACE.value: lambda e: _discrete_quantile(NoiseFamily.DISCRETE_LAPLACE, e, u),
        NoiseFamily.DISCRETE_GAUSSIAN.value: lambda e: _discrete_quantile(NoiseFamily.DISCRETE_GAUSSIAN, e, u),
    }
    return out


def _discrete_quantile(family, eps, u):
    from .mechanisms import _discrete_table

    ks, cdf, _ = _discrete_table(family, float(eps))
    return int(ks[min(np.searchsorted(cdf, u, side="right"), len(ks) - 1)])


# --- output helpers -----------------------------------------------------------


def write_rows(path, rows, columns=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in columns})
    return path


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "Inf" if v > 0 else "-Inf"
        return repr(v)
    return v


def _map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def summarise(rows, keys, value_cols):
    """Mean and Monte Carlo standard error of each column per grid point; failed runs counted."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for g, rs in groups.items():
        ok = [r for r in rs if not r.get("failed")]
        row = dict(zip(keys, g))
        row["replicates"] = len(rs)
        row["failed"] = len(rs) - len(ok)
        for c in value_cols:
            v = np.array([r[c] for r in ok if c in r], dtype=float)
            row[c] = float(v.mean()) if v.size else math.nan
            row[f"se_{c}"] = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
            row[f"sd_{c}"] = float(v.std(ddof=1)) if v.size > 1 else math.nan
        out.append(row)
    return out


# --- posterior summaries (regression table) -----------------------------------


def _chain_task(task):
    cfg = ExperimentConfig.from_dict(task["config"])
    eps_s, eps_n, rep, gi = task["epsilon_s"], task["epsilon_n"], task["replicate"], task["grid"]
    model = build_model(cfg, eps_s)
    data = np.asarray(task["data"])
    rs = np.random.default_rng(replicate_seed(cfg.master_seed, rep, 10_000 + task["s_grid"]))
    z = _unit_count_noise(np.random.default_rng(replicate_seed(cfg.master_seed, rep, 20_000)))
    s, n_dp = release(model, data, eps_n, cfg.count_family, rs, z)
    sc = cfg.sampler
    scfg = SamplerConfig(iterations=sc.iterations, burn_in=sc.burn_in, t_refresh_period=sc.t_refresh_period,
                         n_max=sc.n_max, backend=sc.backend, seed=replicate_seed(cfg.master_seed, rep, gi))
    row = {"epsilon_s": eps_s, "epsilon_n": eps_n, "replicate": rep, "n_dp": float(n_dp)}
    try:
        tr = run_chain(model, s, n_dp, scfg, count_noise_for(eps_n, cfg.count_family))
    except (NumericBreakdown, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("replicate %d at (%s, %s) failed: %s", rep, eps_s, eps_n, exc)
        row.update(failed=1, error=str(exc))
        return row, None
    row.update(tr.summary())
    sl = tr.post_burn_in()
    row["ess_n"] = effective_sample_size(tr.n[sl])
    row[f"ess_{tr.theta_labels[1 if len(tr.theta_labels) > 1 else 0]}"] = effective_sample_size(
        tr.theta[sl, 1 if tr.theta.shape[1] > 1 else 0])
    row["within_accept_rate"] = float(tr.within_accepted.sum() / max(tr.within_proposed.sum(), 1))
    row["between_accept_rate"] = float(tr.between_accepted[tr.between_direction != 0].mean()) \
        if np.any(tr.between_direction != 0) else math.nan
    pure = model.noise.family.is_pure_dp and as_family(cfg.count_family).is_pure_dp
    audit = acceptance_audit(tr, eps_s, eps_n, pure_dp=pure)
    row["floor_violations"] = len(audit.within_violations) + len(audit.between_violations)
    row["max_drift"] = max((d for _, d in tr.drift), default=0.0)
    row["failed"] = 0
    return row, (tr if task.get("keep_trace") else None)


def _grid(cfg):
    return [(i, j, es, en) for i, es in enumerate(cfg.epsilon_s) for j, en in enumerate(cfg.epsilon_n)]


def run_table1(cfg: ExperimentConfig, out=None, workers=1, keep_traces=False):
    """Posterior means and variances per privacy-budget cell, averaged over replicates.

    One dataset is shared by all replicates; each replicate draws fresh
    privacy noise and runs a fresh chain.
    """
    model0 = build_model(cfg, cfg.epsilon_s[0])
    data = generate_data(cfg, model0)
    tasks = []
    for i, j, es, en in _grid(cfg):
        for rep in range(cfg.replicates):
            tasks.append({"config": cfg.to_dict(), "epsilon_s": es, "epsilon_n": en, "replicate": rep,
                          "grid": i * len(cfg.epsilon_n) + j, "s_grid": i, "data": data.tolist(),
                          "keep_trace": keep_traces})
    results = _map(_chain_task, tasks, workers)
    rows = [r for r, _ in results]
    traces = [t for _, t in results]
    labels = list(model0.theta_labels)
    cols = [f"{p}({l})" for l in labels for p in ("E", "Var")] + ["E(n)", "Var(n)", "ess_n",
                                                                    "within_accept_rate", "floor_violations"]
    table = summarise(rows, ["epsilon_s", "epsilon_n"], cols)
    if out is not None:
        out = Path(out)
        write_rows(out / "replicates.csv", rows)
        write_rows(out / "summary.csv", table)
        (out / "config.json").write_text(cfg.to_json())
        if keep_traces:
            from .rjmcmc import write_trace

            for r, t in zip(rows, traces):
                if t is not None:
                    write_trace(t, out / "traces" / f"es{r['epsilon_s']}_en{_dump_eps(r['epsilon_n'])}_r{r['replicate']}")
    return table, rows


# --- MCEM table ----------------------------------------------------------------


def _em_task(task):
    cfg = ExperimentConfig.from_dict(task["config"])
    eps_s, eps_n, rep = task["epsilon_s"], task["epsilon_n"], task["replicate"]
    model = build_model(cfg, eps_s)
    data = np.asarray(task["data"])
    rs = np.random.default_rng(replicate_seed(cfg.master_seed, rep, 10_000 + task["s_grid"]))
    z = _unit_count_noise(np.random.default_rng(replicate_seed(cfg.master_seed, rep, 20_000)))
    s, n_dp = release(model, data, eps_n, cfg.count_family, rs, z)
    emc = EmConfig(**dataclasses.asdict(cfg.em), seed=replicate_seed(cfg.master_seed, rep, 30_000),
                   backend=cfg.sampler.backend)
    row = {"epsilon_s": eps_s, "epsilon_n": eps_n, "replicate": rep, "n_dp": float(n_dp)}
    try:
        res = run_mcem(model, s, n_dp, emc, count_noise_for(eps_n, cfg.count_family))
    except (NumericBreakdown, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("MCEM replicate %d at (%s, %s) failed: %s", rep, eps_s, eps_n, exc)
        row.update(failed=1, error=str(exc))
        return row, None
    for lab, v in zip(model.theta_labels, res.theta_hat_flat):
        row[lab] = float(v)
    row["outer_iterations"] = len(res.trace)
    row["converged"] = int(res.trace.converged)
    row["failed"] = 0
    return row, res.trace


def run_mcem_table2(cfg: ExperimentConfig, out=None, workers=1):
    """MCEM estimates per privacy-budget cell; with ``Inf`` in the grid, per-replicate
    absolute differences from the bounded estimate are added."""
    model0 = build_model(cfg, cfg.epsilon_s[0])
    data = generate_data(cfg, model0)
    tasks = [{"config": cfg.to_dict(), "epsilon_s": es, "epsilon_n": en, "replicate": rep,
              "s_grid": i, "data": data.tolist()}
             for i, j, es, en in _grid(cfg) for rep in range(cfg.replicates)]
    results = _map(_em_task, tasks, workers)
    rows = [r for r, _ in results]
    labels = list(model0.theta_labels)
    bounded = {(r["epsilon_s"], r["replicate"]): r for r in rows
               if math.isinf(r["epsilon_n"]) and not r.get("failed")}
    diff_cols = []
    for r in rows:
        ref = bounded.get((r["epsilon_s"], r["replicate"]))
        if ref is None or r.get("failed"):
            continue
        for lab in labels:
            r[f"absdiff_{lab}"] = abs(r[lab] - ref[lab])
    if bounded:
        diff_cols = [f"absdiff_{lab}" for lab in labels]
    table = summarise(rows, ["epsilon_s", "epsilon_n"], labels + diff_cols)
    if out is not None:
        out = Path(out)
        write_rows(out / "replicates.csv", rows)
        write_rows(out / "summary.csv", table)
        (out / "config.json").write_text(cfg.to_json())
        for r, tr in results:
            if tr is not None:
                tr.write_csv(out / "em_traces" / f"es{r['epsilon_s']}_en{_dump_eps(r['epsilon_n'])}_r{r['replicate']}.csv")
    return table, rows


# --- Dirichlet study ------------------------------------------------------------


def _dirichlet_task(task):
    cfg = ExperimentConfig.from_dict(task["config"])
    eps_s, eps_n, rep = task["epsilon_s"], task["epsilon_n"], task["replicate"]
    model = build_model(cfg, eps_s)
    s = np.asarray(task["s"])
    n = task["n"]
    row = {"epsilon_s": eps_s, "epsilon_n": eps_n, "replicate": rep}
    if math.isinf(eps_n):
        n_dp = n
    else:
        rng = np.random.default_rng(replicate_seed(cfg.master_seed, rep, 40_000 + task["grid"]))
        n_dp = n + rng.laplace(0.0, 1.0 / eps_n)
    row["n_dp"] = float(n_dp)
    sc = cfg.sampler
    scfg = SamplerConfig(iterations=sc.iterations, burn_in=sc.burn_in, t_refresh_period=sc.t_refresh_period,
                         n_max=sc.n_max, backend=sc.backend,
                         seed=replicate_seed(cfg.master_seed, rep, task["grid"]))
    try:
        tr = run_chain(model, s, n_dp, scfg, count_noise_for(eps_n, NoiseFamily.CONTINUOUS_LAPLACE))
    except (NumericBreakdown, FloatingPointError) as exc:
        row.update(failed=1, error=str(exc))
        return row, []
    sl = tr.post_burn_in()
    for j, lab in enumerate(tr.theta_labels):
        row[f"mean_{lab}"] = float(tr.theta[sl, j].mean())
        row[f"sd_{lab}"] = float(tr.theta[sl, j].std())
    row["mean_n"] = float(tr.n[sl].mean())
    row["sd_n"] = float(tr.n[sl].std())
    row["failed"] = 0
    return row, tr.n[sl].tolist()


def run_dirichlet_study(cfg: ExperimentConfig, out=None, workers=1):
    """Posterior spread of ``alpha`` and ``n`` per budget cell, plus the bounded reference."""
    tasks = []
    model0 = build_model(cfg, cfg.epsilon_s[0])
    data = generate_data(cfg, model0)
    eps_n_grid = list(cfg.epsilon_n) + ([math.inf] if math.inf not in cfg.epsilon_n else [])
    for i, es in enumerate(cfg.epsilon_s):
        rng = np.random.default_rng(replicate_seed(cfg.master_seed, 0, 50_000 + i))
        t = dirichlet_record_statistics(data, cfg.dirichlet.floor).sum(axis=0)
        s = t + rng.laplace(0.0, dirichlet_noise_scale(cfg.dirichlet.floor, es), 3)
        for j, en in enumerate(eps_n_grid):
            reps = 1 if math.isinf(en) else cfg.dirichlet.realizations
            for rep in range(reps):
                tasks.append({"config": cfg.to_dict(), "epsilon_s": es, "epsilon_n": en, "replicate": rep,
                              "grid": i * len(eps_n_grid) + j, "s": s.tolist(), "n": len(data)})
    results = _map(_dirichlet_task, tasks, workers)
    rows = [r for r, _ in results]
    labels = list(model0.theta_labels)
    cols = [f"sd_{l}" for l in labels] + [f"mean_{l}" for l in labels] + ["sd_n", "mean_n"]
    table = summarise(rows, ["epsilon_s", "epsilon_n"], cols)
    n_rows = [{"epsilon_s": r["epsilon_s"], "epsilon_n": r["epsilon_n"], "replicate": r["replicate"], "n": v}
              for r, ns in results for v in ns[:: max(1, len(ns) // 200)]]
    if out is not None:
        out = Path(out)
        write_rows(out / "replicates.csv", rows)
        write_rows(out / "summary.csv", table)
        write_rows(out / "n_draws.csv", n_rows, ["epsilon_s", "epsilon_n", "replicate", "n"])
        (out / "config.json").write_text(cfg.to_json())
    return table, rows


# --- theory checks --------------------------------------------------------------


def run_theory_checks(cfg: ExperimentConfig, out=None, workers=1):
    """One row per check: name, parameters, observed value, bound/target and verdict."""
    th = cfg.theory
    rng = np.random.default_rng(cfg.master_seed)
    rows = []

    def add(check, params, observed, target, ok):
        rows.append({"check": check, "params": json.dumps(params), "observed": float(observed),
                     "target": float(target), "verdict": "pass" if ok else "fail"})

    for fam in (NoiseFamily.DISCRETE_LAPLACE, NoiseFamily.DISCRETE_GAUSSIAN):
        for eps in th.epsilon_grid:
            bound = expectation_bound(fam, eps)
            for n0 in th.n0_values:
                v = expected_abs_deviation(build_n_posterior(n0, eps, fam), n0)
                add("expectation_bound", {"family": fam.value, "epsilon": eps, "n0": n0}, v, bound,
                    v <= bound + 1e-9)
    for c in range(th.coupling_configs):
        lo = int(rng.integers(1, 6))
        hi = lo + int(rng.integers(0, 6))
        theta = float(rng.uniform(0.05, 0.95))
        es, en = float(rng.uniform(0.3, 3.0)), float(rng.uniform(0.3, 3.0))
        tv, bound = oracle.coupling_tv_check(lo, hi, theta, es, en)
        add("coupling_tv", {"n_range": [lo, hi], "theta": theta, "epsilon_s": es, "epsilon_n": en},
            tv, bound, tv <= bound + 1e-10)
    for eps in th.epsilon_grid if th.n0_values else []:
        n0 = th.n0_values[0]
        tv, bound = oracle.tv_privacy_check(n0, 0.5, 1.0, eps)
        add("tv_privacy", {"n0": n0, "epsilon_s": 1.0, "epsilon_n": eps}, tv, bound, tv <= bound + 1e-10)
    if th.ks_n0_grid:
        _, summ = oracle.ks_convergence_check(
            "laplace_sum", th.ks_theta, th.ks_n0_grid, th.ks_replicates, rng,
            samples=th.ks_samples)
        for s in summ["per_n0"]:
            add("ks_convergence_mean", {"n0": s["n0"], "se": s["se"]}, s["mean"], math.nan, True)
        add("ks_convergence_kendall_tau", {"n0_grid": th.ks_n0_grid}, summ["kendall_tau"], -1.0,
            summ["kendall_tau"] == -1.0)
    if th.abc_epsilon_n_grid:
        abc = oracle.abc_posterior_check(th.abc_rectangle, th.abc_n0, th.abc_epsilon_n_grid,
                                         th.abc_replicates, rng, draws=th.abc_draws)
        for r in abc:
            add("abc_tv", {"epsilon_n": r["epsilon_n"], "se": r["se"]}, r["tv"], math.nan, True)
        tau = oracle.kendall_tau(th.abc_epsilon_n_grid, [r["tv"] for r in abc])
        add("abc_kendall_tau", {"epsilon_n_grid": th.abc_epsilon_n_grid}, tau, 0.0, tau <= 0.0)
    for fam in (NoiseFamily.DISCRETE_LAPLACE, NoiseFamily.DISCRETE_GAUSSIAN):
        for eps in th.epsilon_grid:
            worst, ok = oracle.dp_ratio_audit(fam, eps)
            add("dp_ratio_audit", {"family": fam.value, "epsilon": eps}, worst, eps, ok)
    if out is not None:
        out = Path(out)
        write_rows(out / "checks.csv", rows, ["check", "params", "observed", "target", "verdict"])
        (out / "config.json").write_text(cfg.to_json())
    return rows


# --- single chain and one-shot release -------------------------------------------


def load_released(cfg, model):
    """``(s, n_dp)`` from the config's ``released`` block, or simulated from ``truth``."""
    if cfg.released is not None:
        unknown = set(cfg.released) - {"s", "n_dp"}
        if unknown:
            raise ConfigError(f"unknown key(s) in config.released: {sorted(unknown)}")
        return np.asarray(cfg.released["s"], dtype=float), float(cfg.released["n_dp"])
    data = generate_data(cfg, model)
    rs = np.random.default_rng(replicate_seed(cfg.master_seed, 0, 10_000))
    z = _unit_count_noise(np.random.default_rng(replicate_seed(cfg.master_seed, 0, 20_000)))
    return release(model, data, cfg.epsilon_n[0], cfg.count_family, rs, z)


def run_single_chain(cfg: ExperimentConfig, out=None, seed=None):
    from .rjmcmc import write_trace

    model = build_model(cfg, cfg.epsilon_s[0])
    s, n_dp = load_released(cfg, model)
    sc = cfg.sampler
    scfg = SamplerConfig(iterations=sc.iterations, burn_in=sc.burn_in, t_refresh_period=sc.t_refresh_period,
                         n_max=sc.n_max, backend=sc.backend,
                         seed=cfg.master_seed if seed is None else seed)
    tr = run_chain(model, s, n_dp, scfg, count_noise_for(cfg.epsilon_n[0], cfg.count_family))
    if out is not None:
        write_trace(tr, Path(out) / "trace")
    return tr


def privatize_csv(cfg: ExperimentConfig, path, rng):
    """Apply the configured mechanisms to a CSV dataset (header row, numeric columns)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError("input CSV needs a header and at least one row")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    model = build_model(cfg, cfg.epsilon_s[0])
    if data.shape[1] != model.record_dim:
        raise ConfigError(f"model {model.name} expects {model.record_dim} columns, got {data.shape[1]}")
    t = model.record_statistics(data).sum(axis=0)
    s = t + np.asarray(model.noise.sample(t.shape, rng))
    eps_n = cfg.epsilon_n[0]
    if math.isinf(eps_n):
        n_dp = len(data)
    else:
        noise = NoiseSpec.from_epsilon(cfg.count_family, eps_n)
        z = noise.sample(None, rng)
        n_dp = len(data) + (int(z) if noise.family.is_discrete else float(z))
    return {"model": model.name, "columns": rows[0], "epsilon_s": cfg.epsilon_s[0],
            "epsilon_n": _dump_eps(eps_n), "count_family": cfg.count_family,
            "s": [float(v) for v in s], "n_dp": n_dp}


def workers_default():
    return max(1, (os.cpu_count() or 1))


__all__ = [
    "ExperimentConfig", "ConfigError", "default_config", "replicate_seed", "generate_regression_data",
    "run_table1", "run_mcem_table2", "run_dirichlet_study", "run_theory_checks", "run_single_chain",
    "privatize_csv",
]
