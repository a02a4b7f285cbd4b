import csv
import json
import math

import numpy as np
import pytest

from unbounded_dp import cli
from unbounded_dp import experiments as ex
from unbounded_dp.mechanisms import NoiseFamily
from unbounded_dp.models.regression import RegressionParams


def _tiny(kind, **over):
    d = ex.default_config(kind).to_dict()
    d.update(n_true=60, replicates=2)
    d["sampler"].update(iterations=80, burn_in=40)
    d["em"].update(outer_iterations=4, e_step_samples=3, thin=1)
    d["dirichlet"]["realizations"] = 2
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k].update(v)
        else:
            d[k] = v
    return ex.ExperimentConfig.from_dict(d)


@pytest.mark.parametrize("kind", ex.KINDS)
def test_config_round_trip(kind):
    cfg = ex.default_config(kind)
    again = ex.ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert ex.ExperimentConfig.from_dict(again.to_dict()).to_dict() == cfg.to_dict()


def test_infinite_budget_serialised_as_text():
    d = json.loads(ex.default_config("table1").to_json())
    assert d["epsilon_n"][-1] == "Inf"


@pytest.mark.parametrize("patch", [
    {"bogus": 1},
    {"sampler": {"iterations": 10, "burn_in": 5, "extra": 1}},
    {"theory": {"n0": 4}},
])
def test_unknown_keys_rejected(patch):
    d = ex.default_config("table1").to_dict()
    d.update(patch)
    with pytest.raises(ex.ConfigError, match="unknown key"):
        ex.ExperimentConfig.from_dict(d)


@pytest.mark.parametrize("patch", [
    {"kind": "tableX"}, {"replicates": 0}, {"n_true": 0}, {"epsilon_n": [0.0]},
    {"epsilon_n": ["big"]}, {"model": {"name": "nope"}}, {"epsilon_s": []},
])
def test_invalid_values_rejected(patch):
    d = ex.default_config("table1").to_dict()
    d.update(patch)
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig.from_dict(d)


def test_smoke_profile():
    cfg = ex.default_config("table1").smoke()
    assert cfg.n_true == 200 and cfg.replicates == 3
    assert cfg.sampler.iterations <= 400


def test_generate_regression_data():
    X, y = ex.generate_regression_data(n=1, seed=3)
    assert X.shape == (1, 2) and y.shape == (1,)
    X1, y1 = ex.generate_regression_data(n=50, seed=3)
    X2, y2 = ex.generate_regression_data(n=50, seed=3)
    assert np.array_equal(X1, X2) and np.array_equal(y1, y2)
    X, y = ex.generate_regression_data(n=200_000, seed=1)
    assert np.allclose(X.mean(axis=0), [-1, 1], atol=0.01)
    assert np.allclose(np.cov(X.T), np.eye(2), atol=0.02)
    beta, *_ = np.linalg.lstsq(np.column_stack([np.ones(len(y)), X]), y, rcond=None)
    assert np.allclose(beta, [0, -1, 1], atol=0.02)
    with pytest.raises(ex.ConfigError):
        ex.generate_regression_data(n=0)


def test_default_truth():
    cfg = ex.default_config("table1")
    t = ex.truth_for(cfg)
    assert isinstance(t, RegressionParams)
    assert np.array_equal(t.beta, [0, -1, 1]) and t.tau == 1.0


def test_replicate_seeds():
    a = ex.replicate_seed(7, 0, 0)
    assert a == ex.replicate_seed(7, 0, 0)
    assert len({ex.replicate_seed(7, r, g) for r in range(5) for g in range(5)}) == 25


@pytest.mark.parametrize("family", ["continuous_laplace", "discrete_laplace", "discrete_gaussian"])
def test_release_noise_shrinks_with_budget(family):
    cfg = _tiny("table1")
    model = ex.build_model(cfg, 1.0)
    data = ex.generate_data(cfg, model)
    devs = []
    for eps in (0.01, 0.1, 1.0, 10.0, math.inf):
        z = ex._unit_count_noise(np.random.default_rng(5))
        _, n_dp = ex.release(model, data, eps, family, np.random.default_rng(1), z)
        devs.append(abs(n_dp - len(data)))
        if NoiseFamily(family).is_discrete:
            assert float(n_dp).is_integer()
    assert all(a >= b for a, b in zip(devs, devs[1:]))
    assert devs[-1] == 0


def test_summarise_counts_failures():
    rows = [{"g": 1, "v": 1.0, "failed": 0}, {"g": 1, "v": 3.0, "failed": 0}, {"g": 1, "failed": 1}]
    (row,) = ex.summarise(rows, ["g"], ["v"])
    assert row["replicates"] == 3 and row["failed"] == 1
    assert row["v"] == 2.0 and math.isclose(row["se_v"], 1.0)


def test_table1_small(tmp_path):
    cfg = _tiny("table1", epsilon_n=[1.0, "Inf"])
    table, rows = ex.run_table1(cfg, tmp_path)
    assert len(table) == 2 and len(rows) == 4
    inf_row = next(r for r in table if math.isinf(r["epsilon_n"]))
    assert inf_row["Var(n)"] == 0.0
    assert all(r["floor_violations"] == 0 for r in rows)
    assert all("se_E(beta1)" in r for r in table)
    for f in ("replicates.csv", "summary.csv", "config.json"):
        assert (tmp_path / f).exists()
    again, _ = ex.run_table1(cfg)
    assert [r["E(beta1)"] for r in again] == [r["E(beta1)"] for r in table]


def test_table1_keeps_traces(tmp_path):
    cfg = _tiny("table1", epsilon_n=[1.0], replicates=1)
    ex.run_table1(cfg, tmp_path, keep_traces=True)
    assert len(list((tmp_path / "traces").glob("*.csv"))) == 1
    assert len(list((tmp_path / "traces").glob("*.json"))) == 1


def test_mcem_small(tmp_path):
    cfg = _tiny("mcem_table2", epsilon_n=[1.0, "Inf"])
    table, rows = ex.run_mcem_table2(cfg, tmp_path)
    assert len(table) == 2
    assert all("absdiff_beta1" in r for r in rows if not r["failed"])
    bounded = [r for r in rows if math.isinf(r["epsilon_n"])]
    assert all(r["absdiff_beta1"] == 0.0 for r in bounded)
    traces = sorted((tmp_path / "em_traces").glob("*.csv"))
    assert len(traces) == 4
    header = traces[0].read_text().splitlines()[0].split(",")
    assert header[0] == "outer_iteration" and "step_norm" in header


def test_mcem_single_grid_point():
    cfg = _tiny("mcem_table2", epsilon_n=[1.0], replicates=1)
    table, _ = ex.run_mcem_table2(cfg)
    assert len(table) == 1


def test_dirichlet_small(tmp_path):
    cfg = _tiny("dirichlet", epsilon_s=[1.0], epsilon_n=[1.0])
    table, rows = ex.run_dirichlet_study(cfg, tmp_path)
    assert {r["epsilon_n"] for r in table} == {1.0, math.inf}
    assert (tmp_path / "n_draws.csv").exists()
    bounded = next(r for r in table if math.isinf(r["epsilon_n"]))
    assert bounded["sd_n"] == 0.0


def test_theory_checks_empty_grid(tmp_path):
    d = ex.default_config("theory_check").to_dict()
    d["theory"].update(epsilon_grid=[], n0_values=[], coupling_configs=0, ks_n0_grid=[], abc_epsilon_n_grid=[])
    rows = ex.run_theory_checks(ex.ExperimentConfig.from_dict(d), tmp_path)
    assert rows == []
    assert (tmp_path / "checks.csv").read_text().strip() == "check,params,observed,target,verdict"


def test_theory_checks_small(tmp_path):
    d = ex.default_config("theory_check").to_dict()
    d["theory"].update(epsilon_grid=[1.0], n0_values=[60, 80], coupling_configs=2, ks_n0_grid=[],
                       abc_epsilon_n_grid=[])
    rows = ex.run_theory_checks(ex.ExperimentConfig.from_dict(d), tmp_path)
    names = [r["check"] for r in rows]
    assert names.count("expectation_bound") == 4 and names.count("coupling_tv") == 2
    by = {(r["check"], json.loads(r["params"]).get("family")): r["verdict"] for r in rows}
    assert by[("dp_ratio_audit", "discrete_laplace")] == "pass"
    assert by[("dp_ratio_audit", "discrete_gaussian")] == "fail"


def test_single_chain_with_released_block(tmp_path):
    cfg = _tiny("custom", model={"name": "bernoulli", "hyper": {}}, released={"s": [3.0], "n_dp": 6},
                epsilon_n=[1.0])
    tr = ex.run_single_chain(cfg, tmp_path)
    assert tr.iterations == 80
    assert (tmp_path / "trace.csv").exists() and (tmp_path / "trace.json").exists()
    bad = cfg.to_dict()
    bad["released"]["extra"] = 1
    with pytest.raises(ex.ConfigError):
        ex.run_single_chain(ex.ExperimentConfig.from_dict(bad))


# --- CLI -----------------------------------------------------------------------


def _write_cfg(tmp_path, cfg):
    p = tmp_path / "cfg.json"
    p.write_text(cfg.to_json())
    return p


def test_cli_rejects_unknown_key(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"kind": "table1", "unexpected": 1}))
    assert cli.main(["table1", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_cli_rejects_kind_mismatch(tmp_path):
    p = _write_cfg(tmp_path, ex.default_config("dirichlet"))
    assert cli.main(["table1", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_cli_table1(tmp_path, capsys):
    p = _write_cfg(tmp_path, _tiny("table1", epsilon_n=[1.0]))
    assert cli.main(["table1", "--config", str(p), "--out", str(tmp_path / "o"), "--seed", "4"]) == 0
    assert "E(beta1)" in capsys.readouterr().out
    saved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert saved["master_seed"] == 4


def test_cli_privatize(tmp_path, capsys):
    data = tmp_path / "data.csv"
    with open(data, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "y"])
        for row in np.random.default_rng(0).normal(size=(20, 3)):
            w.writerow(row)
    out = tmp_path / "o"
    assert cli.main(["privatize", "--input", str(data), "--out", str(out), "--seed", "1"]) == 0
    rel = json.loads((out / "release.json").read_text())
    assert len(rel["s"]) == 9 and rel["columns"] == ["x1", "x2", "y"]


def test_cli_sample(tmp_path):
    p = _write_cfg(tmp_path, _tiny("custom", model={"name": "bernoulli", "hyper": {}},
                                   released={"s": [2.0], "n_dp": 5}))
    assert cli.main(["sample", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "trace.csv").exists()


@pytest.mark.parametrize("command", ["table1", "mcem", "dirichlet", "theory-check"])
def test_cli_smoke_profiles(command, tmp_path):
    assert cli.main([command, "--smoke", "--out", str(tmp_path)]) == 0
    expected = "checks.csv" if command == "theory-check" else "summary.csv"
    assert (tmp_path / expected).exists()
