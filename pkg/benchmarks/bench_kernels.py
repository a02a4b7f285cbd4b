"""Compare the compiled and pure-Python sweep kernels.

Usage: python benchmarks/bench_kernels.py [--repeats 5]

Times one within-model accept/reject pass over ``n`` records with a
``d``-dimensional Laplace summary, and a short regression chain, on each
available backend. Also checks that both backends return identical results.
"""

import argparse
import time

import numpy as np

from unbounded_dp import kernels
from unbounded_dp.mechanisms import PrivacyBudget, privatize_regression_summaries
from unbounded_dp.models import RegressionModel, RegressionParams
from unbounded_dp.rjmcmc import SamplerConfig, count_noise_for, run_chain


def sweep_inputs(n, d, seed=0):
    rng = np.random.default_rng(seed)
    rec = rng.uniform(-1, 1, (n, d))
    rec_star = rng.uniform(-1, 1, (n, d))
    x = rng.standard_normal((n, 3))
    x_star = rng.standard_normal((n, 3))
    t = rec.sum(axis=0)
    s = t + rng.laplace(0, 9.0, d)
    w = np.full(d, 1 / 9.0)
    log_u = np.log(rng.random(n))
    return x, rec, x_star, rec_star, t, s, w, log_u


def time_sweep(backend, n, d, repeats):
    mod = kernels.get_backend(backend)
    best = np.inf
    result = None
    for _ in range(repeats):
        x, rec, x_star, rec_star, t, s, w, log_u = sweep_inputs(n, d)
        t0 = time.perf_counter()
        out = mod.additive_sweep(x, rec, x_star, rec_star, t, s, w, log_u, n, kernels.LAPLACE)
        best = min(best, time.perf_counter() - t0)
        result = (out, t.copy(), x.copy())
    return best, result


def time_chain(backend, iterations=300):
    model = RegressionModel()
    rng = np.random.default_rng(1)
    theta = RegressionParams([0, -1, 1], 1.0, [-1, 1], np.eye(2))
    D = model.sample_data(theta, 1000, rng)
    s, n_dp = privatize_regression_summaries(D[:, :2], D[:, 2], -5, 5, PrivacyBudget(1.0, 1.0), rng)
    cfg = SamplerConfig(iterations=iterations, burn_in=0, seed=3, backend=backend)
    t0 = time.perf_counter()
    tr = run_chain(model, s, n_dp, cfg, count_noise_for(1.0))
    return time.perf_counter() - t0, tr


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {backends}")
    print(f"{'n':>7} {'d':>3} " + " ".join(f"{b:>12}" for b in backends) + "   speedup  identical")
    for n in (100, 1_000, 10_000):
        d = 9
        times, results = {}, {}
        for b in backends:
            times[b], results[b] = time_sweep(b, n, d, args.repeats)
        same = all(
            results[b][0] == results[backends[0]][0]
            and np.array_equal(results[b][1], results[backends[0]][1])
            and np.array_equal(results[b][2], results[backends[0]][2])
            for b in backends)
        speed = times["python"] / times["cython"] if "cython" in times else 1.0
        print(f"{n:>7} {d:>3} " + " ".join(f"{times[b] * 1e3:>10.3f}ms" for b in backends)
              + f"   {speed:>6.1f}x  {same}")
    chains = {b: time_chain(b) for b in backends}
    same = all(np.array_equal(chains[b][1].theta, chains[backends[0]][1].theta) for b in backends)
    print("regression chain, n=1000, 300 iterations: "
          + ", ".join(f"{b} {chains[b][0]:.2f}s" for b in backends) + f"; identical traces: {same}")


if __name__ == "__main__":
    main()
