"""Command-line entry point: ``unbounded-dp <subcommand> [--config PATH] [--out DIR] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex

SUBCOMMANDS = {
    "table1": "table1",
    "mcem": "mcem_table2",
    "dirichlet": "dirichlet",
    "theory-check": "theory_check",
    "privatize": "custom",
    "sample": "custom",
}


def build_parser():
    p = argparse.ArgumentParser(prog="unbounded-dp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON experiment config (unknown keys are errors)")
        sp.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        sp.add_argument("--smoke", action="store_true", help="n=200, 3 replicates, short chains")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "privatize":
            sp.add_argument("--input", type=Path, required=True, help="CSV dataset with a header row")
    return p


def load_config(args):
    kind = SUBCOMMANDS[args.command]
    cfg = ex.ExperimentConfig.from_json(args.config) if args.config else ex.default_config(kind)
    if args.config and args.command not in ("privatize", "sample") and cfg.kind != kind:
        raise ex.ConfigError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
    if args.seed is not None:
        d = cfg.to_dict()
        d["master_seed"] = args.seed
        cfg = ex.ExperimentConfig.from_dict(d)
    if args.smoke:
        cfg = cfg.smoke()
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except (ex.ConfigError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out or Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.command == "table1":
        table, _ = ex.run_table1(cfg, out, args.workers)
        _print_table(table, ["E(beta1)", "Var(beta1)", "E(n)", "Var(n)"])
    elif args.command == "mcem":
        table, _ = ex.run_mcem_table2(cfg, out, args.workers)
        _print_table(table, [c for c in ("beta0", "beta1", "beta2", "tau") if c in table[0]])
    elif args.command == "dirichlet":
        table, _ = ex.run_dirichlet_study(cfg, out, args.workers)
        _print_table(table, ["sd_alpha1", "sd_alpha2", "sd_alpha3", "sd_n"])
    elif args.command == "theory-check":
        rows = ex.run_theory_checks(cfg, out, args.workers)
        failed = [r for r in rows if r["verdict"] == "fail"]
        print(f"{len(rows)} checks, {len(failed)} failed; report in {out / 'checks.csv'}")
        for r in failed:
            print(f"  FAIL {r['check']} {r['params']} observed={r['observed']:.6g} target={r['target']:.6g}")
    elif args.command == "privatize":
        rng = np.random.default_rng(cfg.master_seed)
        res = ex.privatize_csv(cfg, args.input, rng)
        (out / "release.json").write_text(json.dumps(res, indent=2))
        print(json.dumps(res))
    elif args.command == "sample":
        tr = ex.run_single_chain(cfg, out)
        print(json.dumps(tr.summary(), indent=2))
    print(f"done in {time.perf_counter() - t0:.1f}s; outputs in {out}", file=sys.stderr)
    return 0


def _print_table(table, cols):
    head = ["epsilon_s", "epsilon_n", "failed"] + cols
    print("\t".join(head))
    for r in table:
        vals = [r["epsilon_s"], r["epsilon_n"], r["failed"]] + [r.get(c, float("nan")) for c in cols]
        print("\t".join(f"{v:.4g}" if isinstance(v, float) else str(v) for v in vals))


if __name__ == "__main__":
    sys.exit(main())
