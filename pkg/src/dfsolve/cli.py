"""Command line entry point ``dfsolve``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import (EXPERIMENTS, CondTable, Ex3Result, ExperimentConfig, ExperimentError,
                      run)
from .linsolve import INTERSECTION, NONE, SCALED


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfsolve",
                                description="Mixed Darcy-Forchheimer solver experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-level progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a convergence or application experiment")
    r.add_argument("--experiment", choices=EXPERIMENTS, default="ex1")
    r.add_argument("--degree", type=int, choices=(0, 1))
    r.add_argument("--levels", type=int)
    r.add_argument("--out", help="output directory")
    r.add_argument("--formats", help="comma separated subset of csv,json,vtk")
    r.add_argument("--config", help="JSON file overriding any field")

    c = sub.add_parser("cond", help="condition numbers over the parameter grid")
    c.add_argument("--precond", choices=(INTERSECTION, SCALED, NONE), default=INTERSECTION)
    c.add_argument("--grid", default="default",
                   help="'default' or a JSON object overriding r, kappa, F, n lists")
    c.add_argument("--penalty", type=float, help="facet penalty factor")
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out", help="output directory")
    c.add_argument("--config", help="JSON file overriding any field")
    return p


def _config(args) -> ExperimentConfig:
    if args.command == "run":
        cfg = ExperimentConfig.defaults(args.experiment)
        over = {}
        if args.degree is not None:
            over["degree"] = args.degree
        if args.levels is not None:
            over["levels"] = args.levels
        out = {}
        if args.out:
            out["dir"] = args.out
        if args.formats:
            out["formats"] = [f.strip() for f in args.formats.split(",") if f.strip()]
        if out:
            over["output"] = out
    else:
        cfg = ExperimentConfig.defaults("ex4")
        over = {"precond": {"variant": args.precond}, "workers": args.workers}
        if args.penalty is not None:
            over["precond"]["penalty"] = args.penalty
        if args.grid != "default":
            over["grid"] = json.loads(args.grid)
        if args.out:
            over["output"] = {"dir": args.out}
    cfg = cfg.merged(over)
    if args.config:
        with open(args.config) as fh:
            cfg = cfg.merged(json.load(fh))
    return cfg


def _print_result(result) -> None:
    if isinstance(result, CondTable):
        ns = result.grid["n"]
        print(f"{'r':>4} {'kappa':>8} {'F':>8} " + " ".join(f"{'h=1/' + str(n):>9}" for n in ns))
        rows = {}
        for e in result.entries:
            rows.setdefault((e["r"], e["kappa"], e["F"]), {})[e["n"]] = e["cond"]
        for (r, kap, F), vals in rows.items():
            cells = " ".join(f"{vals[n]:9.2f}" if vals.get(n) is not None else f"{'nan':>9}"
                             for n in ns)
            print(f"{r:4g} {kap:8.0e} {F:8.0e} {cells}")
    elif isinstance(result, Ex3Result):
        for k, v in result.to_dict().items():
            print(f"{k:>22}: {v}")
    else:
        rates = result.rates()
        cols = result.columns()
        print(f"{'dofs':>8} {'h':>7} " + " ".join(f"{c:>15} {'rate':>6}" for c in cols)
              + f" {'div_res':>9} {'it':>3}")
        for i, r in enumerate(result.levels):
            parts = []
            for c in cols:
                rate = rates[c][i]
                parts.append(f"{getattr(r, c):15.3e} {'*' if rate is None else f'{rate:.3f}':>6}")
            print(f"{r.n_dofs:8d} {r.h:7.4f} " + " ".join(parts)
                  + f" {r.div_residual_inf:9.2e} {r.newton_iters:3d}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        result = run(cfg)
    except (ExperimentError, ValueError, OSError) as exc:
        print(f"dfsolve: error: {exc}", file=sys.stderr)
        return 1
    _print_result(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
