"""Command line entry point: ``spheremotion {run,suite,train-mlp,check}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np


def _grid(text: str):
    try:
        v, phi = text.split(",")
        out = []
        for part in (v, phi):
            lo, hi, n = part.split(":")
            out.append(tuple(np.linspace(float(lo), float(hi), int(n))))
        return tuple(out)
    except ValueError:
        raise argparse.ArgumentTypeError("grid must look like VMIN:VMAX:NV,PHIMIN:PHIMAX:NPHI") from None


def _cmd_run(args) -> int:
    from .harness import Scenario, export_results, format_table, run_scenario

    scenario = Scenario.load(args.scenario)
    result = run_scenario(scenario, args.seed)
    out = Path(args.out) if args.out else Path("results") / scenario.name
    export_results(result, out)
    rows = [{"scenario": scenario.name, "axis": a, **m.to_dict()} for a, m in result.metrics.items()]
    print(format_table(rows), end="")
    if result.flags:
        print(f"{len(result.flags)} fail-safe cycles", file=sys.stderr)
    print(f"results written to {out}")
    return 0


def _cmd_suite(args) -> int:
    from .harness import format_table, run_suite

    rows = run_suite(args.directory, args.seed, args.out, args.jobs)
    print(format_table(rows), end="")
    return 0


def _cmd_train(args) -> int:
    from .dynamics import RobotParams
    from .mlp import DEFAULT_PHI_GRID, DEFAULT_V_GRID, fit_beta_model, save_model

    v_grid, phi_grid = args.grid if args.grid else (DEFAULT_V_GRID, DEFAULT_PHI_GRID)
    fit = fit_beta_model(RobotParams(), v_grid, phi_grid, h=args.hidden, seed=args.seed,
                         max_epochs=args.epochs)
    save_model(fit.params, args.out)
    h = fit.history
    print(f"{len(fit.dataset.y)} samples {fit.dataset.counts()}")
    print(f"epochs {len(h.train_mse) - 1} (best {h.best_epoch}, stop: {h.stop_reason})")
    print(f"train mse {h.train_mse[h.best_epoch]:.3e}  test mse {fit.test_mse():.3e}")
    print(f"model written to {args.out}")
    return 0


def _cmd_check(args) -> int:
    from .selfcheck import run_checks

    results = run_checks()
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:9s} {r.detail}")
    return 0 if all(r.ok for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spheremotion", description="Spherical robot MPC simulation and benchmarks")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario file")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default results/<name>)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("suite", help="run every scenario in a directory")
    p.add_argument("directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write per-scenario results and metrics_table.csv here")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("train-mlp", help="fit the pendulum reference network")
    p.add_argument("--grid", type=_grid, help="VMIN:VMAX:NV,PHIMIN:PHIMAX:NPHI (default 0:1:9,-0.2618:0.2618:10)")
    p.add_argument("--hidden", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("check", help="run the oracle self-tests")
    p.set_defaults(func=_cmd_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
