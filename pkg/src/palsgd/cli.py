"""Command-line entry points.

    palsgd run <config.json> [--seed N] [--out-dir DIR] [--metrics-every N]
    palsgd sweep <config.json> --grid <grid.json> [--out-dir DIR] [--seed N]
    palsgd verify-theory <config.json> [--out-dir DIR] [--seeds N]
    palsgd gradcheck <config.json>

``run`` exits 0 on completion and 3 when the run diverged; config errors
exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, load_config
from .experiments import gradcheck, run_experiment, sweep, verify_theory

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_FAILED_CHECK = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="path to the run config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out-dir", default=None, help="override config output directory")
    parser.add_argument("--metrics-every", type=int, default=None,
                        help="override metrics cadence (steps)")


def _load(args) -> "RunConfig":
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "metrics_every", None) is not None:
        cfg.metrics_every = args.metrics_every
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="palsgd",
                                     description="Deterministic distributed-training simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one configured run")
    _add_common(run_p)

    sweep_p = sub.add_parser("sweep", help="one-at-a-time parameter sweep")
    _add_common(sweep_p)
    sweep_p.add_argument("--grid", required=True, help="JSON file mapping dotted parameter paths to value lists")

    verify_p = sub.add_parser("verify-theory", help="convergence-theory verification suite")
    _add_common(verify_p)
    verify_p.add_argument("--seeds", type=int, default=10, help="seeds per worker count")
    verify_p.add_argument("--k-values", default="1,2,4,8", help="comma-separated worker counts")

    grad_p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _add_common(grad_p)

    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            summary, _ = run_experiment(cfg)
            print(json.dumps(summary, sort_keys=True, indent=2))
            return EXIT_DIVERGED if summary["diverged"] else EXIT_OK

        if args.command == "sweep":
            with open(args.grid) as fh:
                grid = json.load(fh)
            rows = sweep(cfg, grid, out_dir=cfg.out_dir)
            for row in rows:
                print(f"{row['param']}={row['value']}: final_loss={row['final_loss']} "
                      f"sim_time_s={row['sim_time_s']} sync_count={row['sync_count']} "
                      f"diverged={row['diverged']}")
            return EXIT_OK

        if args.command == "verify-theory":
            k_values = tuple(int(v) for v in args.k_values.split(","))
            report = verify_theory(cfg, out_dir=cfg.out_dir, k_values=k_values,
                                   n_seeds=args.seeds)
            print(json.dumps(report, sort_keys=True, indent=2))
            return EXIT_OK if report["pass"] else EXIT_FAILED_CHECK

        report = gradcheck(cfg)
        print(json.dumps(report, sort_keys=True, indent=2))
        return EXIT_OK if report["pass"] else EXIT_FAILED_CHECK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
