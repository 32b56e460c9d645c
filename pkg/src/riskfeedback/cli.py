"""Command line entry point.

Subcommands: solve, openloop, validate, robustness, compare.  Exit
codes: 0 success, 2 configuration error, 3 solver failure, 4 missing
artifact.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .runner import (
    MissingArtifactError,
    SolverFailureError,
    run_compare,
    run_openloop,
    run_robustness,
    run_solve,
    run_validation,
    write_openloop_artifacts,
    write_solve_artifacts,
)

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_MISSING = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskfeedback",
        description="Risk-averse feedback synthesis for parabolic systems "
        "with random coefficients",
    )
    parser.add_argument(
        "--threads", type=int, default=1, help="worker threads for validation sweeps"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="synthesize the feedback law")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("openloop", help="gradient-descent open-loop baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=None)

    p = sub.add_parser("validate", help="Monte Carlo validation of a stored run")
    p.add_argument("--run", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("robustness", help="perturbed initial-condition study")
    p.add_argument("--run-cl", required=True)
    p.add_argument("--run-ol", required=True)
    p.add_argument("--levels", default="0,0.5,1,1.5,2")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("compare", help="risk-averse versus risk-neutral solve")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            cfg = load_config(args.config)
            setup, result = run_solve(cfg)
            write_solve_artifacts(Path(args.out), setup, result)
            last = result.report.iterations[-1]
            print(
                f"solve: {len(result.report.iterations)} iterations, "
                f"termination={result.report.termination}, "
                f"objective={last.objective:.6e}, "
                f"gradient_norm={last.gradient_norm:.3e}"
            )
        elif args.command == "openloop":
            cfg = load_config(args.config)
            setup, control, report = run_openloop(cfg, iterations=args.iters)
            write_openloop_artifacts(Path(args.out), setup, control, report)
            last = report.iterations[-1]
            print(
                f"openloop: {len(report.iterations)} iterations, "
                f"objective={last.objective:.6e}, "
                f"gradient_norm={last.gradient_norm:.3e}"
            )
        elif args.command == "validate":
            out = run_validation(args.run, args.n, seed=args.seed, threads=args.threads)
            print(f"validation written to {out}")
        elif args.command == "robustness":
            levels = [float(x) for x in str(args.levels).split(",") if x != ""]
            out = run_robustness(
                args.run_cl,
                args.run_ol,
                levels,
                seed=args.seed,
                threads=args.threads,
                out_dir=args.out,
            )
            print(f"robustness study written to {out}")
        elif args.command == "compare":
            cfg = load_config(args.config)
            out = run_compare(cfg, args.out, threads=args.threads)
            print(f"comparison written to {out}")
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailureError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except MissingArtifactError as err:
        print(f"missing artifact: {err}", file=sys.stderr)
        return EXIT_MISSING
    return 0


if __name__ == "__main__":
    sys.exit(main())
