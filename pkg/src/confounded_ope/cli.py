"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 oracle-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .bounds import NoFeasibleIterate
from .config import ConfigError, config_schema, load_config
from .environments import EnvConfigError
from .lp import LPFailure
from .mdp import MDPError, StationaryError
from .occupancy import Trajectory
from .system import EmptyAmbiguitySetError, SingularSystemError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ORACLE = 0, 1, 2, 3

NUMERICAL_ERRORS = (SingularSystemError, StationaryError, LPFailure, NoFeasibleIterate, EmptyAmbiguitySetError, np.linalg.LinAlgError)

log = logging.getLogger("confounded_ope")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config (defaults if omitted)")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--threads", type=int, help="max worker processes")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="confounded-ope", description="Confounded off-policy evaluation bounds.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a behavior trajectory")
    b = sub.add_parser("bounds", parents=[common], help="sweep gamma and write bounds")
    b.add_argument("--trajectory", type=Path, help="use an existing trajectory CSV instead of simulating")
    sub.add_parser("consistency", parents=[common], help="upper bound over growing trajectory prefixes")
    sub.add_parser("oracle-check", parents=[common], help="compare PGD against the brute-force oracle")
    sub.add_parser("gridworld-sweep", parents=[common], help="bounds for gridworld mixture policies")
    sub.add_parser("schema", help="print the config JSON schema")
    return parser


def _print(payload) -> None:
    print(json.dumps(ex._jsonable(payload), indent=2))


def _dispatch(args, cfg) -> int:
    out = Path(cfg.output_dir)
    if args.command == "simulate":
        _print(ex.run_simulate(cfg, out))
    elif args.command == "bounds":
        traj = Trajectory.from_csv(args.trajectory) if args.trajectory else None
        for s in ex.run_bounds(cfg, out, traj):
            feasible = sum(r["feasible"] for r in s["rows"])
            print(f"{s['csv']}: {feasible}/{len(s['rows'])} feasible gamma values")
    elif args.command == "consistency":
        path, rows = ex.run_consistency(cfg, out)
        print(path)
        _print(ex.consistency_summary(rows))
    elif args.command == "oracle-check":
        ok, rows = ex.run_oracle_check(cfg, out)
        for r in rows:
            status = "PASS" if r["passed"] else "FAIL"
            print(
                f"{status} gamma={r['gamma']:.4g} pgd=[{r['pgd_lower']:.6f}, {r['pgd_upper']:.6f}] "
                f"oracle=[{r['oracle_lower']:.6f}, {r['oracle_upper']:.6f}]"
            )
        return EXIT_OK if ok else EXIT_ORACLE
    elif args.command == "gridworld-sweep":
        rows = ex.run_gridworld_sweep(cfg, out)
        print(f"{out / 'gridworld_sweep.csv'}: {len(rows)} rows")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(config_schema(), indent=2))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "threads": args.threads, "output_dir": str(args.out) if args.out else None}
    try:
        cfg = load_config(args.config, overrides)
        return _dispatch(args, cfg)
    except (ConfigError, EnvConfigError, MDPError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
