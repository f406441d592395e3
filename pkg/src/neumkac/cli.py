"""Command-line interface for the experiment harness.

Subcommands mirror the experiment kinds; global flags override the
corresponding configuration keys.  The exit code is 0 exactly when every
configured assertion passed.
"""

import argparse
import sys

from .config import ExperimentConfig
from .harness import EXPERIMENTS


def build_parser():
    parser = argparse.ArgumentParser(
        prog="neumkac",
        description="boundary-driven lattice gas: oracles, hydrodynamics, "
                    "currents, tilted dynamics, rate functionals")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("oracle", "hydro", "current", "tilt", "rate", "stationary"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--replicas", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig({})
    cfg = cfg.with_overrides(experiment=args.command, seed=args.seed,
                             replicas=args.replicas, threads=args.threads,
                             out=args.out)
    outdir = cfg.out or f"runs/{args.command}-{cfg.digest()}"
    result = EXPERIMENTS[args.command](cfg, outdir)
    for c in result.checks:
        status = "PASS" if c.ok else "FAIL"
        print(f"{status} {c.name}: value={c.value:g} threshold={c.threshold:g}")
    print(f"outputs in {outdir}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
