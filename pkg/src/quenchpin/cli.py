"""Command-line surface: one subcommand per experiment.

Exit codes: 0 experiment passed, 1 experiment ran but failed its criterion
(e.g. a violated certificate), 2 infeasible parameters or config errors.
"""

from __future__ import annotations

import argparse
import sys

from .errors import CapExceeded, ConfigError, InfeasibleError, QuenchpinError
from .experiments import RUNNERS, Config, parse_config


def build_parser():
    ap = argparse.ArgumentParser(
        prog="quenchpin",
        description="Pinning certificates and direct simulation for interfaces "
        "in quenched random obstacle fields.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, runner in RUNNERS.items():
        doc = (runner.__doc__ or "").strip().splitlines()[0]
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out-dir", default="out", help="report/CSV directory")
        p.add_argument("--threads", type=int, help="worker pool size for "
                       "independent trials (results are thread-count invariant)")
        p.add_argument("--model", choices=["qew", "mcf"], help="model override")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
    return ap


def load_config(args):
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides.update(parse_config(fh.read()))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    if args.model is not None:
        overrides["model"] = args.model
    return Config(overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        report = RUNNERS[args.command](cfg)
    except (ConfigError, InfeasibleError, CapExceeded) as exc:
        # CapExceeded means the sampled configuration carries no open surface
        # below the cap: the construction is infeasible on this instance
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QuenchpinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    paths = report.write(args.out_dir)
    for k in sorted(report.results):
        print(f"{k} = {report.results[k]}")
    print(f"report: {paths[0]}")
    print(f"wall_clock_s: {report.wallclock:.3f}")
    if report.passed is None or report.passed:
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
