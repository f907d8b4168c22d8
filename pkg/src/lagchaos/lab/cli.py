"""Command line entry point: ``lagchaos <experiment> [--config PATH] [flags]``."""

import argparse
import sys

from ..errors import LagchaosError
from .config import EXPERIMENTS, load_config
from .run import run

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_BLOWUP, EXIT_INTERRUPTED = 0, 1, 2, 3, 4


def build_parser():
    p = argparse.ArgumentParser(prog="lagchaos", description="Lagrangian chaos experiments for stochastic 2D Navier-Stokes.")
    sub = p.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key = value file; flags override it")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--ensemble", type=int)
        s.add_argument("--horizon", type=float)
        s.add_argument("--checkpoint-every", dest="checkpoint_every", type=float)
        s.add_argument("--stop-at", dest="stop_at", type=float, help="stop early after this much run time (leaves checkpoints)")
        s.add_argument("--resume", action="store_const", const=True, help="continue from checkpoints in OUT")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any other config key")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"lagchaos: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_USAGE
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in ("seed", "out", "ensemble", "horizon", "checkpoint_every", "stop_at", "resume"):
        overrides[key] = getattr(args, key)
    overrides["experiment"] = args.experiment
    try:
        config = load_config(args.config, overrides)
        record = run(config)
    except LagchaosError as exc:
        print(f"lagchaos: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"{record.experiment}: {record.status} ({record.wall_clock:.1f} s) -> {config.out}", file=sys.stderr)
    return {"ok": EXIT_OK, "failed": EXIT_FAILED, "blowup": EXIT_BLOWUP,
            "interrupted": EXIT_INTERRUPTED}.get(record.status, EXIT_FAILED)


if __name__ == "__main__":
    sys.exit(main())
