"""Command line: ``fedpoison run CONFIG`` and ``fedpoison synth OUT``."""
from __future__ import annotations

import argparse
import logging
import sys

from .attacks import KINDS
from .data import DataFormatError, make_synthetic, write_ml1m
from .experiment import ConfigError, parse_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedpoison", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a key = value config file")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--epochs", type=int)
    run.add_argument("--attack", choices=KINDS)

    synth = sub.add_parser("synth", help="write a synthetic power-law dataset in ml-1m format")
    synth.add_argument("out")
    synth.add_argument("--users", type=int, default=200)
    synth.add_argument("--items", type=int, default=100)
    synth.add_argument("--min-interactions", type=int, default=20)
    synth.add_argument("--max-interactions", type=int, default=40)
    synth.add_argument("--exponent", type=float, default=1.0)
    synth.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            data = make_synthetic(args.users, args.items, args.min_interactions, args.max_interactions,
                                  args.exponent, args.seed)
            write_ml1m(data, args.out)
            print(f"wrote {data.num_interactions} interactions to {args.out}")
            return 0
        overrides = {"seed": args.seed, "out": args.out, "epochs": args.epochs, "attack": args.attack}
        config = parse_config(args.config, overrides)
        record = run_experiment(config)
    except (ConfigError, DataFormatError, OSError, ValueError) as err:
        print(f"fedpoison: error: {err}", file=sys.stderr)
        return 2
    last = record.rows[-1]
    ers = "  ".join(f"ER@{k}={last['er'][k]:.4f}" for k in record.k_list)
    print(f"epoch {last['epoch']}: {ers}  HR@10={last['hr']:.4f}  -> {config.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
