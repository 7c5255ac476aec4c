"""Command line entry point: ``rwre {check-env,valleys,collide,verify,tail}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError, RWREError
from .harness import COMMANDS, EXIT_HARD, EXIT_USAGE, ExperimentConfig

log = logging.getLogger("rwre")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int(text: str) -> int:
    # accepts 1e6 style literals
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v != int(v):
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(v)


def _starts(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"starts must be comma separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; SUPPRESS keeps the
    # subcommand's unset copies from overwriting values given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--seed", type=_int, help="master seed (overrides the config)")
    common.add_argument("--jobs", type=_int, help="worker processes for per-seed runs")
    common.add_argument("--out-dir", help="directory for JSON/CSV outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="rwre", description="Simulation and checks for one-dimensional random walks in random environment.",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("check-env", parents=[common], help="moments, kappa and hypotheses of the environment law")
    v = sub.add_parser("valleys", parents=[common], help="valley census and deep-valley index")
    v.add_argument("--i-max", type=_int)
    v.add_argument("--n-max", type=_int)
    v.add_argument("--epsilon", type=float)
    c = sub.add_parser("collide", parents=[common], help="d walkers in one environment, meeting log per seed")
    c.add_argument("--d", type=_int)
    c.add_argument("--starts", type=_starts, help="comma separated start sites")
    c.add_argument("--horizon", type=_int)
    c.add_argument("--seeds", type=_int, dest="n_seeds", help="number of environment seeds")
    c.add_argument("--stride", type=_int, dest="checkpoint_stride", help="checkpoint stride")
    c.add_argument("--no-join", action="store_true", help="skip joining meeting sites with the valley census")
    vf = sub.add_parser("verify", parents=[common], help="oracle suite")
    vf.add_argument("--scale", type=float)
    t = sub.add_parser("tail", parents=[common], help="tail fits for excursion heights and the supremum of V")
    t.add_argument("--samples", type=_int)
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(getattr(args, "config", None))
    if hasattr(args, "seed"):
        cfg.master_seed = args.seed
    if hasattr(args, "jobs"):
        cfg.jobs = args.jobs
    if hasattr(args, "out_dir"):
        cfg.out_dir = args.out_dir
    if args.command == "valleys":
        for k in ("i_max", "n_max", "epsilon"):
            if getattr(args, k) is not None:
                setattr(cfg.valleys, k, getattr(args, k))
    elif args.command == "collide":
        c = cfg.collide
        if args.starts is not None:
            c.starts = args.starts
            if args.d is None:
                c.d = len(args.starts)
        if args.d is not None:
            c.d = args.d
            if args.starts is None and len(c.starts) != c.d:
                c.starts = [0] * c.d
        for k in ("horizon", "n_seeds", "checkpoint_stride"):
            if getattr(args, k) is not None:
                setattr(c, k, getattr(args, k))
        if args.no_join:
            c.join_valleys = False
    elif args.command == "verify" and args.scale is not None:
        cfg.verify_scale = args.scale
    elif args.command == "tail" and args.samples is not None:
        cfg.tail_samples = args.samples
    if cfg.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        code, out = COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"rwre: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RWREError as e:
        print(f"rwre: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_HARD
    brief = {k: v for k, v in out.items() if not isinstance(v, list) or len(v) <= 20}
    print(json.dumps(brief, sort_keys=True, indent=1, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())
