"""Command line: ``fwpo train | eval | sweep``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""

import argparse
import os
import sys

from .. import neural as nn
from ..envs import ENVS
from .config import ConfigError, load_config
from .run import evaluate, run_sweep, run_training


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; usage problems are exit 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_seeds(text):
    """``"0..4"`` (inclusive range) or ``"0,1,7"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad seed list {text!r}; use 0..4 or 0,1,2") from None
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def _out_dir(args, cfg):
    return args.out or os.environ.get("FWPO_OUT_DIR") or cfg.out_dir


def _progress(quiet):
    if quiet:
        return None
    return lambda seed, step, mean, viol: print(
        f"seed {seed} step {step}: return {mean:.4f}, pre-projection violations {viol}", file=sys.stderr)


def build_parser():
    p = _Parser(prog="fwpo", description="Frank-Wolfe policy optimization experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one seed")
    t.add_argument("--config", required=True, help="experiment INI file")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", help="output directory (default: $FWPO_OUT_DIR, then train.out_dir)")
    t.add_argument("--quiet", action="store_true", help="no progress lines on stderr")

    e = sub.add_parser("eval", help="evaluate a saved actor")
    e.add_argument("--checkpoint", required=True, help="actor checkpoint written by train")
    e.add_argument("--env", required=True, choices=sorted(ENVS))
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--config", help="take env settings from this experiment file")
    e.add_argument("--action-scale", type=float, default=1.0)

    s = sub.add_parser("sweep", help="train several seeds and aggregate")
    s.add_argument("--config", required=True)
    s.add_argument("--seeds", default=None, help="0..4 or 0,1,2 (default: train.seeds)")
    s.add_argument("--out", help="output directory (default: $FWPO_OUT_DIR, then train.out_dir)")
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.add_argument("--quiet", action="store_true")
    return p


def cmd_train(args):
    cfg = load_config(args.config)
    result = run_training(cfg, args.seed, _out_dir(args, cfg), _progress(args.quiet))
    print(result.paths["metrics"])
    return 0


def cmd_eval(args):
    if args.episodes < 1:
        raise UsageError("--episodes must be at least 1")
    env_cls, cfg_cls = ENVS[args.env]
    if args.config:
        cfg = load_config(args.config)
        if cfg.env_name != args.env:
            raise ConfigError(f"config is for env {cfg.env_name!r}, not {args.env!r}")
        env = env_cls(cfg.env_config())
    else:
        env = env_cls(cfg_cls())
    try:
        actor = nn.load(args.checkpoint)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if actor.n_in != env.state_dim or actor.n_out != env.action_dim:
        raise ConfigError(f"checkpoint maps {actor.n_in} -> {actor.n_out}, env needs "
                          f"{env.state_dim} -> {env.action_dim}")

    def policy(e, s):
        return e.constraint_of(s).project(args.action_scale * nn.forward(actor, s))

    mean, std = evaluate(policy, env, args.episodes, args.seed)
    print(f"mean_return={mean!r}")
    print(f"std_return={std!r}")
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config)
    seeds = parse_seeds(args.seeds) if args.seeds else list(cfg.seeds)
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    _, agg = run_sweep(cfg, seeds, _out_dir(args, cfg), args.jobs, _progress(args.quiet))
    print(agg)
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else 0
    except Exception as exc:
        print(f"fwpo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
