"""Command-line surface.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure, 3 bound
violation (verify-bound only).  The output root defaults to ./runs and can
be moved with the MBRLAB_OUTPUT_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import sys

from .agent import AgentLoopError
from .harness import (ConfigError, cmd_ablate, cmd_analyze_actions, cmd_eval,
                      cmd_train, cmd_verify_bound)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_BOUND_VIOLATION = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; the harness contract wants 1
    def error(self, message):
        raise _UsageError(message)


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok != ""]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mbrlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one config across seeds")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="KEY=VALUE", help="dotted config override")
    p_train.add_argument("--seeds", type=_int_list, default=None)
    p_train.add_argument("--workers", type=int, default=1)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--name", default=None)

    p_eval = sub.add_parser("eval", help="evaluate a finished run's checkpoint")
    p_eval.add_argument("--run-dir", required=True)
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.add_argument("--seed", type=int, default=None)

    p_ablate = sub.add_parser("ablate", help="exploration-variant grid")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--set", dest="overrides", action="append", default=[],
                          metavar="KEY=VALUE")
    p_ablate.add_argument("--seeds", type=_int_list, default=[0, 1])
    p_ablate.add_argument("--beta-max-sweep", type=_float_list, default=None,
                          help="e.g. 0.25,0.5,1,2")
    p_ablate.add_argument("--workers", type=int, default=1)
    p_ablate.add_argument("--out", default=None)

    p_verify = sub.add_parser("verify-bound",
                              help="stress the tabular return-gap bound")
    p_verify.add_argument("--instances", type=int, default=1000)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--gamma", type=_float_list, default=[0.9, 0.99])
    p_verify.add_argument("--sweep", action="store_true",
                          help="also write the tightness sweep table")
    p_verify.add_argument("--out", default=None)

    p_actions = sub.add_parser("analyze-actions",
                               help="PCA projection of executed actions")
    p_actions.add_argument("--runs", nargs="+", required=True)
    p_actions.add_argument("--epochs", type=_int_list, required=True)
    p_actions.add_argument("--out", default=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "train":
            dirs = cmd_train(args.config, overrides=args.overrides,
                             seeds=args.seeds, out=args.out,
                             workers=args.workers, name=args.name)
            for d in dirs:
                print(d)
        elif args.command == "eval":
            result = cmd_eval(args.run_dir, episodes=args.episodes, seed=args.seed)
            print(f"eval_return_mean={result['eval_return_mean']:.4f} "
                  f"eval_return_std={result['eval_return_std']:.4f} "
                  f"episodes={result['eval_episodes']}")
        elif args.command == "ablate":
            rows = cmd_ablate(args.config, overrides=args.overrides,
                              seeds=args.seeds,
                              beta_max_sweep=args.beta_max_sweep,
                              out=args.out, workers=args.workers)
            print(f"{'variant':<24}{'seeds':>6}{'mean_return':>14}{'std_return':>12}")
            for row in rows:
                print(f"{row['variant']:<24}{row['seeds']:>6}"
                      f"{row['mean_return']:>14.4f}{row['std_return']:>12.4f}")
        elif args.command == "verify-bound":
            reports, failures, max_ratio = cmd_verify_bound(
                instances=args.instances, seed=args.seed,
                gammas=tuple(args.gamma), out=args.out, sweep=args.sweep)
            print(f"instances={len(reports)} failures={failures} "
                  f"max_ratio={max_ratio:.6f}")
            if failures:
                return EXIT_BOUND_VIOLATION
        elif args.command == "analyze-actions":
            rows = cmd_analyze_actions(args.runs, args.epochs, out=args.out)
            for row in rows:
                print(f"epoch={row['epoch']} run={row['run']} "
                      f"bbox_area={row['bbox_area']:.4f} "
                      f"evr=({row['evr1']:.3f}, {row['evr2']:.3f})")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AgentLoopError, OSError, RuntimeError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
