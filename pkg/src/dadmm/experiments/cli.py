"""Command-line entry point for the experiment pipelines.

Usage:
    dadmm gen-data --config configs/lasso_p5.toml
    dadmm train    --config configs/lasso_p5.toml [--mode shared]
    dadmm eval     --config configs/lasso_p5.toml [--theta path.json]
    dadmm transfer --config configs/linreg_p5.toml [--theta path.json]
    dadmm compare-modes --config configs/linreg_p5.toml

Common flags: ``--out DIR`` overrides the output directory, ``--seed N``
reseeds graph, data, and training deterministically.
"""

from __future__ import annotations

import argparse
import sys

from ..engine import AGENT_SPECIFIC, SHARED
from .config import load_config
from . import runner


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="TOML experiment config")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--seed", type=int, default=None, help="override all pipeline seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dadmm", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and write the dataset file(s)")
    _add_common(p)

    p = sub.add_parser("train", help="train the unrolled schedule")
    _add_common(p)
    p.add_argument("--mode", choices=[AGENT_SPECIFIC, SHARED, "agent", "shared"],
                   default=None, help="override the unfolding mode")

    p = sub.add_parser("eval", help="evaluate trained vs baseline on the test set")
    _add_common(p)
    p.add_argument("--theta", default=None, help="path to a trained schedule JSON")
    p.add_argument("--mode", choices=[AGENT_SPECIFIC, SHARED, "agent", "shared"],
                   default=None, help="which trained schedule to evaluate")

    p = sub.add_parser("transfer", help="apply a shared schedule to larger graphs")
    _add_common(p)
    p.add_argument("--theta", default=None, help="path to a trained shared schedule JSON")

    p = sub.add_parser("compare-modes", help="agent-specific vs shared side by side")
    _add_common(p)

    return parser


def _canonical_mode(mode: str | None) -> str | None:
    if mode == "agent":
        return AGENT_SPECIFIC
    if mode == "shared":
        return SHARED
    return mode


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = load_config(args.config, out_override=args.out, seed_override=args.seed)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "gen-data":
            paths = runner.cmd_gen_data(config)
        elif args.command == "train":
            paths = runner.cmd_train(config, mode=_canonical_mode(args.mode))
        elif args.command == "eval":
            paths = runner.cmd_eval(config, theta_path=args.theta, mode=_canonical_mode(args.mode))
        elif args.command == "transfer":
            paths = runner.cmd_transfer(config, theta_path=args.theta)
        else:
            paths = [runner.cmd_compare_modes(config)]
    except (FileNotFoundError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
