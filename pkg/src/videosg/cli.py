"""Command line entry point.

    videosg synth --config run.json --out runs/toy
    videosg track --config run.json
    videosg train --config run.json --seed 7
    videosg eval  --config run.json --constraint both --k 10,20,50
    videosg report --config run.json

The config file is JSON with the sections described in pipeline.RunConfig;
every flag overrides its config counterpart. Without a config file the toy
defaults apply.
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import load_config, run


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}: {exc}") from exc
    if not ks or any(k <= 0 for k in ks):
        raise argparse.ArgumentTypeError(f"bad K list {text!r}: need positive integers")
    return ks


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="videosg",
                                     description="scene graph tracking, training "
                                                 "and evaluation for annotated video")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("synth", "generate a synthetic dataset"),
        ("track", "run the coarse tracker and dump tracklets"),
        ("train", "train the two-stage model"),
        ("eval", "predict and score the dataset"),
        ("report", "render stored metrics as tables"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--task", choices=["sgcls", "sgdet"], default=None,
                       help="task flavor; sets tracker and matching defaults")
        p.add_argument("--constraint", choices=["with", "none", "both"], default=None,
                       help="which ranking constraint modes to evaluate")
        p.add_argument("--k", type=_parse_ks, default=None, metavar="K1,K2,...",
                       help="recall cutoffs, comma separated")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--dataset", default=None, help="dataset file path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.task is not None:
        overrides["task"] = args.task
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.dataset is not None:
        overrides["dataset_path"] = args.dataset
    try:
        cfg = load_config(args.config, overrides)
        if args.constraint is not None:
            cfg.eval.constraint = args.constraint
        if args.k is not None:
            cfg.eval.ks = tuple(args.k)
        cfg.validate()
        outputs = run(cfg, args.command)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        # non-finite loss and friends: dump what we know and bail
        print(f"aborted: {exc}", file=sys.stderr)
        return 3
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
