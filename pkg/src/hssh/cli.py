"""Command-line interface.

Subcommands: ``generate``, ``train``, ``eval``, ``verify``,
``style-export``.  Exit codes: 0 success, 1 verification failure,
2 configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import verify
from .config import (ConfigError, RunConfig, load_config_file,
                     run_config_from_dict, synthetic_config_from_dict)
from .data import IoError, SyntheticConfig, generate_dataset
from .train import evaluate, style_export, train


def _parse_stages(text: str) -> tuple[int, ...]:
    try:
        stages = tuple(sorted({int(s) for s in text.split(",") if s.strip()}))
    except ValueError:
        raise ConfigError(f"cannot parse stage list: {text!r}") from None
    if not stages or not set(stages) <= {1, 2, 3, 4}:
        raise ConfigError("stages must be a non-empty subset of 1,2,3,4")
    return stages


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hssh")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write the synthetic benchmark splits")
    gen.add_argument("--config", help="JSON config path")
    gen.add_argument("--seed", type=int, help="override the dataset seed")
    gen.add_argument("--out", required=True, help="output directory")

    tr = sub.add_parser("train", help="train a model on the source splits")
    tr.add_argument("--config", help="JSON config path")
    tr.add_argument("--seed", type=int, help="override the run seed")
    tr.add_argument("--data", required=True, help="dataset directory")
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--no-ssh", action="store_true", help="disable style hallucination")
    tr.add_argument("--no-hmc", action="store_true", help="disable the consistency loss")
    tr.add_argument("--stages", help="comma-separated stages to hallucinate")

    ev = sub.add_parser("eval", help="top-1 accuracy of a checkpoint on a split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test", choices=["train", "val", "test"])

    sub.add_parser("verify", help="run every property suite")

    ex = sub.add_parser("style-export", help="dump style clouds as CSV")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--data", required=True)
    ex.add_argument("--out", required=True, help="output CSV path")
    ex.add_argument("--batches", type=int, default=4)
    return parser


def _load_sections(path) -> dict:
    return load_config_file(path) if path else {}


def _run_command(args) -> int:
    if args.command == "generate":
        doc = _load_sections(args.config)
        cfg = synthetic_config_from_dict(doc.get("synthetic", {}))
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        paths = generate_dataset(cfg, args.out)
        for name, path in paths.items():
            print(f"{name}: {path}")
        return 0
    if args.command == "train":
        doc = _load_sections(args.config)
        run = run_config_from_dict(doc.get("run", {}))
        if args.seed is not None:
            run = dataclasses.replace(run, seed=args.seed)
        if args.no_ssh:
            run = dataclasses.replace(run, enable_ssh=False)
        if args.no_hmc:
            run = dataclasses.replace(run, enable_hmc=False)
        if args.stages:
            run = dataclasses.replace(run, stages_hallucinated=_parse_stages(args.stages))
        result = train(run, args.data, args.out,
                       encoder_overrides=doc.get("encoder", {}))
        print(json.dumps({"checkpoint": str(result.checkpoint_path),
                          "metrics": str(result.metrics_path),
                          "final_val_acc": result.final_val_acc}))
        return 0
    if args.command == "eval":
        acc = evaluate(args.checkpoint, args.data, args.split)
        print(json.dumps({"split": args.split, "top1": acc}))
        return 0
    if args.command == "verify":
        return 0 if verify.run_all() else 1
    if args.command == "style-export":
        n = style_export(args.checkpoint, args.data, args.out, args.batches)
        print(json.dumps({"rows": n, "csv": str(args.out)}))
        return 0
    raise AssertionError(f"unhandled command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run_command(args)
    except (ConfigError, IoError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
