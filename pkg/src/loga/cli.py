"""Command-line entry point: ``loga <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import DatasetConfig, TrainConfig, load_config
from .datagen import Dataset, generate_dataset
from .harness.checkpoint import load_checkpoint
from .harness.experiments import format_table, run_strategies
from .harness.gradcheck import GradcheckConfig, gradcheck
from .harness.inspect import format_score_dump, inspect_clips
from .harness.training import evaluate, train


def _int_list(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _with_seed(cfg, seed: Optional[int]):
    return cfg if seed is None else dataclasses.replace(cfg, seed=seed)


def cmd_generate(args) -> int:
    cfg = _with_seed(load_config(DatasetConfig, args.manifest), args.seed)
    out = Path(args.out) if args.out else Path(args.manifest).with_suffix("")
    generate_dataset(cfg, out)
    print(f"wrote dataset to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _with_seed(load_config(TrainConfig, args.config), args.seed)
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, epochs=args.epochs)
    dataset = Dataset.load(args.data)
    ckpt = train(cfg, dataset, out=args.out)
    print(f"trained {ckpt.epoch} epochs ({ckpt.step} steps), final loss {ckpt.history[-1]['total'] if ckpt.history else float('nan'):.4f}")
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    ranks = _int_list(args.ranks)
    result = evaluate(ckpt, Dataset.load(args.data), max_rank=max(ranks))
    print(f"mAP {100 * result.map:.2f}")
    for k in ranks:
        print(f"rank-{k} {100 * result.rank(k):.2f}")
    if result.num_invalid:
        print(f"{result.num_invalid} of {result.num_queries} queries had no valid match and were excluded")
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    records = inspect_clips(ckpt, Dataset.load(args.data), _int_list(args.clips), scale=args.scale)
    sys.stdout.write(format_score_dump(records))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = GradcheckConfig(dtype=args.dtype, strategy=args.strategy)
    cfg = _with_seed(cfg, args.seed)
    report = gradcheck(cfg)
    print(report.format())
    return 0 if report.passed else 1


def cmd_ablate(args) -> int:
    cfg = load_config(TrainConfig, args.config) if args.config else TrainConfig()
    cfg = _with_seed(cfg, args.seed)
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, epochs=args.epochs)
    results = run_strategies(Dataset.load(args.data), cfg)
    print(format_table(results))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loga", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic noisy-tracklet dataset")
    p.add_argument("manifest", help="JSON dataset config")
    p.add_argument("--out", help="output directory (default: manifest path without suffix)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("config", help="JSON train config")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="CMC / mAP on the query and gallery splits")
    p.add_argument("ckpt")
    p.add_argument("data")
    p.add_argument("--ranks", default="1,5,20")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="dump per-frame importance scores")
    p.add_argument("ckpt")
    p.add_argument("data")
    p.add_argument("--clips", required=True, help="comma-separated clip ids")
    p.add_argument("--scale", type=float, default=1.0, help="multiply scores, e.g. 1000")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="finite-difference check of all parameter gradients")
    p.add_argument("--dtype", default="float64", choices=("float32", "float64"))
    p.add_argument("--strategy", default="associative")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare all assembling strategies")
    p.add_argument("data")
    p.add_argument("--config", help="JSON train config (strategy is overridden)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
