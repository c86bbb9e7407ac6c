"""Command line: train a two-stage classifier and evaluate checkpoints.

Metrics are written as JSON files alongside the checkpoint, matching the
generation pipeline's manifest layout (config snapshot + counts + scores).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import TrainConfig
from .data import TrainerDataError
from .train import evaluate_checkpoint, load_checkpoint, save_checkpoint, train_two_stage

logger = logging.getLogger("twostage")


def cmd_train(args) -> int:
    if args.config:
        config = TrainConfig.load(args.config)
    else:
        config = TrainConfig(
            family=args.family,
            stage1_path=args.stage1,
            stage2_path=args.stage2,
            model=args.model,
            seed=args.seed,
        )
    result = train_two_stage(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result, out_dir / "checkpoint.pt")
    metrics_path = out_dir / "metrics.json"
    metrics_path.write_text(json.dumps(result.metrics, indent=2) + "\n", encoding="utf-8")
    print(f"checkpoint: {out_dir / 'checkpoint.pt'}")
    print(f"metrics: {metrics_path}")
    print(f"validation metric: {result.metrics['validation_metric']:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    metrics = evaluate_checkpoint(checkpoint, args.test)
    text = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"metrics: {args.out}")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twostage", description="Two-stage fine-tuning on few-shot plus synthetic JSONL."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run Stage I (few-shot) then Stage II (synthetic)")
    p.add_argument("--config", help="TrainConfig JSON file (overrides the flags below)")
    p.add_argument("--family", help="task family name")
    p.add_argument("--stage1", help="few-shot JSONL (core dataset schema)")
    p.add_argument("--stage2", help="synthetic JSONL (core dataset schema)")
    p.add_argument("--model", default="tiny-base", help="encoder identifier")
    p.add_argument("--seed", type=int, default=0, help="training seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a test JSONL")
    p.add_argument("--checkpoint", required=True, help="checkpoint.pt from train")
    p.add_argument("--test", required=True, help="test JSONL (core dataset schema)")
    p.add_argument("--out", help="metrics JSON output path")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    try:
        return args.func(args)
    except (TrainerDataError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 3
    except ValueError as exc:
        logger.error("configuration error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
