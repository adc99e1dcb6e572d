"""Command-line front end: fine-tune and evaluate, metrics as JSON."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .pced import FormatError
from .training import TrainConfig, evaluate, fine_tune


def _add_config_flags(sub):
    sub.add_argument("--model", default="vit_b_16")
    sub.add_argument("--num-classes", type=int, default=10)
    sub.add_argument("--batch-size", type=int, default=64)
    sub.add_argument("--lr", type=float, default=1e-4)
    sub.add_argument("--momentum", type=float, default=0.9)
    sub.add_argument("--weight-decay", type=float, default=5e-4)
    sub.add_argument("--epochs", type=int, default=3)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--weights", default=None, help="local pretrained checkpoint")
    sub.add_argument("--device", default="cpu")


def _config(args) -> TrainConfig:
    return TrainConfig(
        model=args.model,
        num_classes=args.num_classes,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        seed=args.seed,
        weights_path=args.weights,
        device=args.device,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="train-harness")
    subs = parser.add_subparsers(dest="command", required=True)

    ft = subs.add_parser("fine-tune", help="train on a shard manifest or epoch directory")
    ft.add_argument("--train", required=True, help="manifest.json or directory of epoch-NNNN/")
    ft.add_argument("--test", default=None, help="test manifest.json")
    ft.add_argument("--out", required=True, help="output directory for metrics and model")
    _add_config_flags(ft)

    ev = subs.add_parser("evaluate", help="top-1 accuracy of a model artifact")
    ev.add_argument("--artifact", required=True)
    ev.add_argument("--test", required=True)
    ev.add_argument("--batch-size", type=int, default=64)
    ev.add_argument("--device", default="cpu")

    args = parser.parse_args(argv)
    try:
        if args.command == "fine-tune":
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            record = fine_tune(
                args.train, _config(args),
                test_manifest=args.test, artifact_path=out / "model.pt",
            )
            record.save(out / "metrics.json")
            print(record.to_json(), end="")
        else:
            accuracy = evaluate(
                args.artifact, args.test, batch_size=args.batch_size, device=args.device
            )
            print(json.dumps({"test_accuracy": accuracy}))
    except (FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
