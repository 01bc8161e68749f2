"""Command-line interface: train, predict, evaluate.

Exit codes: 0 on success, 2 on usage or input errors, 1 on internal
failures. Every training or prediction run writes a flat key-value manifest
(resolved options, seed, input digests, tool version, timestamps) alongside
its outputs, enough to re-run the command bit-identically.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .data import ParseError, build_vocabs, read_task1_file
from .decoding import Ensemble, predict_file
from .evaluation import score_files
from .models import load_checkpoint
from .training import TrainConfig, train


class UsageError(ValueError):
    """Bad flags or unreadable inputs (exit code 2)."""


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            fh.write(f"{key} = {entries[key]}\n")


def _require_file(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file: {path}")
    return p


def cmd_train(args) -> int:
    train_path = _require_file(args.train, "--train")
    dev_path = _require_file(args.dev, "--dev")
    unlabeled_path = None
    if args.unlabeled is not None:
        unlabeled_path = _require_file(args.unlabeled, "--unlabeled")
    started = _utc_now()

    train_examples = read_task1_file(train_path)
    dev_examples = read_task1_file(dev_path)
    if not train_examples:
        raise UsageError(f"--train: {train_path} holds no examples")
    if not dev_examples:
        raise UsageError(f"--dev: {dev_path} holds no examples")
    char_vocab, feat_vocab = build_vocabs(train_examples)

    unlabeled_forms = None
    if unlabeled_path is not None:
        with open(unlabeled_path, encoding="utf-8") as fh:
            unlabeled_forms = [line.strip() for line in fh if line.strip()]

    config = TrainConfig(
        batch_size=args.batch,
        keep_prob=1.0 - args.dropout,
        hidden_size=args.hidden,
        max_updates=args.max_updates,
        max_hours=args.max_hours,
        eval_interval=args.eval_interval,
        seed=args.seed,
        mode=args.mode,
        clip_norm=None if args.no_clip else 5.0,
    )
    out_dir = Path(args.out)
    best = train(
        config,
        train_examples,
        dev_examples,
        char_vocab,
        feat_vocab,
        out_dir,
        unlabeled_forms=unlabeled_forms,
    )
    manifest = {
        "command": "train",
        "version": __version__,
        "started": started,
        "finished": _utc_now(),
        "train_file": str(train_path),
        "train_sha256": _digest(train_path),
        "dev_file": str(dev_path),
        "dev_sha256": _digest(dev_path),
        "seed": config.seed,
        "mode": config.mode,
        "hidden_size": config.hidden_size,
        "batch_size": config.batch_size,
        "dropout": args.dropout,
        "max_updates": config.max_updates,
        "max_hours": config.max_hours,
        "eval_interval": config.eval_interval,
        "clip_norm": config.clip_norm,
        "best_updates": best.updates,
        "best_dev_accuracy": f"{best.dev_accuracy:.4f}",
        "best_dev_edit_distance": f"{best.dev_edit_distance:.6f}",
        "checkpoint": best.path,
    }
    if unlabeled_path is not None:
        manifest["unlabeled_file"] = str(unlabeled_path)
        manifest["unlabeled_sha256"] = _digest(unlabeled_path)
    write_manifest(out_dir / "manifest.txt", manifest)
    return 0


def cmd_predict(args) -> int:
    input_path = _require_file(args.input, "--input")
    model_paths = [_require_file(p, "--model") for p in args.model]
    started = _utc_now()
    models = [load_checkpoint(p)[0] for p in model_paths]
    try:
        ensemble = Ensemble(models)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    count = predict_file(ensemble, input_path, args.output, width=args.beam)
    manifest = {
        "command": "predict",
        "version": __version__,
        "started": started,
        "finished": _utc_now(),
        "input_file": str(input_path),
        "input_sha256": _digest(input_path),
        "output_file": args.output,
        "beam_width": args.beam,
        "lines": count,
    }
    for i, p in enumerate(model_paths):
        manifest[f"model_{i}"] = str(p)
        manifest[f"model_{i}_sha256"] = _digest(p)
    write_manifest(Path(args.output).with_suffix(Path(args.output).suffix + ".manifest"), manifest)
    return 0


def cmd_evaluate(args) -> int:
    gold_path = _require_file(args.gold, "--gold")
    pred_path = _require_file(args.pred, "--pred")
    try:
        report = score_files(gold_path, pred_path, strip_macrons=args.strip_macrons)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(report.format_table())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(report.to_csv_lines()) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphseq",
        description="Character-level morphological inflection toolkit.",
    )
    parser.add_argument("--version", action="version", version=f"morphseq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a joint inflection/analysis model")
    p_train.add_argument("--train", required=True, help="task-1 TSV training file")
    p_train.add_argument("--dev", required=True, help="task-1 TSV development file")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--mode", choices=("full", "semi"), default="full")
    p_train.add_argument("--unlabeled", help="plain-text file of unlabeled forms (semi mode)")
    p_train.add_argument("--hidden", type=int, default=128)
    p_train.add_argument("--batch", type=int, default=64)
    p_train.add_argument("--dropout", type=float, default=0.5, help="dropout rate")
    p_train.add_argument("--max-updates", type=int, default=20_000)
    p_train.add_argument("--max-hours", type=float, default=None)
    p_train.add_argument("--eval-interval", type=int, default=500)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--no-clip", action="store_true", help="disable gradient clipping")
    p_train.set_defaults(func=cmd_train)

    p_pred = sub.add_parser("predict", help="decode a covered task-1 file")
    p_pred.add_argument(
        "--model",
        action="append",
        required=True,
        help="checkpoint path; pass twice to ensemble two models",
    )
    p_pred.add_argument("--input", required=True)
    p_pred.add_argument("--output", required=True)
    p_pred.add_argument("--beam", type=int, default=10)
    p_pred.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("evaluate", help="score predictions against gold")
    p_eval.add_argument("--gold", required=True)
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument(
        "--strip-macrons",
        action="store_true",
        help="remove vowel-length marks from both sides before scoring",
    )
    p_eval.add_argument("--csv", help="also write per-language scores as CSV")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ParseError, FileNotFoundError) as exc:
        print(f"morphseq: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - unexpected failure path
        print(f"morphseq: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
