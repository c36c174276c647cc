"""Command-line entry point: ``stca <command> [flags]``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
failure (non-finite loss or a failed gradient check).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .io import (ConfigError, DataError, detection_record, load_checkpoint, load_run_config, read_dataset,
                 save_checkpoint, write_dataset, write_detections)
from .oracle import NonFiniteEvaluation, gradcheck, naive_infer
from .pipeline import Detection, EmptySequence, EvenWindow, LabelMismatch, SlidingInference, TrainConfig, train
from .proposals import FrameValidationError
from .synthetic import generate_synthetic

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

VARIANT_LETTERS = {"a": "none", "b": "semantic", "c": "semantic", "d": "spatial", "e": "full"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required for '{args.command}'")


def _stca_config(run, args):
    cfg = run.stca
    if getattr(args, "variant", None):
        cfg = cfg.replace(variant=VARIANT_LETTERS[args.variant])
        if args.variant == "b":
            cfg = cfg.replace(window=1)
    if getattr(args, "window", None) is not None:
        cfg = cfg.replace(window=args.window)
    return cfg


def _train_config(run, args) -> TrainConfig:
    if args.seed is None:
        return run.train
    return dataclasses.replace(run.train, seed=args.seed)


def cmd_gen(args) -> int:
    _require(args, "out")
    run = load_run_config(args.config)
    cfg = _stca_config(run, args)
    seed = 1 if args.seed is None else args.seed
    videos = generate_synthetic(cfg, seed, run.data.num_videos, run.data.num_frames, run.data.num_classes)
    write_dataset(args.out, videos)
    print(f"wrote {len(videos)} videos x {run.data.num_frames} frames to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    _require(args, "data", "out")
    run = load_run_config(args.config)
    cfg = _stca_config(run, args)
    train_cfg = _train_config(run, args)
    videos = read_dataset(args.data, cfg)
    log_path = Path(f"{args.out}.loss.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss"])

        def record(step, loss):
            writer.writerow([step, repr(train_cfg.lr_at(step)), repr(loss)])

        with np.errstate(over="ignore", invalid="ignore"):
            model, losses = train(videos, cfg, train_cfg, callback=record)
    save_checkpoint(args.out, model, cfg)
    if losses:
        print(f"loss {np.mean(losses[:10]):.4f} -> {np.mean(losses[-100:]):.4f} over {len(losses)} steps")
    print(f"wrote checkpoint {args.out} and loss log {log_path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    _require(args, "data", "params", "out")
    model, cfg = load_checkpoint(args.params)
    if args.window is not None:
        cfg = cfg.replace(window=args.window)
    if args.naive_oracle and args.dump_attention:
        raise UsageError("--dump-attention is not available with --naive-oracle")
    videos = read_dataset(args.data, cfg)
    records = []
    for video in videos:
        if args.naive_oracle:
            dets = [Detection(f.frame_id, logits) for f, logits in zip(video, naive_infer(video, model, cfg))]
        else:
            session = SlidingInference(video, model, cfg, args.threads)
            dets = []
            for key in range(len(video)):
                dets.append(session.detect(key, keep_weights=bool(args.dump_attention)))
                session.evict(key)
        records.extend(detection_record(video[0].video_id, d, args.dump_attention or 0) for d in dets)
    write_detections(args.out, records)
    print(f"wrote {len(records)} detection records to {args.out} (T={cfg.window})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    _require(args, "data")
    run = load_run_config(args.config)
    cfg = _stca_config(run, argparse.Namespace(window=args.window))
    train_cfg = _train_config(run, args)
    videos = read_dataset(args.data, cfg)
    labels = tuple(experiments.ABLATION_ROWS) if args.variant is None else (args.variant,)
    rows = experiments.run_ablation(videos, cfg, train_cfg, run.data.holdout, labels, log=print)
    table = experiments.format_ablation(rows)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    run = load_run_config(args.config)
    cfg = _stca_config(run, argparse.Namespace(variant=args.variant, window=None))
    result = experiments.run_bench(cfg, seed=args.seed or 0, threads=args.threads, log=print)
    text = result.to_text()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = gradcheck(seed=args.seed or 0)
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_json())
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_eval(args) -> int:
    _require(args, "data")
    report = experiments.evaluate_accuracy(args.detections, args.data)
    print(report.to_text())
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "infer": cmd_infer,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stca", description="Proposal-level spatio-temporal attention toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--data", metavar="PATH")
        p.add_argument("--params", metavar="PATH")
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--window", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--variant", choices=sorted(VARIANT_LETTERS))
        p.add_argument("--naive-oracle", action="store_true")
        p.add_argument("--dump-attention", type=int, metavar="K")
        p.add_argument("--threads", type=int, default=1)
        if name == "eval":
            p.add_argument("detections", metavar="DETECTIONS")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, EvenWindow) as exc:
        print(f"stca {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FrameValidationError, EmptySequence, LabelMismatch) as exc:
        print(f"stca {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, NonFiniteEvaluation) as exc:
        print(f"stca {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"stca {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
