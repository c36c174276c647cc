"""Evaluation, ablation and runtime benchmark harnesses."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .io import DataError, read_dataset, read_detections
from .pipeline import SlidingInference, TrainConfig, init_model, infer_window, train
from .proposals import BoundingBox, FrameProposals, Proposal, StcaConfig

# Published full-scale mAP of the five ablation rows, shown for context only.
PUBLISHED_MAP = {"a": 74.5, "b": 77.4, "c": 79.3, "d": 79.8, "e": 80.3}

ABLATION_ROWS = {
    "a": ("single-frame baseline", "none", False),
    "b": ("semantic, T=1", "semantic", True),
    "c": ("semantic", "semantic", False),
    "d": ("semantic + spatial", "spatial", False),
    "e": ("semantic + spatial + temporal", "full", False),
}


class AlignmentError(DataError):
    pass


# -- evaluation ---------------------------------------------------------------

@dataclass
class AccuracyReport:
    correct: int = 0
    total: int = 0
    per_class: dict = field(default_factory=dict)  # class -> [correct, total]

    def add(self, predicted: int, truth: int) -> None:
        hit = int(predicted == truth)
        self.correct += hit
        self.total += 1
        slot = self.per_class.setdefault(int(truth), [0, 0])
        slot[0] += hit
        slot[1] += 1

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else float("nan")

    def recall(self) -> dict:
        return {c: hit / n for c, (hit, n) in sorted(self.per_class.items())}

    def to_text(self) -> str:
        lines = [f"accuracy {self.accuracy:.4f} ({self.correct}/{self.total})"]
        for c, (hit, n) in sorted(self.per_class.items()):
            lines.append(f"class {c}: recall {hit / n:.4f} ({hit}/{n})")
        return "\n".join(lines)


def score_detections(videos, detections) -> AccuracyReport:
    """Accuracy of per-proposal argmax labels over proposals that carry a label.

    ``videos`` is a list of videos, ``detections`` a list of detection records
    (dicts with ``video_id``, ``frame_id`` and ``detections``). Proposals
    without a label are not scored; label 0 is background.
    """
    frames = {(f.video_id, f.frame_id): f for video in videos for f in video}
    report = AccuracyReport()
    for rec in detections:
        key = (rec.get("video_id", ""), rec.get("frame_id"))
        frame = frames.get(key)
        if frame is None:
            raise AlignmentError(f"detections refer to unknown frame {key}")
        dets = rec.get("detections", [])
        if len(dets) != len(frame.proposals):
            raise AlignmentError(f"frame {key}: {len(dets)} detections for {len(frame.proposals)} proposals")
        for det, prop in zip(dets, frame.proposals):
            if prop.label is not None:
                report.add(int(det["label"]), prop.label)
    return report


def evaluate_accuracy(detections_path, data_path) -> AccuracyReport:
    return score_detections(read_dataset(data_path), read_detections(detections_path))


def model_accuracy(videos, model, config: StcaConfig) -> AccuracyReport:
    report = AccuracyReport()
    for video in videos:
        for frame, det in zip(video, infer_window(video, model, config)):
            for prop, label in zip(frame.proposals, det.labels):
                if prop.label is not None:
                    report.add(int(label), prop.label)
    return report


def split_videos(videos: Sequence, holdout: float):
    """Split by video: the last ``ceil(holdout * n)`` videos are held out (at least one is kept for training)."""
    n = len(videos)
    n_eval = min(max(int(math.ceil(holdout * n)), 1), n - 1) if n > 1 else 0
    return list(videos[: n - n_eval]), list(videos[n - n_eval:])


# -- ablation -----------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    label: str
    description: str
    window: int
    accuracy: float
    initial_loss: float
    final_loss: float
    seconds: float

    @property
    def published_map(self) -> float:
        return PUBLISHED_MAP[self.label]


def loss_ratio(losses, tail: int = 100, head: int = 10) -> float:
    """Mean of the last ``tail`` losses over the mean of the first ``head``."""
    losses = np.asarray(losses, dtype=float)
    return float(losses[-tail:].mean() / losses[:head].mean())


def run_ablation(videos, config: StcaConfig, train_cfg: TrainConfig, holdout: float = 0.2,
                 labels: Sequence[str] = tuple(ABLATION_ROWS), log=None) -> list:
    """Train and evaluate the requested ablation rows on a by-video split.

    Rows ``b`` and ``c`` share one trained model: training never looks at
    the inference window, so only evaluation differs.
    """
    train_videos, eval_videos = split_videos(videos, holdout)
    trained = {}
    rows = []
    for label in labels:
        description, variant, single = ABLATION_ROWS[label]
        cfg = config.replace(variant=variant)
        start = time.perf_counter()
        if variant not in trained:
            trained[variant] = train(train_videos, cfg, train_cfg)
        model, losses = trained[variant]
        eval_cfg = cfg.replace(window=1) if single else cfg
        acc = model_accuracy(eval_videos, model, eval_cfg).accuracy
        row = AblationRow(label, description, eval_cfg.window, acc, float(np.mean(losses[:10])),
                          float(np.mean(losses[-100:])), time.perf_counter() - start)
        rows.append(row)
        if log is not None:
            log(format_ablation_row(row))
    return rows


def format_ablation_row(row: AblationRow) -> str:
    return (f"({row.label}) {row.description:<30} T={row.window:<3} acc {row.accuracy:.3f}   "
            f"published mAP {row.published_map:.1f}   loss {row.initial_loss:.3f} -> {row.final_loss:.3f}   "
            f"{row.seconds:.1f}s")


def format_ablation(rows) -> str:
    header = "row description                        window accuracy  published-mAP"
    lines = [header]
    for r in rows:
        lines.append(f"({r.label}) {r.description:<33} {r.window:>5}  {r.accuracy:8.3f}  {r.published_map:13.1f}")
    return "\n".join(lines)


# -- runtime benchmark --------------------------------------------------------

BENCH_WINDOWS = (0, 1, 7, 13, 19, 25, 31)
BENCH_PROPOSALS = (128, 300)


def random_video(config: StcaConfig, num_frames: int, seed: int) -> list:
    """Random proposals with valid boxes; only shapes matter for timing."""
    rng = np.random.default_rng(seed)
    frames = []
    for t in range(num_frames):
        props = tuple(
            Proposal(BoundingBox(*rng.uniform(0, 100, 2), *rng.uniform(5, 30, 2)), t,
                     rng.normal(size=config.d_v), float(rng.uniform()))
            for _ in range(config.n_proposals)
        )
        frames.append(FrameProposals(t, props, "bench"))
    return frames


class _BenchCell:
    """One (N, T) benchmark cell: a primed inference session advancing one key frame per run.

    ``window=0`` times the head alone on raw features. Otherwise the buffers
    are primed on key 0 and each run advances the key by one frame, so it
    pays for one new first-unit slot plus the second unit.
    """

    def __init__(self, config: StcaConfig, window: int, runs: int, seed: int, threads: int):
        variant = "none" if window == 0 else config.variant
        cfg = config.replace(window=max(window, 1), variant=variant)
        video = random_video(cfg, runs + 1, seed)
        self.session = SlidingInference(video, init_model(cfg, 2, seed, std=0.1), cfg, threads)
        self.session.detect(0)
        self.key = 0
        self.times = []

    def run(self) -> None:
        self.key += 1
        start = time.perf_counter()
        self.session.detect(self.key)
        self.times.append(time.perf_counter() - start)
        self.session.evict(self.key)


def time_per_key_frame(config: StcaConfig, window: int, repeats: int = 5, warmup: int = 1, seed: int = 0,
                       threads: int = 1) -> float:
    """Median steady-state seconds to detect one key frame (see :class:`_BenchCell`)."""
    cell = _BenchCell(config, window, repeats + warmup, seed, threads)
    for _ in range(repeats + warmup):
        cell.run()
    return float(np.median(cell.times[warmup:]))


@dataclass(frozen=True)
class BenchResult:
    proposals: tuple
    windows: tuple
    seconds: dict  # (N, T) -> median seconds

    def row(self, n: int) -> list:
        return [self.seconds[(n, t)] for t in self.windows]

    def slope(self, n: int) -> float:
        stca = [t for t in self.windows if t > 0]
        lo, hi = min(stca), max(stca)
        return (self.seconds[(n, hi)] - self.seconds[(n, lo)]) / (hi - lo)

    def strictly_increasing(self, n: int) -> bool:
        r = self.row(n)
        return all(a < b for a, b in zip(r, r[1:]))

    def to_text(self) -> str:
        head = "N \\ T  " + "".join(f"{('off' if t == 0 else t):>9}" for t in self.windows)
        lines = [head]
        for n in self.proposals:
            lines.append(f"{n:<7}" + "".join(f"{1e3 * s:9.2f}" for s in self.row(n)))
        lines.append("(median ms per key frame; T=off is the head alone)")
        return "\n".join(lines)


def run_bench(config: StcaConfig, proposals=BENCH_PROPOSALS, windows=BENCH_WINDOWS, repeats: int = 5,
              warmup: int = 1, seed: int = 0, threads: int = 1, log=None) -> BenchResult:
    """Median per-key-frame time of every (N, T) cell.

    Runs are interleaved: each round times one key frame in every cell, so
    slow drift of the machine's speed is shared by all cells instead of
    landing on whichever cell happened to be measured at the time.
    """
    runs = repeats + warmup
    cells = {(n, t): _BenchCell(config.replace(n_proposals=n), t, runs, seed, threads)
             for n in proposals for t in windows}
    for r in range(runs):
        for cell in cells.values():
            cell.run()
        if log is not None:
            log(f"round {r + 1}/{runs}{' (warmup)' if r < warmup else ''} done")
    seconds = {key: float(np.median(cell.times[warmup:])) for key, cell in cells.items()}
    if log is not None:
        for (n, t), sec in seconds.items():
            log(f"N={n} T={t}: {1e3 * sec:.2f} ms")
    return BenchResult(tuple(proposals), tuple(windows), seconds)
