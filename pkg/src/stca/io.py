"""File formats: line-delimited datasets and detections, text checkpoints, run configs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .pipeline import Model, TrainConfig
from .proposals import BoundingBox, FrameProposals, Proposal, StcaConfig

CHECKPOINT_MAGIC = "stca-checkpoint v1"


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# -- datasets -------------------------------------------------------------------

def frame_to_record(frame: FrameProposals) -> dict:
    props = []
    for p in frame.proposals:
        rec = {
            "box": [p.box.cx, p.box.cy, p.box.w, p.box.h],
            "feature": [float(v) for v in p.feature],
            "objectness": p.objectness,
        }
        if p.label is not None:
            rec["label"] = int(p.label)
        props.append(rec)
    return {"video_id": frame.video_id, "frame_id": frame.frame_id, "proposals": props}


def frame_from_record(rec: dict) -> FrameProposals:
    try:
        frame_id = int(rec["frame_id"])
        props = []
        for p in rec["proposals"]:
            cx, cy, w, h = (float(v) for v in p["box"])
            label = p.get("label")
            props.append(Proposal(BoundingBox(cx, cy, w, h), frame_id,
                                  np.asarray(p["feature"], dtype=float),
                                  float(p.get("objectness", 1.0)),
                                  None if label is None else int(label)))
        return FrameProposals(frame_id, tuple(props), str(rec.get("video_id", "")))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed frame record: {exc}") from None


def write_dataset(path, videos: Iterable) -> None:
    """Write videos (lists of frames) as one JSON record per line."""
    with open(path, "w") as fh:
        for video in videos:
            for frame in video:
                fh.write(json.dumps(frame_to_record(frame)) + "\n")


def read_dataset(path, config: StcaConfig = None) -> list:
    """Read a dataset back into a list of videos, grouped by ``video_id`` in file order.

    Frames of a video must appear in ascending ``frame_id`` order; with a
    ``config`` every frame is also validated against it.
    """
    from .proposals import FrameValidationError, validate_frame

    videos, index = [], {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        frame = frame_from_record(rec)
        if config is not None:
            try:
                validate_frame(frame, config)
            except FrameValidationError as exc:
                raise DataError(f"{path}:{lineno}: {exc.kind}: {exc}") from None
        if frame.video_id not in index:
            index[frame.video_id] = len(videos)
            videos.append([])
        video = videos[index[frame.video_id]]
        if video and frame.frame_id <= video[-1].frame_id:
            raise DataError(f"{path}:{lineno}: frame ids of video {frame.video_id!r} are not ascending")
        video.append(frame)
    return videos


# -- detections ---------------------------------------------------------------

def detection_record(video_id: str, detection, top_k: int = 0) -> dict:
    post = detection.posterior
    rec = {
        "video_id": video_id,
        "frame_id": int(detection.frame_id),
        "detections": [{"posterior": [float(v) for v in row], "label": int(np.argmax(row))} for row in post],
    }
    if top_k and detection.weights is not None:
        dump = []
        for i, row in enumerate(detection.weights):
            order = np.argsort(-row, kind="stable")[:top_k]
            dump.append({
                "target": i,
                "top": [{"candidate": int(j), "frame_id": int(detection.candidate_frames[j]),
                         "weight": float(row[j])} for j in order],
            })
        rec["attention"] = dump
    return rec


def write_detections(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_detections(path) -> list:
    out = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read detections {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


# -- run configuration ----------------------------------------------------------

@dataclass(frozen=True)
class DataConfig:
    num_videos: int = 80
    num_frames: int = 16
    num_classes: int = 2
    holdout: float = 0.2  # fraction of videos held out by the ablation harness


@dataclass(frozen=True)
class RunConfig:
    stca: StcaConfig = field(default_factory=StcaConfig.desk)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_text(self) -> str:
        lines = []
        for section in (self.stca, self.train, self.data):
            for key, value in asdict(section).items():
                lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_run_config(text: str) -> RunConfig:
    """Parse flat ``key=value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    base = RunConfig()
    sections = {"stca": base.stca, "train": base.train, "data": base.data}
    owner = {}
    for name, obj in sections.items():
        for f in fields(obj):
            owner.setdefault(f.name, []).append(name)
    values = {name: {} for name in sections}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in owner:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        for section in owner[key]:
            try:
                values[section][key] = _coerce(raw, getattr(sections[section], key))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {key}: {exc}") from None
    try:
        stca = StcaConfig(**{**asdict(base.stca), **values["stca"]})
        train = TrainConfig(**{**asdict(base.train), **values["train"]})
        data = DataConfig(**{**asdict(base.data), **values["data"]})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(stca, train, data)


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_run_config(text)


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, model: Model, config: StcaConfig) -> None:
    """Text checkpoint: magic line, config echo, then each matrix as
    ``matrix <name> <rows> <cols>`` followed by its rows (row-major, exact reprs)."""
    lines = [CHECKPOINT_MAGIC]
    for key, value in asdict(config).items():
        lines.append(f"config {key}={value}")
    for name, value in model.blocks().items():
        mat = np.atleast_2d(value) if value.ndim == 1 else value
        tag = "vector" if value.ndim == 1 else "matrix"
        lines.append(f"{tag} {name} {mat.shape[0]} {mat.shape[1]}")
        for row in mat:
            lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Return ``(model, config)`` from :func:`save_checkpoint` output."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not an STCA checkpoint")
    cfg_values, blocks = {}, {}
    i = 1
    defaults = asdict(StcaConfig())
    try:
        while i < len(lines):
            line = lines[i]
            if line.startswith("config "):
                key, raw = line[len("config "):].split("=", 1)
                cfg_values[key] = _coerce(raw, defaults[key])
                i += 1
            elif line.startswith(("matrix ", "vector ")):
                tag, name, rows, cols = line.split()
                rows, cols = int(rows), int(cols)
                data = [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
                mat = np.array(data, dtype=float).reshape(rows, cols)
                blocks[name] = mat[0] if tag == "vector" else mat
                i += rows + 1
            elif not line.strip():
                i += 1
            else:
                raise DataError(f"{path}:{i + 1}: unexpected line {line[:40]!r}")
        config = StcaConfig(**cfg_values)
        model = Model.from_blocks(blocks)
    except (KeyError, ValueError, IndexError) as exc:
        raise DataError(f"malformed checkpoint {path}: {exc}") from None
    return model, config
