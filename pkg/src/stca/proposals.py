"""Proposal records, STCA parameters and configuration."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import numpy as np

VARIANTS = ("none", "semantic", "spatial", "full")


class FrameValidationError(ValueError):
    """Malformed proposal data. ``kind`` names the violated invariant."""

    kind = "invalid-frame"


class DimensionMismatch(FrameValidationError):
    kind = "dimension-mismatch"


class CountMismatch(FrameValidationError):
    kind = "count-mismatch"


class NonPositiveExtent(FrameValidationError):
    kind = "non-positive-extent"


class NonFiniteValue(FrameValidationError):
    kind = "non-finite"


@dataclass(frozen=True)
class BoundingBox:
    """Box given by its center, width and height."""

    cx: float
    cy: float
    w: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)

    def scaled(self, s: float, dx: float = 0.0, dy: float = 0.0) -> "BoundingBox":
        return BoundingBox(self.cx * s + dx, self.cy * s + dy, self.w * s, self.h * s)


@dataclass(frozen=True, eq=False)
class Proposal:
    box: BoundingBox
    frame_id: int
    feature: np.ndarray
    objectness: float = 1.0
    label: Optional[int] = None

    def __eq__(self, other):
        if not isinstance(other, Proposal):
            return NotImplemented
        return (
            self.box == other.box
            and self.frame_id == other.frame_id
            and self.objectness == other.objectness
            and self.label == other.label
            and np.array_equal(self.feature, other.feature)
        )

    __hash__ = None


@dataclass(frozen=True)
class FrameProposals:
    frame_id: int
    proposals: tuple
    video_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "proposals", tuple(self.proposals))

    def __len__(self):
        return len(self.proposals)

    @property
    def features(self) -> np.ndarray:
        return np.stack([p.feature for p in self.proposals]).astype(float)

    @property
    def boxes(self) -> np.ndarray:
        return np.stack([p.box.as_array() for p in self.proposals])

    @property
    def labels(self) -> list:
        return [p.label for p in self.proposals]

    def to_set(self) -> "ProposalSet":
        n = len(self.proposals)
        return ProposalSet(self.features, self.boxes, np.full(n, self.frame_id, dtype=np.int64))

    def with_frame_id(self, frame_id: int) -> "FrameProposals":
        props = tuple(replace(p, frame_id=frame_id) for p in self.proposals)
        return FrameProposals(frame_id, props, self.video_id)


@dataclass(frozen=True, eq=False)
class ProposalSet:
    """Array view of a group of proposals: features (M, d_v), boxes (M, 4), frames (M,)."""

    features: np.ndarray
    boxes: np.ndarray
    frames: np.ndarray

    def __post_init__(self):
        m = self.features.shape[0]
        if self.features.ndim != 2 or self.boxes.shape != (m, 4) or self.frames.shape != (m,):
            raise ValueError(
                f"inconsistent proposal set: features {self.features.shape}, "
                f"boxes {self.boxes.shape}, frames {self.frames.shape}"
            )

    def __len__(self):
        return self.features.shape[0]

    @classmethod
    def from_proposals(cls, proposals: Sequence[Proposal]) -> "ProposalSet":
        proposals = list(proposals)
        return cls(
            np.stack([p.feature for p in proposals]).astype(float),
            np.stack([p.box.as_array() for p in proposals]),
            np.array([p.frame_id for p in proposals], dtype=np.int64),
        )

    @classmethod
    def concat(cls, sets: Sequence["ProposalSet"]) -> "ProposalSet":
        return cls(
            np.concatenate([s.features for s in sets]),
            np.concatenate([s.boxes for s in sets]),
            np.concatenate([s.frames for s in sets]),
        )

    def with_features(self, features: np.ndarray) -> "ProposalSet":
        return ProposalSet(features, self.boxes, self.frames)

    def take(self, index) -> "ProposalSet":
        return ProposalSet(self.features[index], self.boxes[index], self.frames[index])


def as_set(proposals) -> ProposalSet:
    if isinstance(proposals, ProposalSet):
        return proposals
    if isinstance(proposals, FrameProposals):
        return proposals.to_set()
    return ProposalSet.from_proposals(proposals)


@dataclass(frozen=True)
class StcaConfig:
    """Hyperparameters of the aggregation network.

    Field defaults are the published full-scale values; :meth:`desk` gives the
    small configuration used by the CLI and the test-suite.

    ``variant`` selects which logit terms enter the fused attention logit:
    ``semantic`` (content only), ``spatial`` (content + geometry), ``full``
    (content + geometry + temporal). ``none`` disables aggregation entirely and
    is only meaningful for the pipeline (single-frame baseline).
    """

    d_v: int = 1024
    d_phi: int = 16
    n_proposals: int = 300
    window: int = 31
    tau: int = 9
    eps_geom: float = 1e-3
    eps_spatial: float = 1e-6
    sinusoid_base: float = 1000.0
    variant: str = "full"
    share_query: bool = True
    signed_tau: bool = True

    def __post_init__(self):
        for name in ("d_v", "d_phi", "n_proposals", "window", "tau"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.d_phi % 2:
            raise ValueError(f"d_phi must be even, got {self.d_phi}")
        if self.window % 2 == 0:
            raise ValueError(f"window must be odd, got {self.window}")
        for name in ("eps_geom", "eps_spatial", "sinusoid_base"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive real, got {value!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "full" and self.d_v % 2:
            raise ValueError(f"the temporal embedding needs an even d_v, got {self.d_v}")

    @classmethod
    def desk(cls, **overrides) -> "StcaConfig":
        base = dict(d_v=16, d_phi=8, n_proposals=8, window=5)
        base.update(overrides)
        return cls(**base)

    @property
    def use_spatial(self) -> bool:
        return self.variant in ("spatial", "full")

    @property
    def use_temporal(self) -> bool:
        return self.variant == "full"

    @property
    def half_window(self) -> int:
        return self.window // 2

    def replace(self, **changes) -> "StcaConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True, eq=False)
class StcaParams:
    """Learnable matrices of one aggregation unit.

    ``w_qt`` is the separate temporal query projection used when
    ``share_query`` is off; with sharing it is ``None`` and the temporal
    logits reuse ``w_q``.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_s: np.ndarray
    w_t: np.ndarray
    w_qt: Optional[np.ndarray] = None

    def blocks(self) -> dict:
        out = {"w_q": self.w_q, "w_k": self.w_k, "w_s": self.w_s, "w_t": self.w_t}
        if self.w_qt is not None:
            out["w_qt"] = self.w_qt
        return out

    @classmethod
    def from_blocks(cls, blocks: dict) -> "StcaParams":
        return cls(blocks["w_q"], blocks["w_k"], blocks["w_s"], blocks["w_t"], blocks.get("w_qt"))

    def map(self, fn) -> "StcaParams":
        return StcaParams.from_blocks({k: fn(v) for k, v in self.blocks().items()})

    def zeros_like(self) -> "StcaParams":
        return self.map(np.zeros_like)

    def __eq__(self, other):
        if not isinstance(other, StcaParams):
            return NotImplemented
        a, b = self.blocks(), other.blocks()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)

    __hash__ = None

    def check(self, config: StcaConfig) -> None:
        d, s = config.d_v, 4 * config.d_phi
        expected = {"w_q": (d, d), "w_k": (d, d), "w_s": (s, 1), "w_t": (d, d)}
        if not config.share_query:
            expected["w_qt"] = (d, d)
        blocks = self.blocks()
        if blocks.keys() != expected.keys():
            raise ValueError(f"parameter blocks {sorted(blocks)} do not match config {sorted(expected)}")
        for name, shape in expected.items():
            if blocks[name].shape != shape:
                raise ValueError(f"{name} has shape {blocks[name].shape}, expected {shape}")
            if not np.all(np.isfinite(blocks[name])):
                raise ValueError(f"{name} contains non-finite entries")


def validate_frame(frame: FrameProposals, config: StcaConfig) -> None:
    """Raise a :class:`FrameValidationError` subclass if ``frame`` is malformed."""
    if len(frame.proposals) != config.n_proposals:
        raise CountMismatch(
            f"frame {frame.frame_id}: {len(frame.proposals)} proposals, expected {config.n_proposals}"
        )
    for idx, p in enumerate(frame.proposals):
        where = f"frame {frame.frame_id} proposal {idx}"
        if p.frame_id != frame.frame_id:
            raise FrameValidationError(f"{where}: frame id {p.frame_id} != {frame.frame_id}")
        feature = np.asarray(p.feature)
        if feature.shape != (config.d_v,):
            raise DimensionMismatch(f"{where}: feature shape {feature.shape}, expected ({config.d_v},)")
        b = p.box
        if not all(math.isfinite(v) for v in (b.cx, b.cy, b.w, b.h)) or not np.all(np.isfinite(feature)):
            raise NonFiniteValue(f"{where}: non-finite box or feature")
        if b.w <= 0 or b.h <= 0:
            raise NonPositiveExtent(f"{where}: box extent ({b.w}, {b.h}) must be positive")


def default_init_params(config: StcaConfig, seed: int, std: float = 0.01) -> StcaParams:
    """Draw every matrix entry i.i.d. from N(0, std^2) with a seeded generator."""
    rng = np.random.default_rng(seed)
    d, s = config.d_v, 4 * config.d_phi
    w_q = rng.normal(0.0, std, (d, d))
    w_k = rng.normal(0.0, std, (d, d))
    w_s = rng.normal(0.0, std, (s, 1))
    w_t = rng.normal(0.0, std, (d, d))
    w_qt = None if config.share_query else rng.normal(0.0, std, (d, d))
    return StcaParams(w_q, w_k, w_s, w_t, w_qt)
