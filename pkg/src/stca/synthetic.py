"""Synthetic proposal videos whose labels are only recoverable from context.

Every frame holds ``N // 2`` tracked objects, each contributing two proposals:

* an *object* proposal, labelled with the object's class, whose feature is
  ``object_marker + identity + noise`` and therefore carries no class
  information at all;
* an unlabelled *cue* proposal sharing the object's identity vector. In every
  other frame (phase chosen per object) the cue shows the class sign
  ``+-1`` on feature dimension 0; otherwise that dimension is noise. The cue
  box sits beside the object horizontally for class 1 and vertically for
  class 2, so the geometry also identifies the class.

Feature layout: dim 0 class sign, dim 1 cue marker, dim 2 object marker,
dims 3.. identity. With an odd ``N`` the remaining proposal is unlabelled
clutter.
"""
from __future__ import annotations

import numpy as np

from .proposals import BoundingBox, FrameProposals, Proposal, StcaConfig

IDENTITY_SCALE = 2.0
NOISE = 0.1
CUE_OFFSET = 0.75
CUE_SCALE = 0.5


def generate_synthetic(config: StcaConfig, seed: int, num_videos: int = 16, num_frames: int = 24,
                       num_classes: int = 2) -> list:
    """Return ``num_videos`` videos of ``num_frames`` frames each (lists of :class:`FrameProposals`)."""
    if num_classes != 2:
        raise ValueError("the generator builds a single ambiguous class pair; num_classes must be 2")
    if config.d_v < 4:
        raise ValueError("d_v must be at least 4 for the synthetic feature layout")
    if config.n_proposals < 2:
        raise ValueError("at least two proposals per frame are needed (object + cue)")
    rng = np.random.default_rng(seed)
    return [_video(rng, config, f"v{v:03d}", num_frames) for v in range(num_videos)]


def _video(rng, config: StcaConfig, video_id: str, num_frames: int) -> list:
    d = config.d_v
    n_obj = config.n_proposals // 2
    n_clutter = config.n_proposals - 2 * n_obj
    classes = rng.integers(1, 3, n_obj)
    phase = rng.integers(0, 2, n_obj)
    ident = rng.normal(size=(n_obj, d - 3))
    ident *= IDENTITY_SCALE / np.linalg.norm(ident, axis=1, keepdims=True)
    pos = rng.uniform(20, 80, (n_obj, 2))
    vel = rng.uniform(-1, 1, (n_obj, 2))
    size = rng.uniform(8, 16, (n_obj, 2))
    side = rng.choice([-1.0, 1.0], n_obj)

    frames = []
    for t in range(num_frames):
        props = []
        for o in range(n_obj):
            cx, cy = pos[o] + t * vel[o] + rng.normal(0, 0.3, 2)
            w, h = size[o] * np.exp(rng.normal(0, 0.03, 2))
            f_obj = np.concatenate([[0.0, 0.0, 1.0], ident[o]]) + rng.normal(0, NOISE, d)
            props.append(Proposal(BoundingBox(cx, cy, w, h), t, f_obj, float(rng.uniform(0.5, 1.0)),
                                  int(classes[o])))

            sign = 1.0 if classes[o] == 1 else -1.0
            clear = (t + phase[o]) % 2 == 0
            f_cue = np.concatenate([[sign if clear else 0.0, 1.0, 0.0], ident[o]]) + rng.normal(0, NOISE, d)
            jitter = rng.normal(0, 0.05, 2)
            if classes[o] == 1:
                cue_c = (cx + side[o] * (CUE_OFFSET + jitter[0]) * w, cy + jitter[1] * h)
            else:
                cue_c = (cx + jitter[0] * w, cy + side[o] * (CUE_OFFSET + jitter[1]) * h)
            props.append(Proposal(BoundingBox(cue_c[0], cue_c[1], CUE_SCALE * w, CUE_SCALE * h), t, f_cue,
                                  float(rng.uniform(0.3, 0.8)), None))
        for _ in range(n_clutter):
            box = BoundingBox(*rng.uniform(10, 90, 2), *rng.uniform(5, 15, 2))
            props.append(Proposal(box, t, rng.normal(0, 0.5, d), float(rng.uniform(0.0, 0.3)), None))
        order = rng.permutation(len(props))
        frames.append(FrameProposals(t, tuple(props[i] for i in order), video_id))
    return frames


def bayes_accuracy(videos, window: int, geometry: bool = False) -> float:
    """Accuracy of the generator-aware classifier on labelled proposals.

    ``window=0`` uses nothing but the proposal's own feature, whose
    distribution is identical for both classes, so the classifier can only
    predict the prior mode. ``window>=1`` additionally reads the identity-matched
    cue in frames ``t-K..t+K`` (``K = window // 2``, boundary frames
    replicated) and takes the sign of the first clearly signed one. With
    ``geometry`` the same-frame cue's offset direction decides instead.
    """
    correct = total = 0
    k = window // 2
    for video in videos:
        last = len(video) - 1
        for t, frame in enumerate(video):
            for p in frame.proposals:
                if p.label is None:
                    continue
                total += 1
                guess = 1
                if window > 0 and geometry:
                    cue = _matched_cue(frame, p.feature)
                    dx = abs(cue.box.cx - p.box.cx) / p.box.w
                    dy = abs(cue.box.cy - p.box.cy) / p.box.h
                    guess = 1 if dx > dy else 2
                elif window > 0:
                    for s in sorted(range(t - k, t + k + 1), key=lambda s: abs(s - t)):
                        cue = _matched_cue(video[min(max(s, 0), last)], p.feature)
                        if cue is not None and abs(cue.feature[0]) > 0.5:
                            guess = 1 if cue.feature[0] > 0 else 2
                            break
                correct += guess == p.label
    return correct / total if total else float("nan")


def _matched_cue(frame: FrameProposals, feature: np.ndarray):
    best, best_score = None, -np.inf
    for q in frame.proposals:
        if q.feature[1] < 0.5:
            continue
        score = float(q.feature[3:] @ feature[3:])
        if score > best_score:
            best, best_score = q, score
    return best
