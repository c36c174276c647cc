"""Two-unit aggregation network: triplet training and buffered sliding-window inference."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .attention import stca_backward, stca_forward
from .proposals import FrameProposals, ProposalSet, StcaConfig, StcaParams, default_init_params

RAW = "raw"
ENHANCED = "enhanced"


class EmptySequence(ValueError):
    pass


class EvenWindow(ValueError):
    pass


class LabelMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainingTriplet:
    key_a: FrameProposals
    support: FrameProposals
    key_b: FrameProposals

    @property
    def labels(self) -> list:
        """Labels of the two key frames, ``key_a`` first; unlabeled proposals give ``None``."""
        return self.key_a.labels + self.key_b.labels


@dataclass(frozen=True, eq=False)
class HeadParams:
    weight: np.ndarray  # (d_v, C + 1)
    bias: np.ndarray  # (C + 1,)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1] - 1


@dataclass(frozen=True, eq=False)
class Model:
    stage1: StcaParams
    stage2: StcaParams
    head: HeadParams

    def blocks(self) -> dict:
        out = {f"stage1.{k}": v for k, v in self.stage1.blocks().items()}
        out.update({f"stage2.{k}": v for k, v in self.stage2.blocks().items()})
        out["head.weight"] = self.head.weight
        out["head.bias"] = self.head.bias
        return out

    @classmethod
    def from_blocks(cls, blocks: dict) -> "Model":
        def unit(prefix):
            return StcaParams.from_blocks(
                {k.split(".", 1)[1]: v for k, v in blocks.items() if k.startswith(prefix + ".")}
            )
        return cls(unit("stage1"), unit("stage2"), HeadParams(blocks["head.weight"], blocks["head.bias"]))

    def map(self, fn) -> "Model":
        return Model.from_blocks({k: fn(k, v) for k, v in self.blocks().items()})

    def __eq__(self, other):
        if not isinstance(other, Model):
            return NotImplemented
        a, b = self.blocks(), other.blocks()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)

    __hash__ = None


WS_INITS = ("gaussian", "folded")


def init_model(config: StcaConfig, num_classes: int, seed: int, std: float = 0.01,
               ws_init: str = "gaussian") -> Model:
    """Independent N(0, std^2) draws for both units and the head; zero head bias.

    ``ws_init="folded"`` replaces each unit's ``w_s`` draw by its absolute
    value, so the pre-log spatial logits start positive instead of mostly
    sitting on the clamp.
    """
    if ws_init not in WS_INITS:
        raise ValueError(f"ws_init must be one of {WS_INITS}, got {ws_init!r}")
    seeds = np.random.SeedSequence(seed).generate_state(3)
    s1 = default_init_params(config, int(seeds[0]), std)
    s2 = default_init_params(config, int(seeds[1]), std)
    if ws_init == "folded":
        s1 = dataclasses.replace(s1, w_s=np.abs(s1.w_s))
        s2 = dataclasses.replace(s2, w_s=np.abs(s2.w_s))
    rng = np.random.default_rng(int(seeds[2]))
    head = HeadParams(rng.normal(0.0, std, (config.d_v, num_classes + 1)), np.zeros(num_classes + 1))
    return Model(s1, s2, head)


# -- training ---------------------------------------------------------------

def sample_triplet(sequence: Sequence[FrameProposals], rng_seed, config: StcaConfig) -> TrainingTriplet:
    """First key frame uniform; the other key frame and the support frame within +-tau of it.

    A single-frame sequence (a still image) yields three copies of that frame.
    ``rng_seed`` may be an integer or a ``numpy.random.Generator``.
    """
    if len(sequence) == 0:
        raise EmptySequence("cannot sample a triplet from an empty sequence")
    rng = np.random.default_rng(rng_seed)
    last = len(sequence) - 1
    first = int(rng.integers(0, len(sequence)))
    other, support = (int(np.clip(first + d, 0, last)) for d in rng.integers(-config.tau, config.tau + 1, size=2))
    return TrainingTriplet(sequence[first], sequence[support], sequence[other])


def stage1_groups(triplet: TrainingTriplet):
    """``((targets_a, candidates_a), (targets_b, candidates_b))``; each key frame attends to itself and the support frame."""
    a, s, b = triplet.key_a.to_set(), triplet.support.to_set(), triplet.key_b.to_set()
    return (a, ProposalSet.concat([a, s])), (b, ProposalSet.concat([b, s]))


def stage2_group(enhanced_a: ProposalSet, enhanced_b: ProposalSet):
    mixed = ProposalSet.concat([enhanced_a, enhanced_b])
    return mixed, mixed


def head_forward(features: np.ndarray, head: HeadParams) -> np.ndarray:
    if features.ndim != 2 or features.shape[1] != head.weight.shape[0]:
        raise ValueError(f"features {features.shape} do not match head input width {head.weight.shape[0]}")
    return features @ head.weight + head.bias


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _label_array(labels, num_classes: int) -> np.ndarray:
    out = np.array([-1 if y is None else y for y in labels], dtype=np.int64)
    if np.any(out > num_classes) or np.any(out < -1):
        raise LabelMismatch(f"labels must lie in [0, {num_classes}]")
    if not np.any(out >= 0):
        raise LabelMismatch("triplet has no labelled key-frame proposals")
    return out


def _forward_backward(triplet: TrainingTriplet, model: Model, config: StcaConfig):
    labels = _label_array(triplet.labels, model.head.num_classes)
    (ta, ca), (tb, cb) = stage1_groups(triplet)
    if config.variant == "none":
        feats = np.concatenate([ta.features, tb.features])
    else:
        en_a, cache_a = stca_forward(ta, ca, model.stage1, config)
        en_b, cache_b = stca_forward(tb, cb, model.stage1, config)
        targets, candidates = stage2_group(ta.with_features(en_a), tb.with_features(en_b))
        feats, cache_2 = stca_forward(targets, candidates, model.stage2, config)
    if len(labels) != feats.shape[0]:
        raise LabelMismatch(f"{len(labels)} labels for {feats.shape[0]} key-frame proposals")

    logits = head_forward(feats, model.head)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    probs = np.exp(log_probs)
    rows = np.flatnonzero(labels >= 0)
    n = len(rows)
    loss = float(-np.sum(log_probs[rows, labels[rows]]) / n)

    d_logits = np.zeros_like(probs)
    d_logits[rows] = probs[rows]
    d_logits[rows, labels[rows]] -= 1.0
    d_logits /= n
    g_head = HeadParams(feats.T @ d_logits, d_logits.sum(axis=0))
    if config.variant == "none":
        zeros = model.stage1.zeros_like()
        return loss, Model(zeros, model.stage2.zeros_like(), g_head)

    g2 = stca_backward(cache_2, d_logits @ model.head.weight.T)
    d_mixed = g2.targets + g2.candidates
    n_a = len(ta)
    g_a = stca_backward(cache_a, d_mixed[:n_a])
    g_b = stca_backward(cache_b, d_mixed[n_a:])
    g1 = StcaParams.from_blocks({k: v + g_b.params.blocks()[k] for k, v in g_a.params.blocks().items()})
    return loss, Model(g1, g2.params, g_head)


def pipeline_loss(triplet: TrainingTriplet, model: Model, config: StcaConfig) -> float:
    return _forward_backward(triplet, model, config)[0]


def pipeline_gradients(triplet: TrainingTriplet, model: Model, config: StcaConfig):
    """``(loss, gradient)`` with the gradient laid out as a :class:`Model`."""
    return _forward_backward(triplet, model, config)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 0.03
    lr_drop_step: int = 1400
    lr_drop_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 4
    num_classes: int = 2
    init_std: float = 0.1
    ws_init: str = "gaussian"
    seed: int = 0

    def lr_at(self, step: int) -> float:
        return self.lr * (self.lr_drop_factor if step >= self.lr_drop_step else 1.0)


def zero_velocity(model: Model) -> Model:
    return model.map(lambda _, v: np.zeros_like(v))


def batch_gradients(triplets, model: Model, config: StcaConfig):
    """Mean loss and gradient over a batch of triplets (a single triplet is a batch of one)."""
    if isinstance(triplets, TrainingTriplet):
        triplets = [triplets]
    total, acc = 0.0, None
    for triplet in triplets:
        loss, grads = pipeline_gradients(triplet, model, config)
        total += loss
        blocks = grads.blocks()
        acc = blocks if acc is None else {k: acc[k] + blocks[k] for k in acc}
    n = len(triplets)
    return total / n, Model.from_blocks({k: v / n for k, v in acc.items()})


def train_step(triplet, model: Model, velocity: Model, config: StcaConfig, lr: float,
               momentum: float = 0.9, weight_decay: float = 5e-4):
    """One SGD step with momentum and weight decay. Returns ``(loss, model, velocity)``.

    ``triplet`` may also be a list of triplets whose gradients are averaged.
    Uses the heavy-ball form ``v <- m v - lr (g + wd theta)``, ``theta <- theta + v``;
    weight decay applies to every matrix but not to the head bias.
    """
    loss, grads = batch_gradients(triplet, model, config)
    g, theta, vel = grads.blocks(), model.blocks(), velocity.blocks()
    new_theta, new_vel = {}, {}
    for name, value in theta.items():
        decay = 0.0 if name == "head.bias" else weight_decay
        v = momentum * vel[name] - lr * (g[name] + decay * value)
        new_vel[name] = v
        new_theta[name] = value + v
    return loss, Model.from_blocks(new_theta), Model.from_blocks(new_vel)


def train(videos: Sequence[Sequence[FrameProposals]], config: StcaConfig, train_cfg: TrainConfig,
          model: Optional[Model] = None, callback=None):
    """Run the training loop. Returns ``(model, losses)``; triplets come from uniformly chosen videos."""
    if not videos or any(len(v) == 0 for v in videos):
        raise EmptySequence("training requires non-empty videos")
    init_seed, sample_seed = np.random.SeedSequence(train_cfg.seed).generate_state(2)
    if model is None:
        model = init_model(config, train_cfg.num_classes, int(init_seed), train_cfg.init_std,
                           train_cfg.ws_init)
    rng = np.random.default_rng(int(sample_seed))
    velocity = zero_velocity(model)
    losses = []
    for step in range(train_cfg.steps):
        batch = [sample_triplet(videos[int(rng.integers(0, len(videos)))], rng, config)
                 for _ in range(train_cfg.batch_size)]
        loss, model, velocity = train_step(batch, model, velocity, config, train_cfg.lr_at(step),
                                           train_cfg.momentum, train_cfg.weight_decay)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        losses.append(loss)
        if callback is not None:
            callback(step, loss)
    return model, losses


# -- inference --------------------------------------------------------------

def pad_boundary(sequence: Sequence[FrameProposals], needed_range) -> list:
    """Frames for positions ``lo..hi`` inclusive, replicating the boundary frames.

    Copies keep the frame id of the boundary frame they replicate.
    """
    if len(sequence) == 0:
        raise EmptySequence("cannot pad an empty sequence")
    lo, hi = needed_range
    last = len(sequence) - 1
    return [sequence[min(max(p, 0), last)] for p in range(lo, hi + 1)]


@dataclass(frozen=True, eq=False)
class BufferEntry:
    boxes: np.ndarray
    frames: np.ndarray
    features: np.ndarray
    generation: str

    def as_set(self) -> ProposalSet:
        return ProposalSet(self.features, self.boxes, self.frames)


class FeatureBuffer:
    """Per-slot store of proposal features, tagged by generation."""

    def __init__(self, generation: str):
        self.generation = generation
        self._entries = {}

    def __contains__(self, slot):
        return slot in self._entries

    def __len__(self):
        return len(self._entries)

    def put(self, slot: int, proposals: ProposalSet) -> None:
        self._entries[slot] = BufferEntry(proposals.boxes, proposals.frames, proposals.features, self.generation)

    def get(self, slot: int) -> BufferEntry:
        return self._entries[slot]

    def evict_before(self, slot: int) -> None:
        for s in [s for s in self._entries if s < slot]:
            del self._entries[s]


@dataclass(frozen=True, eq=False)
class Detection:
    frame_id: int
    logits: np.ndarray
    weights: Optional[np.ndarray] = None  # last-unit attention, targets x candidates
    candidate_frames: Optional[np.ndarray] = None

    @property
    def posterior(self) -> np.ndarray:
        return softmax(self.logits)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)


class SlidingInference:
    """Buffered three-stage inference over one video.

    Slot ``p`` is a position in the boundary-padded sequence. The raw buffer
    holds slot features; the enhanced buffer holds slot features after the
    first unit, computed against raw slots ``p-K..p+K``. Detection at key
    slot ``p`` runs the second unit over enhanced slots ``p-K..p+K``. Enhanced
    slots are reused as the window slides.
    """

    def __init__(self, sequence: Sequence[FrameProposals], model: Model, config: StcaConfig, threads: int = 1):
        if len(sequence) == 0:
            raise EmptySequence("cannot run inference on an empty sequence")
        if config.window % 2 == 0:
            raise EvenWindow(f"window must be odd, got {config.window}")
        self.sequence = list(sequence)
        self.model = model
        self.config = config
        self.threads = max(1, int(threads))
        self.raw = FeatureBuffer(RAW)
        self.enhanced = FeatureBuffer(ENHANCED)

    def _raw_slot(self, slot: int) -> BufferEntry:
        if slot not in self.raw:
            frame = pad_boundary(self.sequence, (slot, slot))[0]
            self.raw.put(slot, frame.to_set())
        return self.raw.get(slot)

    def _window(self, buffer_get, center: int) -> ProposalSet:
        k = self.config.half_window
        return ProposalSet.concat([buffer_get(s).as_set() for s in range(center - k, center + k + 1)])

    def _enhance(self, slot: int) -> ProposalSet:
        target = self._raw_slot(slot).as_set()
        candidates = self._window(self._raw_slot, slot)
        out, _ = stca_forward(target, candidates, self.model.stage1, self.config, keep_cache=False)
        return target.with_features(out)

    def _enhanced_slot(self, slot: int) -> BufferEntry:
        entry = self.enhanced.get(slot)
        if entry.generation != ENHANCED:
            raise RuntimeError(f"slot {slot} holds {entry.generation} features in the enhanced buffer")
        return entry

    def _fill(self, slots) -> None:
        missing = [s for s in slots if s not in self.enhanced]
        k = self.config.half_window
        for s in missing:
            for r in range(s - k, s + k + 1):
                self._raw_slot(r)
        if self.threads > 1 and len(missing) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(self._enhance, missing))
        else:
            results = [self._enhance(s) for s in missing]
        for s, res in zip(missing, results):
            self.enhanced.put(s, res)

    def detect(self, key: int, keep_weights: bool = False) -> Detection:
        frame_id = self.sequence[key].frame_id
        if self.config.variant == "none":
            feats = self.sequence[key].features
            return Detection(frame_id, head_forward(feats, self.model.head))
        k = self.config.half_window
        self._fill(range(key - k, key + k + 1))
        target = self._enhanced_slot(key).as_set()
        candidates = self._window(self._enhanced_slot, key)
        out, cache = stca_forward(target, candidates, self.model.stage2, self.config, keep_cache=keep_weights)
        logits = head_forward(out, self.model.head)
        if keep_weights:
            return Detection(frame_id, logits, cache.weights, candidates.frames)
        return Detection(frame_id, logits)

    def evict(self, key: int) -> None:
        """Drop buffer slots no later key frame >= ``key`` can read."""
        k = self.config.half_window
        self.enhanced.evict_before(key - k)
        self.raw.evict_before(key - 2 * k)


def infer_window(sequence: Sequence[FrameProposals], model: Model, config: StcaConfig,
                 key_frames: Optional[Sequence[int]] = None, threads: int = 1,
                 keep_weights: bool = False) -> list:
    """Detections for each key frame (sequence indices, default all), sliding in order."""
    session = SlidingInference(sequence, model, config, threads)
    keys = list(range(len(sequence)) if key_frames is None else key_frames)
    ascending = all(a <= b for a, b in zip(keys, keys[1:]))
    out = []
    for key in keys:
        out.append(session.detect(key, keep_weights))
        if ascending:
            session.evict(key)
    return out
