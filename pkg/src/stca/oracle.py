"""Reference implementations and numerical oracles.

Nothing here calls into the vectorised attention or pipeline code paths: the
naive operator is written with explicit scalar loops, and ``naive_infer``
recomputes every window from scratch without buffers.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .proposals import FrameProposals, ProposalSet, StcaConfig, StcaParams, as_set


class NonFiniteEvaluation(FloatingPointError):
    pass


# -- scalar operator ----------------------------------------------------------

def _matvec_row(x, m):
    """Row vector ``x`` times matrix ``m`` with explicit loops."""
    rows, cols = m.shape
    out = [0.0] * cols
    for c in range(cols):
        acc = 0.0
        for r in range(rows):
            acc += x[r] * m[r, c]
        out[c] = acc
    return out


def _dot(a, b):
    acc = 0.0
    for x, y in zip(a, b):
        acc += x * y
    return acc


def _sinusoid(r, dim, base):
    out = []
    for z in range(dim // 2):
        denom = base ** (2.0 * z / dim)
        out.append(math.sin(r / denom))
        out.append(math.cos(r / denom))
    return out


def _relation(bi, bj, eps):
    xi, yi, wi, hi = bi
    xj, yj, wj, hj = bj
    return [
        math.log(max(abs(xi - xj) / wj, eps)),
        math.log(max(abs(yi - yj) / hj, eps)),
        math.log(wi / wj),
        math.log(hi / hj),
    ]


def naive_logits(targets, candidates, params: StcaParams, config: StcaConfig):
    """Per-pair ``(e_c, e_s, e_t)`` nested lists; absent terms are ``None``."""
    t, g = as_set(targets), as_set(candidates)
    d = config.d_v
    root = math.sqrt(d)
    queries = [_matvec_row(t.features[i], params.w_q) for i in range(len(t))]
    keys = [_matvec_row(g.features[j], params.w_k) for j in range(len(g))]
    if config.share_query:
        tqueries = queries
    else:
        tqueries = [_matvec_row(t.features[i], params.w_qt) for i in range(len(t))]
    tau_keys = {}
    e_c, e_s, e_t = [], [], []
    for i in range(len(t)):
        row_c, row_s, row_t = [], [], []
        for j in range(len(g)):
            row_c.append(_dot(queries[i], keys[j]) / root)
            if config.use_spatial:
                rel = _relation(t.boxes[i], g.boxes[j], config.eps_geom)
                emb = []
                for r in rel:
                    emb.extend(_sinusoid(r, config.d_phi, config.sinusoid_base))
                row_s.append(_dot(emb, params.w_s[:, 0]))
            if config.use_temporal:
                tau = int(g.frames[j]) - int(t.frames[i])
                if not config.signed_tau:
                    tau = abs(tau)
                if tau not in tau_keys:
                    tau_keys[tau] = _matvec_row(_sinusoid(float(tau), d, config.sinusoid_base), params.w_t)
                row_t.append(_dot(tqueries[i], tau_keys[tau]) / root)
        e_c.append(row_c)
        e_s.append(row_s)
        e_t.append(row_t)
    return e_c, (e_s if config.use_spatial else None), (e_t if config.use_temporal else None)


def naive_weights(targets, candidates, params: StcaParams, config: StcaConfig) -> np.ndarray:
    e_c, e_s, e_t = naive_logits(targets, candidates, params, config)
    weights = []
    for i, row in enumerate(e_c):
        fused = []
        for j, c in enumerate(row):
            val = c
            if e_s is not None:
                val += math.log(max(e_s[i][j], config.eps_spatial))
            if e_t is not None:
                val += e_t[i][j]
            fused.append(val)
        top = max(fused)
        ex = [math.exp(v - top) for v in fused]
        total = sum(ex)
        weights.append([v / total for v in ex])
    return np.array(weights)


def naive_stca(targets, candidates, params: StcaParams, config: StcaConfig) -> np.ndarray:
    t, g = as_set(targets), as_set(candidates)
    if len(g) == 0:
        raise ValueError("at least one candidate proposal is required")
    if t.features.shape[1] != config.d_v or g.features.shape[1] != config.d_v:
        raise ValueError("feature width does not match d_v")
    weights = naive_weights(t, g, params, config)
    d = config.d_v
    out = np.empty((len(t), d))
    for i in range(len(t)):
        for c in range(d):
            acc = t.features[i, c]
            for j in range(len(g)):
                acc += weights[i, j] * g.features[j, c]
            out[i, c] = acc
    return out


def naive_head(features: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    out = np.empty((features.shape[0], weight.shape[1]))
    for i in range(features.shape[0]):
        row = _matvec_row(features[i], weight)
        for c in range(weight.shape[1]):
            out[i, c] = row[c] + bias[c]
    return out


def _frame_set(frame: FrameProposals) -> ProposalSet:
    n = len(frame.proposals)
    feats = np.array([[float(v) for v in p.feature] for p in frame.proposals])
    boxes = np.array([[p.box.cx, p.box.cy, p.box.w, p.box.h] for p in frame.proposals])
    return ProposalSet(feats, boxes, np.full(n, frame.frame_id, dtype=np.int64))


def _merge(sets):
    return ProposalSet(
        np.vstack([s.features for s in sets]),
        np.vstack([s.boxes for s in sets]),
        np.hstack([s.frames for s in sets]),
    )


def naive_infer(sequence, model, config: StcaConfig, key_frames=None) -> list:
    """Stateless windowed inference: per key frame, rebuild every slot from scratch.

    Returns one logits array per key frame.
    """
    if len(sequence) == 0:
        raise ValueError("cannot run inference on an empty sequence")
    if config.window % 2 == 0:
        raise ValueError(f"window must be odd, got {config.window}")
    last = len(sequence) - 1
    k = config.window // 2
    keys = range(len(sequence)) if key_frames is None else key_frames
    results = []
    for key in keys:
        if config.variant == "none":
            feats = _frame_set(sequence[key]).features
            results.append(naive_head(feats, model.head.weight, model.head.bias))
            continue
        padded = {}
        for pos in range(key - 2 * k, key + 2 * k + 1):
            padded[pos] = _frame_set(sequence[min(max(pos, 0), last)])
        enhanced = {}
        for pos in range(key - k, key + k + 1):
            cands = _merge([padded[p] for p in range(pos - k, pos + k + 1)])
            feats = naive_stca(padded[pos], cands, model.stage1, config)
            enhanced[pos] = ProposalSet(feats, padded[pos].boxes, padded[pos].frames)
        cands = _merge([enhanced[p] for p in range(key - k, key + k + 1)])
        out = naive_stca(enhanced[key], cands, model.stage2, config)
        results.append(naive_head(out, model.head.weight, model.head.bias))
    return results


# -- finite differences ---------------------------------------------------------

def fd_gradient(loss_fn: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5,
                coords=None) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at ``theta`` (flat vector).

    ``coords`` restricts evaluation to a subset of indices; other entries are NaN.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.full(theta.shape, np.nan) if coords is not None else np.empty(theta.shape)
    indices = range(theta.size) if coords is None else coords
    for idx in indices:
        step = np.zeros_like(theta)
        step.flat[idx] = h
        up, down = loss_fn(theta + step), loss_fn(theta - step)
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NonFiniteEvaluation(f"loss is not finite around coordinate {idx}")
        grad.flat[idx] = (up - down) / (2.0 * h)
    return grad


def compare_gradients(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8):
    """Per-coordinate relative error; differences below ``atol`` count as zero error."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff <= atol, 0.0, diff / np.where(denom > 0, denom, 1.0))
    return diff, rel


@dataclass
class BlockReport:
    name: str
    max_abs_error: float = 0.0
    max_rel_error: float = 0.0
    argmax: Optional[list] = None  # [case label, flat index]
    checked: int = 0
    excluded: int = 0

    def update(self, case: str, diff: np.ndarray, rel: np.ndarray, excluded_mask: np.ndarray) -> None:
        keep = ~excluded_mask
        self.excluded += int(excluded_mask.sum())
        self.checked += int(keep.sum())
        if not keep.any():
            return
        rel_k = np.where(keep, rel, -1.0)
        idx = int(np.argmax(rel_k))
        if rel_k[idx] <= 0.0:
            idx = int(np.argmax(np.where(keep, diff, -1.0)))
        worst_abs = float(np.max(diff[keep]))
        if rel_k[idx] > self.max_rel_error or (self.max_rel_error == 0.0 and worst_abs > self.max_abs_error):
            self.max_rel_error = max(self.max_rel_error, float(rel_k[idx]))
            self.argmax = [case, idx]
        self.max_abs_error = max(self.max_abs_error, worst_abs)


@dataclass
class GradCheckReport:
    tolerance: float
    cases: int = 0
    blocks: dict = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def block(self, name: str) -> BlockReport:
        if name not in self.blocks:
            self.blocks[name] = BlockReport(name)
        return self.blocks[name]

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "cases": self.cases,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "blocks": {k: asdict(v) for k, v in self.blocks.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GradCheckReport":
        data = json.loads(text)
        report = cls(data["tolerance"], data["cases"])
        for name, b in data["blocks"].items():
            report.blocks[name] = BlockReport(**b)
        return report

    def __eq__(self, other):
        if not isinstance(other, GradCheckReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_text(self) -> str:
        lines = [f"gradient check over {self.cases} configurations (tolerance {self.tolerance:.0e} relative)"]
        lines.append(f"{'block':<12}{'checked':>9}{'excluded':>10}{'max abs':>12}{'max rel':>12}  worst")
        for b in self.blocks.values():
            worst = "-" if b.argmax is None else f"{b.argmax[0]}[{b.argmax[1]}]"
            lines.append(f"{b.name:<12}{b.checked:>9}{b.excluded:>10}{b.max_abs_error:>12.3e}{b.max_rel_error:>12.3e}  {worst}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def gradcheck_cases(seed: int = 0, d_vs=(4, 8, 16), n_targets=(1, 3), n_candidates=(2, 6, 10),
                    share_query=(True, False)):
    """Seeded random operator configurations spanning the requested grid.

    Yields ``(label, config, targets, candidates, params, upstream)``. The
    spatial weights are redrawn until every pre-log spatial logit is at least
    1e-2 away from zero, so central differences with h=1e-5 stay accurate on
    both sides of the clamp.
    """
    from .attention import spatial_logits

    rng = np.random.default_rng(seed)
    for d in d_vs:
        for nt in n_targets:
            for nc in n_candidates:
                for share in share_query:
                    cfg = StcaConfig(d_v=d, d_phi=4, n_proposals=max(nt, nc), window=3, variant="full",
                                     share_query=share)
                    frames_t = rng.integers(0, 3, nt)
                    frames_c = rng.integers(0, 3, nc)

                    def boxes(n):
                        return np.column_stack([rng.uniform(0, 50, n), rng.uniform(0, 50, n),
                                                rng.uniform(2, 20, n), rng.uniform(2, 20, n)])

                    t = ProposalSet(rng.normal(size=(nt, d)), boxes(nt), frames_t)
                    g = ProposalSet(rng.normal(size=(nc, d)), boxes(nc), frames_c)
                    sc = 1.0 / math.sqrt(d)
                    w_q, w_k, w_t = (rng.normal(0, sc, (d, d)) for _ in range(3))
                    w_qt = None if share else rng.normal(0, sc, (d, d))
                    while True:
                        w_s = rng.normal(0, 0.5, (4 * cfg.d_phi, 1))
                        e_s = spatial_logits(t.boxes, g.boxes, w_s, cfg)
                        if np.all(np.abs(e_s) > 1e-2) and np.any(e_s > 0):
                            break
                    params = StcaParams(w_q, w_k, w_s, w_t, w_qt)
                    upstream = rng.normal(size=(nt, d))
                    label = f"d{d}-t{nt}-c{nc}-{'shared' if share else 'unshared'}"
                    yield label, cfg, t, g, params, upstream


def _kink_mask(w_s_flat, t, g, cfg, h):
    """Coordinates of ``w_s`` whose +-h perturbation moves some e_s across the clamp (or within 1e-7 of it)."""
    from .attention import spatial_logits

    mask = np.zeros(w_s_flat.size, dtype=bool)
    base = spatial_logits(t.boxes, g.boxes, w_s_flat.reshape(-1, 1), cfg) - cfg.eps_spatial
    if np.any(np.abs(base) < 1e-7):
        mask[:] = True
        return mask
    for idx in range(w_s_flat.size):
        for sign in (1.0, -1.0):
            w = w_s_flat.copy()
            w[idx] += sign * h
            shifted = spatial_logits(t.boxes, g.boxes, w.reshape(-1, 1), cfg) - cfg.eps_spatial
            if np.any(np.sign(shifted) != np.sign(base)) or np.any(np.abs(shifted) < 1e-7):
                mask[idx] = True
    return mask


def gradcheck(seed: int = 0, tolerance: float = 1e-5, h: float = 1e-5, corrupt=None, **grid) -> GradCheckReport:
    """Compare analytic operator gradients against central differences.

    The scalar loss is ``sum(upstream * stca_forward(...))``. ``corrupt``, if
    given, is called as ``corrupt(block_name, gradient)`` and its return value
    replaces the analytic gradient (fault injection for tests).
    """
    from .attention import stca_backward, stca_forward

    report = GradCheckReport(tolerance)
    for label, cfg, t, g, params, upstream in gradcheck_cases(seed, **grid):
        report.cases += 1
        out, cache = stca_forward(t, g, params, cfg)
        grads = stca_backward(cache, upstream)
        analytic = dict(grads.params.blocks())
        analytic["targets"] = grads.targets
        analytic["candidates"] = grads.candidates

        def loss_for(name, flat):
            blocks = dict(params.blocks())
            tt, gg = t, g
            if name == "targets":
                tt = t.with_features(flat.reshape(t.features.shape))
            elif name == "candidates":
                gg = g.with_features(flat.reshape(g.features.shape))
            else:
                blocks[name] = flat.reshape(blocks[name].shape)
            res, _ = stca_forward(tt, gg, StcaParams.from_blocks(blocks), cfg)
            return float(np.sum(upstream * res))

        inputs = dict(params.blocks())
        inputs["targets"] = t.features
        inputs["candidates"] = g.features
        for name, value in inputs.items():
            flat = value.ravel().astype(float)
            numeric = fd_gradient(lambda x: loss_for(name, x), flat, h)
            ana = analytic[name]
            if corrupt is not None:
                ana = corrupt(name, ana.copy())
            diff, rel = compare_gradients(ana.ravel(), numeric)
            if name == "w_s":
                excluded = _kink_mask(flat, t, g, cfg, h)
            else:
                excluded = np.zeros(flat.size, dtype=bool)
            report.block(name).update(label, diff, rel, excluded)
    return report
