"""Spatio-temporal context aggregation operator with an analytic backward pass.

One application enhances every target proposal with an attention-weighted sum
of raw candidate features::

    e_c = (F_t Wq)(F_g Wk)^T / sqrt(d_v)
    e_s = phi(r_ij) Ws
    e_t = (F_t Wq)(phi(tau_ij) Wt)^T / sqrt(d_v)
    e   = e_c + log(max(e_s, eps)) + e_t
    out = F_t + softmax_rows(e) F_g
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .position import _frequencies, pairwise_offsets, pairwise_relations, temporal_embed
from .proposals import ProposalSet, StcaConfig, StcaParams, as_set


class ShapeMismatch(ValueError):
    pass


class EmptyCandidateSet(ValueError):
    pass


class CacheMismatch(ValueError):
    pass


def _check_width(name: str, arr: np.ndarray, d_v: int) -> None:
    if arr.ndim != 2 or arr.shape[1] != d_v:
        raise ShapeMismatch(f"{name} has shape {arr.shape}, expected (*, {d_v})")


def content_logits(targets: np.ndarray, candidates: np.ndarray, w_q: np.ndarray, w_k: np.ndarray) -> np.ndarray:
    d_v = w_q.shape[0]
    _check_width("targets", targets, d_v)
    _check_width("candidates", candidates, d_v)
    if w_k.shape != w_q.shape:
        raise ShapeMismatch(f"w_q {w_q.shape} and w_k {w_k.shape} differ")
    return (targets @ w_q) @ (candidates @ w_k).T / np.sqrt(d_v)


def _spatial_terms(rel, d_phi: int, base: float):
    """Yield ``(column, sin_or_cos(arg))`` over every embedding coordinate.

    Streams the pairwise embedding one coordinate at a time so that the full
    ``(targets, candidates, 4*d_phi)`` tensor is never materialised.
    """
    freqs = _frequencies(d_phi, base)
    for k, r in enumerate(rel):
        for z, f in enumerate(freqs):
            arg = r * f
            yield k * d_phi + 2 * z, np.sin(arg)
            yield k * d_phi + 2 * z + 1, np.cos(arg)


def _spatial_from_relations(rel, w_s: np.ndarray, d_phi: int, base: float) -> np.ndarray:
    e_s = np.zeros(rel[0].shape)
    ws = w_s[:, 0]
    for col, term in _spatial_terms(rel, d_phi, base):
        e_s += ws[col] * term
    return e_s


def _spatial_fast(target_boxes: np.ndarray, candidate_boxes: np.ndarray, rel, w_s: np.ndarray,
                  d_phi: int, base: float) -> np.ndarray:
    """Same value as :func:`_spatial_from_relations`, cheaper for large sets.

    The width and height entries are differences of per-box log sizes, so
    their sines and cosines factor by angle addition into one small matrix
    product each. The two offset entries still need per-pair work, but each
    weighted sine/cosine pair folds into one shifted sine,
    ``a sin x + b cos x = hypot(a, b) sin(x + atan2(b, a))``.
    """
    freqs = _frequencies(d_phi, base)
    ws = w_s[:, 0]
    e_s = np.zeros(rel[0].shape)
    arg = np.empty(rel[0].shape)
    for k in (0, 1):
        w_sin, w_cos = ws[k * d_phi:(k + 1) * d_phi:2], ws[k * d_phi + 1:(k + 1) * d_phi:2]
        amp, phase = np.hypot(w_sin, w_cos), np.arctan2(w_cos, w_sin)
        for z, f in enumerate(freqs):
            np.multiply(rel[k], f, out=arg)
            arg += phase[z]
            np.sin(arg, out=arg)
            arg *= amp[z]
            e_s += arg
    for k in (2, 3):
        a = np.log(target_boxes[:, k])[:, None] * freqs
        b = np.log(candidate_boxes[:, k])[:, None] * freqs
        w_sin, w_cos = ws[k * d_phi:(k + 1) * d_phi:2], ws[k * d_phi + 1:(k + 1) * d_phi:2]
        sa, ca = np.sin(a), np.cos(a)
        left = np.hstack([sa * w_sin + ca * w_cos, sa * w_cos - ca * w_sin])
        right = np.hstack([np.cos(b), np.sin(b)])
        e_s += left @ right.T
    return e_s


def spatial_logits(target_boxes: np.ndarray, candidate_boxes: np.ndarray, w_s: np.ndarray,
                   config: StcaConfig) -> np.ndarray:
    """Pre-log spatial logits, one scalar per (target, candidate) pair."""
    if w_s.shape != (4 * config.d_phi, 1):
        raise ShapeMismatch(f"w_s has shape {w_s.shape}, expected ({4 * config.d_phi}, 1)")
    if target_boxes.ndim != 2 or target_boxes.shape[1] != 4 or candidate_boxes.ndim != 2 or candidate_boxes.shape[1] != 4:
        raise ShapeMismatch("boxes must have shape (*, 4)")
    rel = pairwise_relations(target_boxes, candidate_boxes, config.eps_geom)
    return _spatial_from_relations(rel, w_s, config.d_phi, config.sinusoid_base)


def frame_offsets(target_frames: np.ndarray, candidate_frames: np.ndarray, signed: bool = True) -> np.ndarray:
    tau = candidate_frames[None, :] - target_frames[:, None]
    return tau if signed else np.abs(tau)


def _temporal_keys(target_frames: np.ndarray, candidate_frames: np.ndarray, signed: bool, w_t: np.ndarray,
                   d_v: int, base: float):
    """Embed each distinct frame offset once.

    Returns the embeddings, their projections and, per pair, the index of
    its offset among the sorted distinct values.
    """
    ut, inv_t = np.unique(target_frames, return_inverse=True)
    uc, inv_c = np.unique(candidate_frames, return_inverse=True)
    small = frame_offsets(ut, uc, signed)
    values, small_index = np.unique(small, return_inverse=True)
    index = small_index.reshape(small.shape)[inv_t.ravel()[:, None], inv_c.ravel()[None, :]]
    phi = temporal_embed(values, d_v, base)
    return phi, phi @ w_t, index


def temporal_logits(targets: np.ndarray, target_frames: np.ndarray, candidate_frames: np.ndarray,
                    w_q: np.ndarray, w_t: np.ndarray, config: StcaConfig) -> np.ndarray:
    d_v = config.d_v
    _check_width("targets", targets, d_v)
    if len(target_frames) != targets.shape[0]:
        raise ShapeMismatch("one frame id per target is required")
    if w_q.shape != (d_v, d_v) or w_t.shape != (d_v, d_v):
        raise ShapeMismatch("w_q and w_t must be d_v x d_v")
    _, keys, index = _temporal_keys(np.asarray(target_frames), np.asarray(candidate_frames), config.signed_tau,
                                    w_t, d_v, config.sinusoid_base)
    scores = (targets @ w_q) @ keys.T / np.sqrt(d_v)
    return np.take_along_axis(scores, index, axis=1)


def fuse_logits(e_c: np.ndarray, e_s: Optional[np.ndarray], e_t: Optional[np.ndarray],
                eps_spatial: float) -> np.ndarray:
    """Fused logit; a ``None`` term is left out of the sum entirely."""
    e = e_c.copy()
    for name, term in (("e_s", e_s), ("e_t", e_t)):
        if term is not None and term.shape != e_c.shape:
            raise ShapeMismatch(f"{name} shape {term.shape} != e_c shape {e_c.shape}")
    if e_s is not None:
        e += np.log(np.maximum(e_s, eps_spatial))
    if e_t is not None:
        e += e_t
    return e


def softmax_rows(e: np.ndarray) -> np.ndarray:
    z = np.exp(e - e.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def aggregate(targets: np.ndarray, w: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    if w.shape != (targets.shape[0], candidates.shape[0]):
        raise ShapeMismatch(
            f"weights {w.shape} do not match {targets.shape[0]} targets x {candidates.shape[0]} candidates"
        )
    if targets.shape[1] != candidates.shape[1]:
        raise ShapeMismatch("target and candidate feature widths differ")
    return targets + w @ candidates


@dataclass(frozen=True, eq=False)
class StcaForwardCache:
    config: StcaConfig
    params: StcaParams
    targets: ProposalSet
    candidates: ProposalSet
    q: np.ndarray
    k: np.ndarray
    e_c: np.ndarray
    e_s: Optional[np.ndarray]
    e_t: Optional[np.ndarray]
    e: np.ndarray
    weights: np.ndarray
    relations: Optional[tuple] = None
    q_t: Optional[np.ndarray] = None
    tau_phi: Optional[np.ndarray] = None
    tau_keys: Optional[np.ndarray] = None
    tau_index: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class StcaGrads:
    params: StcaParams
    targets: np.ndarray
    candidates: np.ndarray


def stca_forward(targets, candidates, params: StcaParams, config: StcaConfig, keep_cache: bool = True):
    """Enhance ``targets`` against ``candidates``. Returns ``(features, cache)``.

    With ``keep_cache=False`` the logits are fused in place and no cache is
    built (the second return value is ``None``); the features are bitwise
    the same. Inference uses this to keep large windows cheap.
    """
    targets, candidates = as_set(targets), as_set(candidates)
    if len(candidates) == 0:
        raise EmptyCandidateSet("at least one candidate proposal is required")
    d_v = config.d_v
    _check_width("targets", targets.features, d_v)
    _check_width("candidates", candidates.features, d_v)
    try:
        params.check(config)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    scale = 1.0 / np.sqrt(d_v)
    f_t, f_g = targets.features, candidates.features

    q = f_t @ params.w_q
    k = f_g @ params.w_k
    if not keep_cache:
        return _forward_lean(targets, candidates, params, config, q, k, scale), None
    e_c = q @ k.T * scale

    e_s = rel = None
    if config.use_spatial:
        rel = pairwise_relations(targets.boxes, candidates.boxes, config.eps_geom)
        e_s = _spatial_fast(targets.boxes, candidates.boxes, rel, params.w_s, config.d_phi,
                            config.sinusoid_base)

    e_t = q_t = phi = keys = index = None
    if config.use_temporal:
        q_t = q if config.share_query else f_t @ params.w_qt
        phi, keys, index = _temporal_keys(targets.frames, candidates.frames, config.signed_tau, params.w_t,
                                          d_v, config.sinusoid_base)
        e_t = np.take_along_axis(q_t @ keys.T * scale, index, axis=1)

    e = fuse_logits(e_c, e_s, e_t, config.eps_spatial)
    w = softmax_rows(e)
    out = aggregate(f_t, w, f_g)
    cache = StcaForwardCache(config, params, targets, candidates, q, k, e_c, e_s, e_t, e, w,
                             rel, q_t, phi, keys, index)
    return out, cache


def _forward_lean(targets, candidates, params, config, q, k, scale):
    # same operations and order as the cached path, reusing one buffer
    e = q @ k.T * scale
    if config.use_spatial:
        offsets = pairwise_offsets(targets.boxes, candidates.boxes, config.eps_geom)
        e_s = _spatial_fast(targets.boxes, candidates.boxes, offsets, params.w_s, config.d_phi,
                            config.sinusoid_base)
        np.maximum(e_s, config.eps_spatial, out=e_s)
        e += np.log(e_s, out=e_s)
        del e_s
    if config.use_temporal:
        q_t = q if config.share_query else targets.features @ params.w_qt
        _, keys, index = _temporal_keys(targets.frames, candidates.frames, config.signed_tau, params.w_t,
                                        config.d_v, config.sinusoid_base)
        e += np.take_along_axis(q_t @ keys.T * scale, index, axis=1)
    e -= e.max(axis=1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=1, keepdims=True)
    return aggregate(targets.features, e, candidates.features)


def stca_backward(cache: StcaForwardCache, upstream: np.ndarray) -> StcaGrads:
    """Gradients of ``sum(upstream * out)`` w.r.t. parameters and both feature sets.

    The spatial clamp contributes a zero sub-gradient wherever ``e_s`` is at or
    below ``eps_spatial``.
    """
    cfg, params = cache.config, cache.params
    f_t, f_g = cache.targets.features, cache.candidates.features
    if upstream.shape != f_t.shape:
        raise CacheMismatch(f"upstream shape {upstream.shape} does not match cached output {f_t.shape}")
    d_v = cfg.d_v
    scale = 1.0 / np.sqrt(d_v)
    w = cache.weights

    d_targets = upstream.copy()
    d_cand = w.T @ upstream
    d_w = upstream @ f_g.T
    d_e = w * (d_w - np.sum(w * d_w, axis=1, keepdims=True))

    d_q = d_e @ cache.k * scale
    d_k = d_e.T @ cache.q * scale

    g_ws = np.zeros_like(params.w_s)
    if cache.e_s is not None:
        active = cache.e_s > cfg.eps_spatial
        d_es = np.where(active, d_e / np.where(active, cache.e_s, 1.0), 0.0)
        for col, term in _spatial_terms(cache.relations, cfg.d_phi, cfg.sinusoid_base):
            g_ws[col, 0] = np.vdot(d_es, term)

    g_wt = np.zeros_like(params.w_t)
    g_wqt = None if params.w_qt is None else np.zeros_like(params.w_qt)
    if cache.e_t is not None:
        n_t, n_u = d_e.shape[0], cache.tau_keys.shape[0]
        rows = np.repeat(np.arange(n_t), d_e.shape[1])
        h = np.bincount(rows * n_u + cache.tau_index.ravel(), weights=d_e.ravel(),
                        minlength=n_t * n_u).reshape(n_t, n_u)
        d_qt = h @ cache.tau_keys * scale
        d_keys = h.T @ cache.q_t * scale
        g_wt = cache.tau_phi.T @ d_keys
        if cfg.share_query:
            d_q = d_q + d_qt
        else:
            g_wqt = f_t.T @ d_qt
            d_targets += d_qt @ params.w_qt.T

    g_wq = f_t.T @ d_q
    g_wk = f_g.T @ d_k
    d_targets += d_q @ params.w_q.T
    d_cand += d_k @ params.w_k.T

    grads = StcaParams(g_wq, g_wk, g_ws, g_wt, g_wqt)
    return StcaGrads(grads, d_targets, d_cand)
