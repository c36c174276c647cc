"""Sinusoidal embeddings of pairwise box geometry and frame offsets."""
from __future__ import annotations

import numpy as np

from .proposals import BoundingBox


def _frequencies(dim: int, base: float) -> np.ndarray:
    z = np.arange(dim // 2)
    return base ** (-2.0 * z / dim)


def sinusoid_embed(r, dim: int, base: float = 1000.0) -> np.ndarray:
    """Interleaved ``sin(r / base**(2z/dim))``, ``cos(...)`` of length ``dim``.

    ``r`` may be a scalar or an array; the embedding is appended as a new last
    axis.
    """
    if dim % 2:
        raise ValueError(f"embedding dimension must be even, got {dim}")
    r = np.asarray(r, dtype=float)
    arg = r[..., None] * _frequencies(dim, base)
    out = np.empty(r.shape + (dim,))
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


def geometric_relation(p_i: BoundingBox, p_j: BoundingBox, eps_geom: float = 1e-3) -> np.ndarray:
    """Scale/translation invariant 4-vector relating target ``p_i`` to candidate ``p_j``."""
    return np.array([
        np.log(max(abs(p_i.cx - p_j.cx) / p_j.w, eps_geom)),
        np.log(max(abs(p_i.cy - p_j.cy) / p_j.h, eps_geom)),
        np.log(p_i.w / p_j.w),
        np.log(p_i.h / p_j.h),
    ])


def pairwise_relations(target_boxes: np.ndarray, candidate_boxes: np.ndarray, eps_geom: float = 1e-3):
    """Relation components for every (target, candidate) pair.

    Returns a tuple of four ``(n_targets, n_candidates)`` arrays in the order
    x-offset, y-offset, width ratio, height ratio.
    """
    rx, ry = pairwise_offsets(target_boxes, candidate_boxes, eps_geom)
    ti = target_boxes[:, None, :]
    cj = candidate_boxes[None, :, :]
    rw = np.log(ti[..., 2] / cj[..., 2])
    rh = np.log(ti[..., 3] / cj[..., 3])
    return rx, ry, rw, rh


def pairwise_offsets(target_boxes: np.ndarray, candidate_boxes: np.ndarray, eps_geom: float = 1e-3):
    """The two centre-offset components of :func:`pairwise_relations`."""
    ti = target_boxes[:, None, :]
    cj = candidate_boxes[None, :, :]
    rx = np.log(np.maximum(np.abs(ti[..., 0] - cj[..., 0]) / cj[..., 2], eps_geom))
    ry = np.log(np.maximum(np.abs(ti[..., 1] - cj[..., 1]) / cj[..., 3], eps_geom))
    return rx, ry


def spatial_embed(rel, d_phi: int, base: float = 1000.0) -> np.ndarray:
    """Concatenate the sinusoid embeddings of the four relation entries (length ``4*d_phi``)."""
    rel = np.asarray(rel, dtype=float)
    return np.concatenate([sinusoid_embed(rel[..., k], d_phi, base) for k in range(4)], axis=-1)


def temporal_embed(tau, d_v: int, base: float = 1000.0) -> np.ndarray:
    """Embedding of the frame offset ``tau`` (candidate frame minus target frame)."""
    return sinusoid_embed(tau, d_v, base)
