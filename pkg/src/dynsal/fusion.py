"""Coarse map fusion and spatial attention.

The two branch decoders each emit a coarse saliency map. Their per-level
normalized weights are summed into a pair of reliability scores that convexly
blend the coarse maps; the blended map then gates the fused feature before
the final decoder. Addition fusion and attention-free ablations live here
too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor, ShapeError
from . import ops

__all__ = [
    "BranchReliability", "branch_reliability",
    "fuse_coarse_maps", "fuse_coarse_maps_sum", "apply_spatial_attention",
]


@dataclass
class BranchReliability:
    """Convex pair of per-branch reliability scores.

    Scalars in the plain-float path, (B,1,1,1) tensors inside the training
    graph. eps_s + eps_t = 1 up to rounding in both cases.
    """

    eps_s: object
    eps_t: object


def _channel_sum(x: Tensor) -> Tensor:
    n = x.data.shape[1]
    total = ops.slice_channels(x, 0, 1)
    for i in range(1, n):
        total = total + ops.slice_channels(x, i, i + 1)
    return total


def branch_reliability(v_s: object, v_t: object) -> BranchReliability:
    """Reduce the two normalized weight vectors to one reliability pair:
    eps_s = sum(v_s) / (sum(v_s) + sum(v_t)), eps_t likewise.

    Accepts (B,n,1,1) tensors (summed over the weight axis, in-graph) or
    plain 1-D float sequences.
    """
    if isinstance(v_s, Tensor) != isinstance(v_t, Tensor):
        raise TypeError("mixed tensor/scalar weight vectors")
    if isinstance(v_s, Tensor):
        if v_s.data.shape != v_t.data.shape or v_s.data.ndim != 4:
            raise ShapeError(
                f"weight stacks differ: {v_s.data.shape} vs {v_t.data.shape}")
        s, t = _channel_sum(v_s), _channel_sum(v_t)
        denom = s + t
        return BranchReliability(s / denom, t / denom)
    a = np.asarray(v_s, dtype=np.float64)
    b = np.asarray(v_t, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape or a.size == 0:
        raise ShapeError(f"weight vectors differ: {a.shape} vs {b.shape}")
    s = float(np.sum(a))
    t = float(np.sum(b))
    return BranchReliability(s / (s + t), t / (s + t))


def _check_maps(s_s: Tensor, s_t: Tensor) -> None:
    if s_s.data.shape != s_t.data.shape:
        raise ShapeError(
            f"coarse maps differ: {s_s.data.shape} vs {s_t.data.shape}")


def fuse_coarse_maps(s_s: Tensor, s_t: Tensor, r: BranchReliability) -> Tensor:
    """Convex blend of the branch coarse maps by the reliability pair."""
    _check_maps(s_s, s_t)
    return s_s * r.eps_s + s_t * r.eps_t


def fuse_coarse_maps_sum(s_s: Tensor, s_t: Tensor) -> Tensor:
    """Ablation blend: plain addition, clamped back to [0,1]."""
    _check_maps(s_s, s_t)
    return (s_s + s_t).clamp(0.0, 1.0)


def apply_spatial_attention(f: Tensor, s_c: Tensor) -> Tensor:
    """Emphasize fused-feature activations under the coarse map:
    f * s_c + f, with s_c broadcast across channels (bilinearly upsampled
    first when its spatial dims are smaller than the feature's)."""
    if f.data.ndim != 4 or s_c.data.ndim != 4 or s_c.data.shape[1] != 1:
        raise ShapeError(
            f"need (B,C,H,W) feature and (B,1,h,w) map, got "
            f"{f.data.shape} and {s_c.data.shape}")
    if f.data.shape[0] != s_c.data.shape[0]:
        raise ShapeError(
            f"batch mismatch: {f.data.shape[0]} vs {s_c.data.shape[0]}")
    _, _, H, W = f.data.shape
    _, _, h, w = s_c.data.shape
    if (h, w) != (H, W):
        if h > H or w > W:
            raise ShapeError(
                f"coarse map {h}x{w} exceeds feature dims {H}x{W}")
        s_c = ops.upsample_bilinear(s_c, H, W)
    return f * s_c + f
