"""Cross attentive aggregation.

Per pyramid level the two branches' raw weights are normalized by a pairwise
softmax, optionally hard-gated when one side dominates by more than tau, and
used to blend the branch features. The blended levels are then fused
progressively coarse-to-fine through conv/upsample transforms (or fine-to-
coarse with pooling transforms for the bottom-up ablation).

Scalar helpers mirror the tensor path for fast algebra checks; the tensor
path is the one the training graph uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor, ShapeError
from . import ops
from .ops import ConvParams
from .encoder import _conv_entries

__all__ = [
    "GatePair", "CaaStageConfig", "KERNEL_SCHEDULE", "GAP_CLAMP", "DEFAULT_TAU",
    "cross_normalize", "cross_threshold",
    "cross_normalize_t", "cross_threshold_t", "raw_threshold_t",
    "aggregate_scale", "naive_aggregate_scale",
    "build_stage_configs", "build_bottom_up_configs",
    "top_down_fuse", "bottom_up_fuse",
]

KERNEL_SCHEDULE = (3, 3, 5, 7, 3)
DEFAULT_TAU = 0.6
# |w_s - w_t| is clamped here before exponentiation; e^36 stays far below the
# float64 integer ceiling so both softmax outputs remain strictly inside (0,1)
GAP_CLAMP = 36.0


@dataclass
class GatePair:
    """One level's pair of branch weights.

    stage records how far along the pipeline the pair is: 'raw' (generator
    output), 'normalized' (pairwise softmax, components in (0,1) summing
    to 1), or 'gated' (after thresholding; the suppressed side is exactly 0,
    otherwise identical to the normalized pair). Components are floats in the
    scalar path and (B,1,1,1) tensors inside the training graph.
    """

    spatial: object
    temporal: object
    stage: str

    def __post_init__(self) -> None:
        if self.stage not in ("raw", "normalized", "gated"):
            raise ValueError(f"unknown gate stage {self.stage!r}")


# ----------------------------------------------------------------------
# scalar path
# ----------------------------------------------------------------------

def cross_normalize(w_s: float, w_t: float) -> GatePair:
    """Pairwise softmax in gap form: only the difference is exponentiated,
    after clamping, so the pair is overflow-safe for any finite inputs, sums
    to 1 within 1e-12, and stays strictly inside (0,1).

    The arithmetic mirrors cross_normalize_t step for step (same exp
    implementation, same operation order), so the scalar and tensor paths
    agree bit for bit.
    """
    if not (math.isfinite(w_s) and math.isfinite(w_t)):
        raise ValueError(f"weights must be finite, got ({w_s}, {w_t})")
    d = min(max(w_s - w_t, -GAP_CLAMP), GAP_CLAMP)
    a = float(np.exp(np.float64(d)))
    denom = a + 1.0
    return GatePair(a / denom, 1.0 / denom, "normalized")


def cross_threshold(v: GatePair, tau: float) -> GatePair:
    """Zero the weaker side when the normalized gap exceeds tau; otherwise
    return the pair unchanged (bit-exactly)."""
    if v.stage != "normalized":
        raise ValueError(f"expected a normalized pair, got stage {v.stage!r}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0,1], got {tau}")
    v_s, v_t = v.spatial, v.temporal
    if v_t - v_s > tau:
        return GatePair(0.0, v_t, "gated")
    if v_t - v_s < -tau:
        return GatePair(v_s, 0.0, "gated")
    return GatePair(v_s, v_t, "gated")


# ----------------------------------------------------------------------
# tensor path
# ----------------------------------------------------------------------

def cross_normalize_t(w_s: Tensor, w_t: Tensor) -> GatePair:
    """Gap-form softmax on tensors: a = e^(w_s - w_t), v_s = a/(a+1)."""
    d = (w_s - w_t).clamp(-GAP_CLAMP, GAP_CLAMP)
    a = d.exp()
    denom = a + 1.0
    return GatePair(a / denom, 1.0 / denom, "normalized")


def _mask_mul(v: Tensor, fire: np.ndarray) -> Tensor:
    # multiply by a constant {0,1} mask: the kept side is exact (x * 1.0 == x
    # bit-for-bit) and the cut side gets zero value and zero gradient
    keep = np.where(fire, 0.0, 1.0)
    return v * Tensor(np.broadcast_to(keep, v.data.shape).copy())


def cross_threshold_t(v: GatePair, tau: float) -> GatePair:
    if v.stage != "normalized":
        raise ValueError(f"expected a normalized pair, got stage {v.stage!r}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0,1], got {tau}")
    gap = v.temporal.data - v.spatial.data
    return GatePair(
        _mask_mul(v.spatial, gap > tau),
        _mask_mul(v.temporal, gap < -tau),
        "gated",
    )


def raw_threshold_t(w_s: Tensor, w_t: Tensor, tau: float) -> GatePair:
    """Softmax-free gating for the ablation that thresholds raw weights."""
    gap = w_t.data - w_s.data
    return GatePair(
        _mask_mul(w_s, gap > tau),
        _mask_mul(w_t, gap < -tau),
        "gated",
    )


# ----------------------------------------------------------------------
# per-scale aggregation
# ----------------------------------------------------------------------

def _check_same_shape(f_s: Tensor, f_t: Tensor) -> None:
    if f_s.data.shape != f_t.data.shape:
        raise ShapeError(
            f"branch features differ: {f_s.data.shape} vs {f_t.data.shape}")


def _as_weight(u: object) -> object:
    return u if isinstance(u, Tensor) else float(u)


def aggregate_scale(f_s: Tensor, f_t: Tensor, gate: GatePair) -> Tensor:
    """Blend the two branches' features with the gated weights."""
    if gate.stage != "gated":
        raise ValueError(f"expected a gated pair, got stage {gate.stage!r}")
    _check_same_shape(f_s, f_t)
    return _as_weight(gate.spatial) * f_s + _as_weight(gate.temporal) * f_t


def naive_aggregate_scale(f_s: Tensor, f_t: Tensor, w_s: object, w_t: object) -> Tensor:
    """Plain weighted sum with raw, un-normalized weights."""
    _check_same_shape(f_s, f_t)
    return _as_weight(w_s) * f_s + _as_weight(w_t) * f_t


# ----------------------------------------------------------------------
# progressive fusion
# ----------------------------------------------------------------------

@dataclass
class CaaStageConfig:
    """Three same-size convs plus one resampling step for one fusion stage."""

    stage: int
    convs: tuple[ConvParams, ConvParams, ConvParams]
    factor: int
    mode: str = "up"  # 'up' bilinear-upsamples after the convs, 'down' pools

    def __post_init__(self) -> None:
        if self.mode not in ("up", "down"):
            raise ValueError(f"unknown resample mode {self.mode!r}")
        if self.factor < 1:
            raise ValueError(f"resample factor must be >= 1, got {self.factor}")
        if len(self.convs) != 3:
            raise ValueError(f"stage {self.stage}: need 3 convs, got {len(self.convs)}")
        for j, p in enumerate(self.convs, start=1):
            if p.stride != 1 or p.dilation != 1 or p.padding != (p.kernel_size - 1) // 2:
                raise ValueError(
                    f"stage {self.stage} conv {j} must preserve spatial dims")
        for j in range(2):
            if self.convs[j].out_channels != self.convs[j + 1].in_channels:
                raise ValueError(
                    f"stage {self.stage}: conv {j + 1} outputs "
                    f"{self.convs[j].out_channels} channels but conv {j + 2} "
                    f"expects {self.convs[j + 1].in_channels}")

    @property
    def in_channels(self) -> int:
        return self.convs[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.convs[2].out_channels

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for j, p in enumerate(self.convs, start=1):
            out.update(_conv_entries(f"t{self.stage}.c{j}", p))
        return out

    def transform(self, x: Tensor) -> Tensor:
        for p in self.convs:
            x = ops.conv2d(x, p).relu()
        if self.mode == "up":
            _, _, h, w = x.data.shape
            return ops.upsample_bilinear(x, h * self.factor, w * self.factor)
        return ops.avg_pool2d(x, self.factor)


def _check_ladder(channels: Sequence[int], strides: Sequence[int]) -> None:
    if not 1 <= len(channels) <= len(KERNEL_SCHEDULE):
        raise ValueError(f"supported level counts are 1..5, got {len(channels)}")
    if len(strides) != len(channels):
        raise ValueError(f"{len(channels)} channels vs {len(strides)} strides")
    for i in range(1, len(strides)):
        if strides[i] % strides[i - 1]:
            raise ValueError(
                f"stride ladder must be divisible: {strides[i - 1]} -> {strides[i]}")


def build_stage_configs(rng: np.random.Generator,
                        channels: Sequence[int],
                        strides: Sequence[int]) -> list[CaaStageConfig]:
    """Coarse-to-fine transforms: stage i consumes the running feature at
    level i's width/resolution and emits level i-1's (stage 1 emits at the
    input resolution, keeping its own width)."""
    _check_ladder(channels, strides)
    configs = []
    for i in range(1, len(channels) + 1):
        cin = channels[i - 1]
        cout = channels[i - 2] if i >= 2 else channels[0]
        k = KERNEL_SCHEDULE[i - 1]
        factor = strides[i - 1] // strides[i - 2] if i >= 2 else strides[0]
        convs = (
            ConvParams.create(rng, k, cin, cin),
            ConvParams.create(rng, k, cin, cin),
            ConvParams.create(rng, k, cin, cout),
        )
        configs.append(CaaStageConfig(i, convs, factor, "up"))
    return configs


def build_bottom_up_configs(rng: np.random.Generator,
                            channels: Sequence[int],
                            strides: Sequence[int]) -> list[CaaStageConfig]:
    """Fine-to-coarse mirror: stage i consumes the running feature at level
    i and emits level i+1's width/resolution by pooling; the last stage keeps
    its width and upsamples back to the input resolution."""
    _check_ladder(channels, strides)
    n = len(channels)
    configs = []
    for i in range(1, n + 1):
        cin = channels[i - 1]
        last = i == n
        cout = channels[i - 1] if last else channels[i]
        k = 3 if last else KERNEL_SCHEDULE[i - 1]
        convs = (
            ConvParams.create(rng, k, cin, cin),
            ConvParams.create(rng, k, cin, cin),
            ConvParams.create(rng, k, cin, cout),
        )
        if last:
            configs.append(CaaStageConfig(i, convs, strides[i - 1], "up"))
        else:
            configs.append(CaaStageConfig(i, convs, strides[i] // strides[i - 1], "down"))
    return configs


def _check_fusion_inputs(levels_s: Sequence[Tensor], levels_t: Sequence[Tensor],
                         gates: Sequence[GatePair],
                         configs: Sequence[CaaStageConfig]) -> None:
    n = len(levels_s)
    if not (n and n == len(levels_t) == len(gates) == len(configs)):
        raise ShapeError(
            f"level/gate/config counts differ: {n}/{len(levels_t)}/"
            f"{len(gates)}/{len(configs)}")
    for i, (a, b) in enumerate(zip(levels_s, levels_t), start=1):
        if a.data.shape != b.data.shape:
            raise ShapeError(
                f"level {i}: branch shapes differ {a.data.shape} vs {b.data.shape}")


def top_down_fuse(levels_s: Sequence[Tensor], levels_t: Sequence[Tensor],
                  gates: Sequence[GatePair],
                  configs: Sequence[CaaStageConfig]) -> Tensor:
    """Blend each level, then refine coarsest to finest: the running feature
    is transformed by the coarser stage's convs/upsample and added to the
    next finer blended level. Returns the stage-1 transform of the finest
    fusion, at input resolution."""
    _check_fusion_inputs(levels_s, levels_t, gates, configs)
    agg = [aggregate_scale(fs, ft, g)
           for fs, ft, g in zip(levels_s, levels_t, gates)]
    f = agg[-1]
    for i in range(len(agg) - 2, -1, -1):
        f = ops.elementwise(configs[i + 1].transform(f), agg[i], "add")
    return configs[0].transform(f)


def bottom_up_fuse(levels_s: Sequence[Tensor], levels_t: Sequence[Tensor],
                   gates: Sequence[GatePair],
                   configs: Sequence[CaaStageConfig]) -> Tensor:
    """Mirror image of top_down_fuse: finest to coarsest with pooling
    transforms, then one final transform upsampled to input resolution."""
    _check_fusion_inputs(levels_s, levels_t, gates, configs)
    agg = [aggregate_scale(fs, ft, g)
           for fs, ft, g in zip(levels_s, levels_t, gates)]
    g = agg[0]
    for i in range(1, len(agg)):
        g = ops.elementwise(configs[i - 1].transform(g), agg[i], "add")
    return configs[-1].transform(g)
