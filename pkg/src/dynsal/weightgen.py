"""Per-level reliability weights: each generator maps a 5-level feature
pyramid to one scalar per level, giving a 5-d raw weight vector per sample.

Three parameterizations share this contract: the proposed generator
(project - upsample - concatenate - reduce - pool), a per-level variant that
pools each scale independently, and a fully-connected variant that pools
before the level-mixing affine map.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor
from . import ops
from .ops import ConvParams
from .encoder import FeaturePyramid, _conv_entries

__all__ = [
    "WeightGenerator", "SeparateWeightGenerator", "DenseWeightGenerator",
    "generate_weights", "generate_weights_sep", "generate_weights_fc",
]

PROJECT_WIDTH = 64


class WeightGenerator:
    """Project every level to a common width, upsample to the finest
    resolution, concatenate, reduce to 5 channels with a 1x1 conv (no
    activation before pooling), then average globally. Output (B, 5, 1, 1)."""

    def __init__(self, rng: np.random.Generator, channels: tuple[int, ...],
                 width: int = PROJECT_WIDTH):
        self.projections = [
            ConvParams.create(rng, 1, c, width) for c in channels
        ]
        self.reduce = ConvParams.create(rng, 1, width * len(channels), len(channels))

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, p in enumerate(self.projections, start=1):
            out.update(_conv_entries(f"proj{i}", p))
        out.update(_conv_entries("reduce", self.reduce))
        return out

    def __call__(self, pyramid: FeaturePyramid) -> Tensor:
        _, _, h, w = pyramid.levels[0].data.shape
        feats = []
        for level, p in zip(pyramid.levels, self.projections):
            x = ops.conv2d(level, p).relu()
            feats.append(ops.upsample_bilinear(x, h, w))
        stacked = ops.concat_channels(feats)
        return ops.global_avg_pool(ops.conv2d(stacked, self.reduce))


class SeparateWeightGenerator:
    """Each level pooled to (B, C, 1, 1) and projected to one scalar on its
    own; component i therefore depends on level i only."""

    def __init__(self, rng: np.random.Generator, channels: tuple[int, ...]):
        self.heads = [ConvParams.create(rng, 1, c, 1) for c in channels]

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, p in enumerate(self.heads, start=1):
            out.update(_conv_entries(f"head{i}", p))
        return out

    def __call__(self, pyramid: FeaturePyramid) -> Tensor:
        scalars = [
            ops.conv2d(ops.global_avg_pool(level), p)
            for level, p in zip(pyramid.levels, self.heads)
        ]
        return ops.concat_channels(scalars)


class DenseWeightGenerator:
    """Same projection trunk as the proposed generator, but pooled first and
    mixed by a dense affine map instead of a reduction conv."""

    def __init__(self, rng: np.random.Generator, channels: tuple[int, ...],
                 width: int = PROJECT_WIDTH):
        self.projections = [
            ConvParams.create(rng, 1, c, width) for c in channels
        ]
        total = width * len(channels)
        self.mix_w = Tensor(ops.he_uniform(rng, (len(channels), total), total),
                            requires_grad=True)
        self.mix_b = Tensor(np.zeros(len(channels)), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, p in enumerate(self.projections, start=1):
            out.update(_conv_entries(f"proj{i}", p))
        out["mix.w"] = self.mix_w
        out["mix.b"] = self.mix_b
        return out

    def __call__(self, pyramid: FeaturePyramid) -> Tensor:
        _, _, h, w = pyramid.levels[0].data.shape
        feats = []
        for level, p in zip(pyramid.levels, self.projections):
            x = ops.conv2d(level, p).relu()
            feats.append(ops.upsample_bilinear(x, h, w))
        pooled = ops.global_avg_pool(ops.concat_channels(feats))
        return ops.dense(pooled, self.mix_w, self.mix_b)


def _run(gen, cls, pyramid: FeaturePyramid) -> Tensor:
    if not isinstance(gen, cls):
        raise TypeError(f"expected {cls.__name__}, got {type(gen).__name__}")
    return gen(pyramid)


def generate_weights(gen: WeightGenerator, pyramid: FeaturePyramid) -> Tensor:
    """Raw (B, 5, 1, 1) weight stack from the proposed generator."""
    return _run(gen, WeightGenerator, pyramid)


def generate_weights_sep(gen: SeparateWeightGenerator,
                         pyramid: FeaturePyramid) -> Tensor:
    """Raw weight stack from the per-level generator."""
    return _run(gen, SeparateWeightGenerator, pyramid)


def generate_weights_fc(gen: DenseWeightGenerator,
                        pyramid: FeaturePyramid) -> Tensor:
    """Raw weight stack from the dense-mix generator."""
    return _run(gen, DenseWeightGenerator, pyramid)
