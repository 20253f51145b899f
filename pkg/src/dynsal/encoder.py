"""Branch encoder: a small from-scratch backbone producing a 5-level feature
pyramid, a dilated multi-scale module on the deepest level, and a 3-layer
decoder turning the deepest features into a coarse saliency map.

The spatial branch consumes RGB frames, the temporal branch consumes rendered
flow images; both use this identical structure with independent parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError
from . import ops
from .ops import ConvParams

__all__ = [
    "PYRAMID_CHANNELS", "LEVEL_STRIDES", "ASPP_RATES",
    "FeaturePyramid", "BranchOutput", "Aspp", "Decoder", "BranchEncoder",
]

PYRAMID_CHANNELS = (16, 32, 64, 64, 64)
LEVEL_STRIDES = (1, 2, 4, 8, 8)
ASPP_RATES = (1, 6, 12, 18)
DECODER_WIDTHS = (32, 16, 8)


@dataclass
class FeaturePyramid:
    """Five feature levels ordered finest to coarsest."""

    levels: list[Tensor]
    level_strides: tuple[int, ...] = LEVEL_STRIDES

    def __post_init__(self) -> None:
        if len(self.levels) != 5:
            raise ShapeError(f"pyramid needs exactly 5 levels, got {len(self.levels)}")
        if len(self.level_strides) != 5:
            raise ShapeError(f"need 5 level strides, got {self.level_strides}")
        b0, _, h0, w0 = self.levels[0].data.shape
        s0 = self.level_strides[0]
        for lvl, (t, s) in enumerate(zip(self.levels, self.level_strides), start=1):
            b, _, h, w = t.data.shape
            if b != b0:
                raise ShapeError(f"level {lvl}: batch {b} != {b0}")
            if (h * s, w * s) != (h0 * s0, w0 * s0):
                raise ShapeError(
                    f"level {lvl} dims {h}x{w} inconsistent with stride {s}")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(t.data.shape[1] for t in self.levels)

    @property
    def input_size(self) -> tuple[int, int]:
        _, _, h, w = self.levels[0].data.shape
        s = self.level_strides[0]
        return h * s, w * s


@dataclass
class BranchOutput:
    pyramid: FeaturePyramid
    coarse_map: Tensor  # (B, 1, H, W) in (0,1) at input resolution


def _conv_entries(name: str, p: ConvParams) -> dict[str, Tensor]:
    return {f"{name}.w": p.weights, f"{name}.b": p.bias}


class Aspp:
    """Parallel dilated 3x3 branches plus a pooled branch, fused by 1x1 conv.

    Each dilated branch keeps spatial dims (padding = dilation); the pooled
    branch averages globally, projects, and broadcasts back via upsampling.
    """

    def __init__(self, rng: np.random.Generator, in_channels: int,
                 internal: int, out_channels: int,
                 rates: tuple[int, ...] = ASPP_RATES):
        self.rates = tuple(rates)
        self.branches = [
            ConvParams.create(rng, 3, in_channels, internal, dilation=r)
            for r in self.rates
        ]
        self.pool_proj = ConvParams.create(rng, 1, in_channels, internal)
        n_branches = len(self.rates) + 1
        self.fuse = ConvParams.create(rng, 1, internal * n_branches, out_channels)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, p in enumerate(self.branches):
            out.update(_conv_entries(f"rate{self.rates[i]}", p))
        out.update(_conv_entries("pool", self.pool_proj))
        out.update(_conv_entries("fuse", self.fuse))
        return out

    def __call__(self, f: Tensor) -> Tensor:
        _, _, h, w = f.data.shape
        feats = [ops.conv2d(f, p).relu() for p in self.branches]
        pooled = ops.conv2d(ops.global_avg_pool(f), self.pool_proj).relu()
        feats.append(ops.upsample_bilinear(pooled, h, w))
        return ops.conv2d(ops.concat_channels(feats), self.fuse).relu()


class Decoder:
    """Three 3x3 conv+relu reductions, a 1-channel head, upsample, sigmoid."""

    def __init__(self, rng: np.random.Generator, in_channels: int,
                 widths: tuple[int, ...] = DECODER_WIDTHS):
        chain = (in_channels,) + tuple(widths)
        self.convs = [
            ConvParams.create(rng, 3, chain[i], chain[i + 1])
            for i in range(len(widths))
        ]
        self.head = ConvParams.create(rng, 1, chain[-1], 1)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, p in enumerate(self.convs):
            out.update(_conv_entries(f"c{i + 1}", p))
        out.update(_conv_entries("head", self.head))
        return out

    def __call__(self, f: Tensor, out_h: int, out_w: int) -> Tensor:
        x = f
        for p in self.convs:
            x = ops.conv2d(x, p).relu()
        logits = ops.conv2d(x, self.head)
        return ops.upsample_bilinear(logits, out_h, out_w).sigmoid()


class BranchEncoder:
    """One branch: backbone pyramid + dilated context module + coarse decoder.

    Levels 1-4 come from the conv stack (strides 1,2,4,8), level 5 is the
    context module output at level-4 resolution.
    """

    def __init__(self, rng: np.random.Generator,
                 channels: tuple[int, ...] = PYRAMID_CHANNELS,
                 aspp_internal: int = 32,
                 decoder_widths: tuple[int, ...] = DECODER_WIDTHS):
        if len(channels) != 5:
            raise ValueError(f"need 5 pyramid channel counts, got {channels}")
        c1, c2, c3, c4, c5 = channels
        self.channels = tuple(channels)
        self.head = ConvParams.create(rng, 3, 3, c1)
        self.stages = []
        for cin, cout in ((c1, c2), (c2, c3), (c3, c4)):
            down = ConvParams.create(rng, 3, cin, cout, stride=2)
            refine = ConvParams.create(rng, 3, cout, cout)
            self.stages.append((down, refine))
        self.aspp = Aspp(rng, c4, aspp_internal, c5)
        self.decoder = Decoder(rng, c5, decoder_widths)

    def params(self) -> dict[str, Tensor]:
        out = dict(_conv_entries("head", self.head))
        for i, (down, refine) in enumerate(self.stages, start=2):
            out.update(_conv_entries(f"s{i}a", down))
            out.update(_conv_entries(f"s{i}b", refine))
        out.update({f"aspp.{k}": v for k, v in self.aspp.params().items()})
        out.update({f"dec.{k}": v for k, v in self.decoder.params().items()})
        return out

    def extract_pyramid(self, image: Tensor) -> FeaturePyramid:
        if image.data.ndim != 4 or image.data.shape[1] != 3:
            raise ShapeError(
                f"expected (B, 3, H, W) input, got {image.data.shape}")
        _, _, h, w = image.data.shape
        if h % 8 or w % 8:
            raise ShapeError(
                f"input dims {h}x{w} are not divisible by 8; pad or resize the input")
        if image.data.min() < 0.0 or image.data.max() > 1.0:
            raise ValueError("input values must lie in [0,1]")
        levels = [ops.conv2d(image, self.head).relu()]
        for down, refine in self.stages:
            x = ops.conv2d(levels[-1], down).relu()
            levels.append(ops.conv2d(x, refine).relu())
        levels.append(self.aspp(levels[-1]))
        return FeaturePyramid(levels, LEVEL_STRIDES)

    def decode_branch(self, f: Tensor, out_h: int, out_w: int) -> Tensor:
        return self.decoder(f, out_h, out_w)

    def run_branch(self, image: Tensor) -> BranchOutput:
        pyr = self.extract_pyramid(image)
        _, _, h, w = image.data.shape
        coarse = self.decode_branch(pyr.levels[-1], h, w)
        return BranchOutput(pyramid=pyr, coarse_map=coarse)
