"""Differentiable spatial primitives over (batch, channels, height, width)
tensors: dilated convolution, corner-aligned bilinear upsampling, pooling,
channel concatenation/slicing, a dense affine map, and a central-difference
gradient checker.

conv2d lowers to im2col plus one BLAS matmul; 1x1/stride-1 kernels skip the
column copy entirely. Upsampling applies cached dense per-axis interpolation
matrices, which makes the equal-size case a bit-exact identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, _accum

__all__ = [
    "ConvParams", "conv2d", "upsample_bilinear", "avg_pool2d",
    "global_avg_pool", "concat_channels", "slice_channels",
    "elementwise", "activation", "dense", "grad_check", "he_uniform",
]


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Fan-in scaled uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class ConvParams:
    """Weights plus geometry for one 2-D convolution.

    kernel_size must be odd; with stride 1 and padding = dilation*(k-1)/2 the
    spatial dims are preserved, which every same-size conv in the network
    relies on.
    """

    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    weights: Tensor = field(default=None)  # (out, in, k, k)
    bias: Tensor = field(default=None)     # (out,)

    def __post_init__(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ValueError("stride/dilation must be >= 1 and padding >= 0")
        k = self.kernel_size
        wshape = (self.out_channels, self.in_channels, k, k)
        if self.weights is None:
            self.weights = Tensor(np.zeros(wshape), requires_grad=True)
        if self.bias is None:
            self.bias = Tensor(np.zeros(self.out_channels), requires_grad=True)
        if self.weights.data.shape != wshape:
            raise ShapeError(f"weights shape {self.weights.data.shape} != {wshape}")
        if self.bias.data.shape != (self.out_channels,):
            raise ShapeError(f"bias shape {self.bias.data.shape} != ({self.out_channels},)")

    @classmethod
    def create(cls, rng: np.random.Generator, kernel_size: int, in_channels: int,
               out_channels: int, stride: int = 1, padding: int | None = None,
               dilation: int = 1) -> "ConvParams":
        """Seeded construction; padding defaults to the same-size choice."""
        if padding is None:
            padding = dilation * (kernel_size - 1) // 2
        fan_in = in_channels * kernel_size * kernel_size
        w = he_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        return cls(kernel_size, in_channels, out_channels, stride, padding, dilation,
                   weights=Tensor(w, requires_grad=True),
                   bias=Tensor(np.zeros(out_channels), requires_grad=True))


def _check_rank4(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{op} expects a rank-4 (B,C,H,W) tensor, got shape {x.data.shape}")


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Dilated 2-D convolution with zero padding."""
    _check_rank4(x, "conv2d")
    B, C, H, W = x.data.shape
    if C != p.in_channels:
        raise ShapeError(
            f"conv2d channel mismatch: input has {C} channels, params expect {p.in_channels}")
    k, s, pad, d = p.kernel_size, p.stride, p.padding, p.dilation
    span = d * (k - 1) + 1
    oh = (H + 2 * pad - span) // s + 1
    ow = (W + 2 * pad - span) // s + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d spatial dims {H}x{W} too small for kernel span {span} with padding {pad}")

    # column layout (B, C*k*k, oh*ow) keeps every reshape here copy-free and
    # turns both passes into batched GEMMs
    w_mat = p.weights.data.reshape(p.out_channels, C * k * k)

    if k == 1 and s == 1 and pad == 0:
        cols3 = x.data.reshape(B, C, H * W)
        padded_shape = None
    else:
        if pad:
            xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
            xp[:, :, pad:pad + H, pad:pad + W] = x.data
        else:
            xp = x.data
        padded_shape = xp.shape
        cols = np.empty((B, C, k, k, oh, ow))
        for ki in range(k):
            i0 = ki * d
            for kj in range(k):
                j0 = kj * d
                cols[:, :, ki, kj] = xp[:, :, i0:i0 + (oh - 1) * s + 1:s,
                                        j0:j0 + (ow - 1) * s + 1:s]
        cols3 = cols.reshape(B, C * k * k, oh * ow)

    out3 = np.matmul(w_mat, cols3)
    out3 += p.bias.data[:, None]
    out_data = out3.reshape(B, p.out_channels, oh, ow)
    weights, bias = p.weights, p.bias

    def backward(g: np.ndarray) -> None:
        g3 = g.reshape(B, p.out_channels, oh * ow)
        if bias.requires_grad:
            _accum(bias, g3.sum(axis=(0, 2)))
        if weights.requires_grad:
            gw = np.matmul(g3, cols3.transpose(0, 2, 1)).sum(axis=0)
            _accum(weights, gw.reshape(weights.data.shape))
        if x.requires_grad:
            g_cols = np.matmul(w_mat.T, g3)
            if padded_shape is None:
                _accum(x, g_cols.reshape(B, C, H, W))
                return
            g_cols = g_cols.reshape(B, C, k, k, oh, ow)
            gxp = np.zeros(padded_shape)
            for ki in range(k):
                i0 = ki * d
                for kj in range(k):
                    j0 = kj * d
                    gxp[:, :, i0:i0 + (oh - 1) * s + 1:s,
                        j0:j0 + (ow - 1) * s + 1:s] += g_cols[:, :, ki, kj]
            _accum(x, gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp)

    return Tensor._result(out_data, (x, weights, bias), backward)


@lru_cache(maxsize=256)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense corner-aligned interpolation matrix (n_out, n_in); rows sum to 1."""
    m = np.zeros((n_out, n_in))
    if n_out == 1:
        m[0, 0] = 1.0
        return m
    scale = (n_in - 1) / (n_out - 1)
    for r in range(n_out):
        pos = r * scale
        lo = int(math.floor(pos))
        lo = min(lo, n_in - 1)
        hi = min(lo + 1, n_in - 1)
        w = pos - lo
        m[r, lo] += 1.0 - w
        m[r, hi] += w
    return m


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Corner-aligned bilinear upsampling (endpoints map to endpoints)."""
    _check_rank4(x, "upsample_bilinear")
    B, C, H, W = x.data.shape
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"upsample target {out_h}x{out_w} must be positive")
    if out_h < H or out_w < W:
        raise ShapeError(
            f"upsample target {out_h}x{out_w} smaller than input {H}x{W}")
    if (out_h, out_w) == (H, W):
        return x * 1.0  # corner alignment makes same-size interpolation exact
    mh = _interp_matrix(H, out_h)
    mw = _interp_matrix(W, out_w)
    out_data = np.matmul(np.matmul(mh, x.data), mw.T)  # (B,C,out_h,out_w)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, np.matmul(np.matmul(mh.T, g), mw))

    return Tensor._result(out_data, (x,), backward)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping mean pooling by an integer factor."""
    _check_rank4(x, "avg_pool2d")
    B, C, H, W = x.data.shape
    if factor < 1:
        raise ShapeError(f"pool factor must be >= 1, got {factor}")
    if factor == 1:
        return x * 1.0
    if H % factor or W % factor:
        raise ShapeError(f"spatial dims {H}x{W} not divisible by pool factor {factor}")
    oh, ow = H // factor, W // factor
    out_data = x.data.reshape(B, C, oh, factor, ow, factor).mean(axis=(3, 5))
    inv = 1.0 / (factor * factor)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = np.broadcast_to(g[:, :, :, None, :, None] * inv,
                                 (B, C, oh, factor, ow, factor))
            _accum(x, gx.reshape(B, C, H, W))

    return Tensor._result(out_data, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean, keeping (B, C, 1, 1) shape."""
    _check_rank4(x, "global_avg_pool")
    return x.mean(axis=(2, 3), keepdims=True)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; batch/spatial dims must match."""
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    for t in xs:
        _check_rank4(t, "concat_channels")
    b, _, h, w = xs[0].data.shape
    for i, t in enumerate(xs[1:], start=1):
        tb, _, th, tw = t.data.shape
        if (tb, th, tw) != (b, h, w):
            raise ShapeError(
                f"concat_channels operand {i} has batch/spatial {(tb, th, tw)}, expected {(b, h, w)}")
    out_data = np.concatenate([t.data for t in xs], axis=1)
    offsets = np.cumsum([0] + [t.data.shape[1] for t in xs])
    parents = tuple(xs)

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(parents, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                _accum(t, g[:, lo:hi])

    return Tensor._result(out_data, parents, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channel range [start, stop) as a new tensor."""
    _check_rank4(x, "slice_channels")
    c = x.data.shape[1]
    if not (0 <= start < stop <= c):
        raise ShapeError(f"channel slice [{start}:{stop}) out of range for {c} channels")
    out_data = x.data[:, start:stop].copy()

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = g
            _accum(x, gx)

    return Tensor._result(out_data, (x,), backward)


def elementwise(x: Tensor, y: Tensor, kind: str) -> Tensor:
    """Same-shape pointwise add or mul (no broadcasting at this surface)."""
    if x.data.shape != y.data.shape:
        raise ShapeError(f"elementwise shape mismatch: {x.data.shape} vs {y.data.shape}")
    if kind == "add":
        return x + y
    if kind == "mul":
        return x * y
    raise ValueError(f"unknown elementwise kind {kind!r} (expected 'add' or 'mul')")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return x.relu()
    if kind == "sigmoid":
        return x.sigmoid()
    raise ValueError(f"unknown activation kind {kind!r} (expected 'relu' or 'sigmoid')")


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map over channels of a (B, C, 1, 1) tensor -> (B, out, 1, 1)."""
    _check_rank4(x, "dense")
    B, C, H, W = x.data.shape
    if (H, W) != (1, 1):
        raise ShapeError(f"dense expects spatial dims 1x1, got {H}x{W}")
    out_n, in_n = weights.data.shape
    if in_n != C:
        raise ShapeError(f"dense weight expects {in_n} channels, input has {C}")
    x2 = x.data.reshape(B, C)
    out_data = (x2 @ weights.data.T + bias.data).reshape(B, out_n, 1, 1)

    def backward(g: np.ndarray) -> None:
        g2 = g.reshape(B, out_n)
        if x.requires_grad:
            _accum(x, (g2 @ weights.data).reshape(B, C, 1, 1))
        if weights.requires_grad:
            _accum(weights, g2.T @ x2)
        if bias.requires_grad:
            _accum(bias, g2.sum(axis=0))

    return Tensor._result(out_data, (x, weights, bias), backward)


def grad_check(op_closure: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-4) -> float:
    """Max relative gap between analytic and central-difference gradients.

    Perturbs every coordinate of every input in place (restored afterwards);
    relative error is |analytic - fd| / max(1, |analytic|).
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = op_closure(*inputs)
    if out.data.size != 1:
        raise ShapeError(f"closure must return a scalar, got shape {out.data.shape}")
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(op_closure(*inputs).data)
            flat[i] = orig - eps
            f_minus = float(op_closure(*inputs).data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(aflat[i] - fd) / max(1.0, abs(aflat[i]))
            if rel > worst:
                worst = rel
    return worst
