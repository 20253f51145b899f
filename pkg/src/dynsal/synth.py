"""Synthetic moving-shape video scenes with analytic optical flow.

Each sequence renders rigid shapes bouncing over a cluttered background with
integer per-frame displacements, so the ground-truth flow is exact: object
displacement inside the mask, camera translation outside, plus optional
Gaussian noise. Two presets span the two failure regimes the fusion network
must arbitrate: REGIME-A (noisy flow, easy appearance) and REGIME-B (clean
flow, near-invisible object among static decoys).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import fileio

__all__ = [
    "SceneConfig", "VideoSample", "gen_sequence", "render_flow_color",
    "regime_a", "regime_b", "static_flow_image", "write_dataset", "load_dataset",
]


@dataclass
class SceneConfig:
    size: int = 64
    n_objects: int = 1
    shapes: tuple[str, ...] = ("square", "circle")
    speed: int = 2                  # max |velocity component|, pixels/frame
    contrast: float = 0.5           # object vs background intensity delta
    clutter: float = 0.1            # smooth background texture amplitude
    clutter_shapes: int = 0         # static decoy shape count
    decoy_contrast: float = 0.3     # decoys stay visible even when the target is not
    camera: tuple[int, int] = (0, 0)  # translation (dx, dy), pixels/frame
    flow_noise: float = 0.0         # Gaussian sigma, pixels/frame
    length: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.size < 16:
            raise ValueError(f"size must be >= 16, got {self.size}")
        if self.speed < 0 or self.flow_noise < 0:
            raise ValueError("speed and flow_noise must be non-negative")
        if not 0.0 <= self.contrast <= 1.0 or not 0.0 <= self.decoy_contrast <= 1.0:
            raise ValueError("contrast and decoy_contrast must lie in [0,1]")
        if self.length < 1 or self.n_objects < 0 or self.clutter_shapes < 0:
            raise ValueError("length must be >= 1 and counts non-negative")
        known = {"square", "circle"}
        bad = set(self.shapes) - known
        if bad:
            raise ValueError(f"unknown shapes {sorted(bad)}; supported: {sorted(known)}")

    def to_dict(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, str]) -> "SceneConfig":
        valid = {f.name for f in fields(cls)}
        unknown = set(raw) - valid
        if unknown:
            raise ValueError(
                f"unknown scene config keys {sorted(unknown)}; valid keys: {sorted(valid)}")
        kwargs: dict[str, object] = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            v = raw[f.name]
            if f.name == "shapes":
                kwargs[f.name] = tuple(s.strip() for s in str(v).split(",") if s.strip())
            elif f.name == "camera":
                parts = [int(s) for s in str(v).split(",")]
                kwargs[f.name] = (parts[0], parts[1])
            elif f.name in ("contrast", "clutter", "flow_noise", "decoy_contrast"):
                kwargs[f.name] = float(v)
            else:
                kwargs[f.name] = int(v)
        return cls(**kwargs)


@dataclass
class VideoSample:
    frame: np.ndarray        # (3, H, W) float64 in [0,1]
    flow_field: np.ndarray   # (2, H, W) float32, pixels/frame
    flow_image: np.ndarray   # (3, H, W) float64 in [0,1]
    mask: np.ndarray         # (H, W) float64, strictly {0,1}

    def __post_init__(self) -> None:
        h, w = self.mask.shape
        for name in ("frame", "flow_field", "flow_image"):
            arr = getattr(self, name)
            if arr.shape[-2:] != (h, w):
                raise ValueError(f"{name} spatial dims {arr.shape[-2:]} != mask {h}x{w}")
        vals = np.unique(self.mask)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise ValueError("mask must be strictly binary")


# ----------------------------------------------------------------------
# shape rasterization
# ----------------------------------------------------------------------

def _shape_mask(kind: str, size: int, cx: int, cy: int, r: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "square":
        return ((np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= r)).astype(np.float64)
    return (((xx - cx) ** 2 + (yy - cy) ** 2) <= r * r).astype(np.float64)


def _smooth_texture(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    """Per-channel sum of random low-frequency sinusoids, peak ~= amplitude."""
    yy, xx = np.mgrid[0:size, 0:size]
    tex = np.zeros((3, size, size))
    waves = 4
    for c in range(3):
        for _ in range(waves):
            fx = rng.integers(1, 4) / size
            fy = rng.integers(1, 4) / size
            phase = rng.uniform(0, 2 * math.pi)
            tex[c] += np.sin(2 * math.pi * (fx * xx + fy * yy) + phase)
        tex[c] *= amplitude / waves
    return tex


# ----------------------------------------------------------------------
# sequence generation
# ----------------------------------------------------------------------

class _MovingObject:
    def __init__(self, rng: np.random.Generator, cfg: SceneConfig):
        size = cfg.size
        self.kind = cfg.shapes[int(rng.integers(0, len(cfg.shapes)))]
        self.r = int(rng.integers(max(2, size // 12), max(3, size // 6) + 1))
        if 2 * self.r + 1 > size:
            raise ValueError(f"object of radius {self.r} larger than frame of size {size}")
        lo, hi = self.r, size - 1 - self.r
        self.x = int(rng.integers(lo, hi + 1))
        self.y = int(rng.integers(lo, hi + 1))
        if cfg.speed > 0:
            while True:
                v = rng.integers(-cfg.speed, cfg.speed + 1, size=2)
                if v[0] or v[1]:
                    break
            self.vx, self.vy = int(v[0]), int(v[1])
        else:
            self.vx = self.vy = 0
        sign = rng.choice([-1.0, 1.0], size=3)
        self.color = np.clip(0.5 + cfg.contrast * sign, 0.0, 1.0)
        self.lo, self.hi = lo, hi

    def step(self) -> tuple[int, int]:
        """Advance one frame with edge bounce; returns the realized displacement."""
        nx, ny = self.x + self.vx, self.y + self.vy
        if nx < self.lo or nx > self.hi:
            self.vx = -self.vx
            nx = self.x + self.vx
        if ny < self.lo or ny > self.hi:
            self.vy = -self.vy
            ny = self.y + self.vy
        dx, dy = nx - self.x, ny - self.y
        self.x, self.y = nx, ny
        return dx, dy


def gen_sequence(cfg: SceneConfig) -> list[VideoSample]:
    """Deterministic given cfg.seed. The stored flow at frame t is the realized
    displacement from t to t+1 (the last frame repeats the previous one), so
    advecting mask_t by the noiseless flow lands exactly on mask_{t+1}."""
    ss = np.random.SeedSequence(cfg.seed)
    children = ss.spawn(cfg.length + 1)
    rng = np.random.Generator(np.random.PCG64(children[0]))
    size = cfg.size

    background = np.full((3, size, size), 0.5)
    if cfg.clutter > 0:
        background += _smooth_texture(rng, size, cfg.clutter)
    for _ in range(cfg.clutter_shapes):
        kind = cfg.shapes[int(rng.integers(0, len(cfg.shapes)))]
        r = int(rng.integers(max(2, size // 16), max(3, size // 8) + 1))
        cx = int(rng.integers(0, size))
        cy = int(rng.integers(0, size))
        m = _shape_mask(kind, size, cx, cy, r)
        sign = rng.choice([-1.0, 1.0], size=3)
        color = np.clip(0.5 + cfg.decoy_contrast * sign, 0.0, 1.0)
        background = background * (1 - m) + color[:, None, None] * m
    background = np.clip(background, 0.0, 1.0)

    objects = [_MovingObject(rng, cfg) for _ in range(cfg.n_objects)]
    cam_dx, cam_dy = cfg.camera
    offset_x = offset_y = 0

    samples: list[VideoSample] = []
    for t in range(cfg.length):
        bg = np.roll(background, shift=(offset_y, offset_x), axis=(1, 2))
        frame = bg.copy()
        mask = np.zeros((size, size))
        flow = np.empty((2, size, size))
        flow[0].fill(float(cam_dx))
        flow[1].fill(float(cam_dy))
        displacements = []
        for obj in objects:
            x, y = obj.x, obj.y
            if t + 1 < cfg.length:
                dx, dy = obj.step()
            else:
                dx, dy = obj.vx, obj.vy  # no next frame; emit current velocity
            displacements.append((x, y, dx, dy, obj))
        for x, y, dx, dy, obj in displacements:
            m = _shape_mask(obj.kind, size, x, y, obj.r)
            frame = frame * (1 - m) + obj.color[:, None, None] * m
            mask = np.maximum(mask, m)
            flow[0] = np.where(m > 0, float(dx), flow[0])
            flow[1] = np.where(m > 0, float(dy), flow[1])
        if cfg.flow_noise > 0:
            noise_rng = np.random.Generator(np.random.PCG64(children[t + 1]))
            flow = flow + noise_rng.normal(0.0, cfg.flow_noise, size=flow.shape)
        flow32 = flow.astype(np.float32)
        samples.append(VideoSample(
            frame=np.clip(frame, 0.0, 1.0),
            flow_field=flow32,
            flow_image=render_flow_color(flow32),
            mask=mask,
        ))
        offset_x += cam_dx
        offset_y += cam_dy
    return samples


# ----------------------------------------------------------------------
# presets
# ----------------------------------------------------------------------

def regime_a(seed: int = 0, **overrides) -> SceneConfig:
    """Noisy flow, easy appearance: high contrast object, heavy flow noise."""
    base = dict(size=64, n_objects=1, speed=2, contrast=0.45, clutter=0.08,
                clutter_shapes=0, camera=(0, 0), flow_noise=4.0, length=8)
    base.update(overrides)
    return SceneConfig(seed=seed, **base)


def regime_b(seed: int = 0, **overrides) -> SceneConfig:
    """Clean flow, hard appearance: a near-invisible moving object among
    high-contrast static decoys, so the (noise-free) flow carries nearly all
    of the signal."""
    base = dict(size=64, n_objects=1, speed=3, contrast=0.04, clutter=0.15,
                clutter_shapes=4, decoy_contrast=0.35, camera=(0, 0),
                flow_noise=0.0, length=8)
    base.update(overrides)
    return SceneConfig(seed=seed, **base)


# ----------------------------------------------------------------------
# color-wheel flow rendering
# ----------------------------------------------------------------------

def _make_color_wheel() -> np.ndarray:
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    ncols = ry + yg + gc + cb + bm + mr
    wheel = np.zeros((ncols, 3))
    col = 0
    wheel[0:ry, 0] = 255
    wheel[0:ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col:col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col:col + yg, 1] = 255
    col += yg
    wheel[col:col + gc, 1] = 255
    wheel[col:col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col:col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col:col + cb, 2] = 255
    col += cb
    wheel[col:col + bm, 2] = 255
    wheel[col:col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col:col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col:col + mr, 0] = 255
    return wheel


_WHEEL = _make_color_wheel()


def render_flow_color(flow: np.ndarray) -> np.ndarray:
    """Color-wheel rendering: hue from angle, saturation from magnitude
    normalized by the per-frame max (1 if the field is all-zero). Zero flow
    renders white."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must have shape (2, H, W), got {flow.shape}")
    if not np.isfinite(flow).all():
        raise ValueError("flow contains non-finite values")
    u, v = flow[0], flow[1]
    maxrad = float(np.hypot(u, v).max()) if u.size else 0.0
    denom = maxrad if maxrad > 0 else 1.0
    u = u / denom
    v = v / denom
    rad = np.hypot(u, v)
    ncols = _WHEEL.shape[0]
    a = np.arctan2(-v, -u) / math.pi
    fk = (a + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = fk - k0
    out = np.empty((3, *u.shape))
    small = rad <= 1.0
    for c in range(3):
        col0 = _WHEEL[k0, c] / 255.0
        col1 = _WHEEL[k1, c] / 255.0
        col = (1 - f) * col0 + f * col1
        out[c] = np.where(small, 1.0 - rad * (1.0 - col), 0.75 * col)
    return out


def static_flow_image(size: int) -> np.ndarray:
    """The zero-filled-field convention for still images: a neutral render."""
    return render_flow_color(np.zeros((2, size, size), dtype=np.float32))


# ----------------------------------------------------------------------
# dataset directory layout
# ----------------------------------------------------------------------

def write_dataset(out_dir: str | Path, samples: list[VideoSample],
                  cfg: SceneConfig) -> None:
    """frames/%05d.png, flow/%05d.flo, flow_rgb/%05d.png, masks/%05d.png
    plus scene.cfg."""
    out_dir = Path(out_dir)
    for sub in ("frames", "flow", "flow_rgb", "masks"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        fileio.write_frame(s.frame, out_dir / "frames" / f"{i:05d}.png")
        fileio.write_flo(s.flow_field, out_dir / "flow" / f"{i:05d}.flo")
        fileio.write_frame(s.flow_image, out_dir / "flow_rgb" / f"{i:05d}.png")
        fileio.write_map(s.mask, out_dir / "masks" / f"{i:05d}.png")
    (out_dir / "scene.cfg").write_text(fileio.format_config(cfg.to_dict()))


def load_dataset(data_dir: str | Path) -> tuple[list[VideoSample], dict[str, str]]:
    """Inverse of write_dataset; flow images come from the stored 8-bit PNGs."""
    data_dir = Path(data_dir)
    frames_dir = data_dir / "frames"
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"{data_dir}: no frames/ directory; not a dataset")
    samples: list[VideoSample] = []
    for frame_path in sorted(frames_dir.glob("*.png")):
        stem = frame_path.stem
        frame = fileio.read_frame(frame_path)
        flow = fileio.read_flo(data_dir / "flow" / f"{stem}.flo")
        flow_image = fileio.read_frame(data_dir / "flow_rgb" / f"{stem}.png")
        mask = (fileio.read_map(data_dir / "masks" / f"{stem}.png") > 0.5).astype(np.float64)
        samples.append(VideoSample(frame=frame, flow_field=flow,
                                   flow_image=flow_image, mask=mask))
    if not samples:
        raise FileNotFoundError(f"{data_dir}: dataset is empty")
    scene_path = data_dir / "scene.cfg"
    scene = fileio.parse_config_text(scene_path.read_text()) if scene_path.is_file() else {}
    return samples, scene
