"""Bit-exact file I/O: Middlebury .flo flow fields, PGM/PNG maps and frames,
a raw tensor-dump format for fixtures, checkpoints, and plain-text configs.

Tensor dumps: little-endian header (magic b"DST1", four uint32 dims), then
float64 values row-major. Shapes below rank 4 are left-padded with 1s in the
header; checkpoint manifests record the true shape.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "FLO_MAGIC", "FlowFormatError", "read_flo", "write_flo",
    "read_map", "write_map", "read_frame", "write_frame",
    "read_tensor", "write_tensor",
    "save_checkpoint", "load_checkpoint",
    "parse_config_text", "format_config",
]

FLO_MAGIC = 202021.25
_DUMP_MAGIC = b"DST1"


class FlowFormatError(ValueError):
    """Malformed .flo payload."""


# ----------------------------------------------------------------------
# Middlebury .flo
# ----------------------------------------------------------------------

def write_flo(flow: np.ndarray, path: str | Path) -> None:
    """Write a (2, H, W) field as float32 magic/width/height/interleaved u,v."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must have shape (2, H, W), got {flow.shape}")
    _, h, w = flow.shape
    inter = np.empty((h, w, 2), dtype="<f4")
    inter[:, :, 0] = flow[0]
    inter[:, :, 1] = flow[1]
    header = struct.pack("<fii", FLO_MAGIC, w, h)
    Path(path).write_bytes(header + inter.tobytes())


def read_flo(path: str | Path) -> np.ndarray:
    """Read a .flo file into a float32 (2, H, W) field."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, w, h = struct.unpack("<fii", raw[:12])
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: not a flow file (magic {magic!r})")
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"{path}: bad dimensions {w}x{h}")
    expected = 12 + w * h * 2 * 4
    if len(raw) != expected:
        raise FlowFormatError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}")
    inter = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    return np.ascontiguousarray(inter.transpose(2, 0, 1))


# ----------------------------------------------------------------------
# 8-bit maps and frames
# ----------------------------------------------------------------------

def _to_u8(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_map(values: np.ndarray, path: str | Path) -> None:
    """Single-channel map in [0,1] -> 8-bit PGM (raw P5) or grayscale PNG."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"map must be 2-D, got shape {values.shape}")
    u8 = _to_u8(values)
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        h, w = u8.shape
        header = f"P5\n{w} {h}\n255\n".encode("ascii")
        path.write_bytes(header + u8.tobytes())
    else:
        Image.fromarray(u8, mode="L").save(path, format="PNG")


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a raw PGM (magic {fields[0]!r})")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported bit depth (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    data = raw[pos:pos + w * h]
    if len(data) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def read_map(path: str | Path) -> np.ndarray:
    """8-bit grayscale file -> float64 (H, W) scaled to [0,1]."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        u8 = _read_pgm(path)
    else:
        with Image.open(path) as img:
            if img.mode != "L":
                raise ValueError(f"{path}: expected 8-bit grayscale, got mode {img.mode}")
            u8 = np.asarray(img, dtype=np.uint8)
    return u8.astype(np.float64) / 255.0


def write_frame(image: np.ndarray, path: str | Path) -> None:
    """(3, H, W) values in [0,1] -> 8-bit RGB PNG."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"frame must have shape (3, H, W), got {image.shape}")
    u8 = _to_u8(image).transpose(1, 2, 0)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def read_frame(path: str | Path) -> np.ndarray:
    """8-bit RGB PNG -> float64 (3, H, W) in [0,1]."""
    with Image.open(path) as img:
        if img.mode != "RGB":
            raise ValueError(f"{path}: expected 8-bit RGB, got mode {img.mode}")
        u8 = np.asarray(img, dtype=np.uint8)
    return u8.astype(np.float64).transpose(2, 0, 1) / 255.0


# ----------------------------------------------------------------------
# tensor dumps
# ----------------------------------------------------------------------

def write_tensor(values: np.ndarray, path: str | Path) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim > 4:
        raise ValueError(f"dump supports up to rank 4, got shape {values.shape}")
    dims = (1,) * (4 - values.ndim) + values.shape
    header = _DUMP_MAGIC + struct.pack("<4I", *dims)
    Path(path).write_bytes(header + values.astype("<f8").tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _DUMP_MAGIC:
        raise ValueError(f"{path}: not a tensor dump (magic {raw[:4]!r})")
    dims = struct.unpack("<4I", raw[4:20])
    count = int(np.prod(dims))
    expected = 20 + count * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f8", offset=20).reshape(dims).copy()


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------

def save_checkpoint(ckpt_dir: str | Path, params: dict[str, np.ndarray],
                    opt_state: dict | None, iteration: int,
                    config: dict[str, object]) -> None:
    """One dump file per named parameter plus a manifest, optimizer moments,
    the iteration counter, and a config snapshot."""
    ckpt_dir = Path(ckpt_dir)
    (ckpt_dir / "params").mkdir(parents=True, exist_ok=True)
    lines = []
    for name, values in params.items():
        fname = f"{name}.dst"
        write_tensor(values, ckpt_dir / "params" / fname)
        shape = ",".join(str(n) for n in np.asarray(values).shape)
        lines.append(f"{name}\tparams/{fname}\t{shape}")
    (ckpt_dir / "manifest.txt").write_text("\n".join(lines) + "\n")
    if opt_state is not None:
        opt_dir = ckpt_dir / "optim"
        opt_dir.mkdir(exist_ok=True)
        for name, values in opt_state["m"].items():
            write_tensor(values, opt_dir / f"m.{name}.dst")
        for name, values in opt_state["v"].items():
            write_tensor(values, opt_dir / f"v.{name}.dst")
        (opt_dir / "state.txt").write_text(f"t = {opt_state['t']}\n")
    (ckpt_dir / "state.txt").write_text(f"iteration = {iteration}\n")
    (ckpt_dir / "config.cfg").write_text(format_config(config))


def load_checkpoint(ckpt_dir: str | Path):
    """Returns (params, opt_state or None, iteration, config dict of strings)."""
    ckpt_dir = Path(ckpt_dir)
    manifest = ckpt_dir / "manifest.txt"
    if not manifest.is_file():
        raise FileNotFoundError(f"{ckpt_dir}: no manifest.txt; not a checkpoint")
    params: dict[str, np.ndarray] = {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        name, rel, shape_s = line.split("\t")
        shape = tuple(int(n) for n in shape_s.split(",")) if shape_s else ()
        params[name] = read_tensor(ckpt_dir / rel).reshape(shape)
    opt_state = None
    opt_dir = ckpt_dir / "optim"
    if opt_dir.is_dir():
        state = parse_config_text((opt_dir / "state.txt").read_text())
        opt_state = {"t": int(state["t"]), "m": {}, "v": {}}
        for name in params:
            opt_state["m"][name] = read_tensor(opt_dir / f"m.{name}.dst").reshape(
                params[name].shape)
            opt_state["v"][name] = read_tensor(opt_dir / f"v.{name}.dst").reshape(
                params[name].shape)
    state = parse_config_text((ckpt_dir / "state.txt").read_text())
    iteration = int(state["iteration"])
    config = parse_config_text((ckpt_dir / "config.cfg").read_text())
    return params, opt_state, iteration, config


# ----------------------------------------------------------------------
# plain-text config
# ----------------------------------------------------------------------

def parse_config_text(text: str) -> dict[str, str]:
    """`key = value` lines; '#' starts a comment; keys may be dotted."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_config(values: dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
