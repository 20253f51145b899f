"""Saliency evaluation: MAE, 256-threshold precision/recall, F-measure,
and the structure measure.

All threshold-based metrics run on the 8-bit quantization of the predicted
map, so scores are invariant to any rescaling that preserves the quantized
values. Ground truth is binarized at 0.5.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "quantize", "mae", "f_measure", "pr_curve", "average_pr",
    "max_f", "dataset_max_f", "s_measure", "evaluate_maps",
]

_EPS = float(np.finfo(np.float64).eps)
N_THRESHOLDS = 256


def _check_pair(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if s.shape != y.shape:
        raise ValueError(f"prediction shape {s.shape} != ground truth shape {y.shape}")
    if s.size == 0:
        raise ValueError("empty prediction")
    return s, y


def quantize(s: np.ndarray) -> np.ndarray:
    """Map [0,1] saliency to integer levels 0..255 (round half to even)."""
    return np.rint(np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.int64)


def mae(s: np.ndarray, y: np.ndarray) -> float:
    s, y = _check_pair(s, y)
    return float(np.abs(s - y).mean())


def f_measure(precision, recall, beta2: float = 0.3):
    """Weighted harmonic mean; 0 wherever the denominator vanishes."""
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    denom = beta2 * p + r
    f = np.where(denom > 0.0, (1.0 + beta2) * p * r / np.where(denom > 0, denom, 1.0), 0.0)
    if f.ndim == 0:
        return float(f)
    return f


def pr_curve(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at every quantized threshold t in 0..255, where a
    pixel is predicted positive iff its level >= t. Empty predictions count
    as precision 1; recall is 1 everywhere when the ground truth is empty."""
    s, y = _check_pair(s, y)
    q = quantize(s).reshape(-1)
    yb = y.reshape(-1) > 0.5
    n_pos = int(yb.sum())
    fg = np.bincount(q[yb], minlength=N_THRESHOLDS)
    allc = np.bincount(q, minlength=N_THRESHOLDS)
    # pixels at level >= t, via suffix sums
    tp = np.cumsum(fg[::-1])[::-1].astype(np.float64)
    npred = np.cumsum(allc[::-1])[::-1].astype(np.float64)
    precision = np.where(npred > 0, tp / np.where(npred > 0, npred, 1.0), 1.0)
    recall = tp / n_pos if n_pos > 0 else np.ones(N_THRESHOLDS)
    return precision, recall


def average_pr(curves: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Mean precision and recall over frames, per threshold."""
    if not curves:
        raise ValueError("no curves to average")
    p = np.mean([c[0] for c in curves], axis=0)
    r = np.mean([c[1] for c in curves], axis=0)
    return p, r


def max_f(s: np.ndarray, y: np.ndarray, beta2: float = 0.3) -> float:
    p, r = pr_curve(s, y)
    return float(f_measure(p, r, beta2).max())


def dataset_max_f(maps: list[np.ndarray], masks: list[np.ndarray],
                  beta2: float = 0.3) -> float:
    """Average the per-frame curves first, then take the best threshold."""
    if len(maps) != len(masks):
        raise ValueError(f"{len(maps)} maps vs {len(masks)} masks")
    p, r = average_pr([pr_curve(s, y) for s, y in zip(maps, masks)])
    return float(f_measure(p, r, beta2).max())


# ----------------------------------------------------------------------
# structure measure
# ----------------------------------------------------------------------

def _object_score(values: np.ndarray) -> float:
    n = values.size
    if n == 0:
        return 0.0
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if n > 1 else 0.0
    return 2.0 * mean / (mean * mean + 1.0 + sd + _EPS)


def _s_object(s: np.ndarray, yb: np.ndarray) -> float:
    mu = yb.mean()
    fg = _object_score(s[yb == 1.0])
    bg = _object_score((1.0 - s)[yb == 0.0])
    return float(mu * fg + (1.0 - mu) * bg)


def _centroid_cut(yb: np.ndarray) -> tuple[int, int]:
    """1-based centroid of the foreground, rounded half to even and clamped
    so every quadrant keeps at least one row and column."""
    rows, cols = yb.shape
    total = yb.sum()
    if total == 0:
        cx = int(np.rint(cols / 2.0))
        cy = int(np.rint(rows / 2.0))
    else:
        cx = int(np.rint(((np.arange(cols) + 1.0) * yb.sum(axis=0)).sum() / total))
        cy = int(np.rint(((np.arange(rows) + 1.0) * yb.sum(axis=1)).sum() / total))
    return min(max(cx, 1), cols - 1), min(max(cy, 1), rows - 1)


def _ssim_block(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    x = float(pred.mean())
    y = float(gt.mean())
    dx = pred - x
    dy = gt - y
    sx = float((dx * dx).sum()) / (n - 1 + _EPS)
    sy = float((dy * dy).sum()) / (n - 1 + _EPS)
    sxy = float((dx * dy).sum()) / (n - 1 + _EPS)
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0.0:
        return a / (b + _EPS)
    if b == 0.0:
        return 1.0
    return 0.0


def _s_region(s: np.ndarray, yb: np.ndarray) -> float:
    rows, cols = yb.shape
    cx, cy = _centroid_cut(yb)
    area = rows * cols
    w1 = (cx * cy) / area
    w2 = ((cols - cx) * cy) / area
    w3 = (cx * (rows - cy)) / area
    w4 = 1.0 - w1 - w2 - w3
    return (w1 * _ssim_block(s[:cy, :cx], yb[:cy, :cx])
            + w2 * _ssim_block(s[:cy, cx:], yb[:cy, cx:])
            + w3 * _ssim_block(s[cy:, :cx], yb[cy:, :cx])
            + w4 * _ssim_block(s[cy:, cx:], yb[cy:, cx:]))


def s_measure(s: np.ndarray, y: np.ndarray, alpha: float = 0.5) -> float:
    """Structure similarity between a saliency map and a binary mask: a
    convex mix of an object-level term (foreground/background means and
    spreads) and a region-level term (per-quadrant ssim around the
    foreground centroid), clamped to be non-negative. Degenerate masks fall
    back to mean saliency: all-background scores 1 - mean(s), all-foreground
    scores mean(s)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0,1], got {alpha}")
    s, y = _check_pair(s, y)
    if s.ndim != 2:
        raise ValueError(f"structure measure needs 2-D maps, got shape {s.shape}")
    if s.min() < 0.0 or s.max() > 1.0:
        raise ValueError("saliency values must lie in [0,1]")
    yb = (y > 0.5).astype(np.float64)
    mu = yb.mean()
    if mu == 0.0:
        return float(1.0 - s.mean())
    if mu == 1.0:
        return float(s.mean())
    val = alpha * _s_object(s, yb) + (1.0 - alpha) * _s_region(s, yb)
    return float(max(val, 0.0))


# ----------------------------------------------------------------------
# aggregate report
# ----------------------------------------------------------------------

def evaluate_maps(maps: list[np.ndarray], masks: list[np.ndarray]) -> dict[str, float]:
    """Dataset-level summary: mean MAE, curve-averaged max F, mean structure
    measure."""
    if not maps:
        raise ValueError("nothing to evaluate")
    return {
        "mae": float(np.mean([mae(s, y) for s, y in zip(maps, masks)])),
        "max_f": dataset_max_f(maps, masks),
        "s_measure": float(np.mean([s_measure(s, y) for s, y in zip(maps, masks)])),
    }
