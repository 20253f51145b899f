"""Cross-entropy supervision over the four saliency maps.

Every branch/fused map is scored against the same binary mask; training
backs through the sum. Reduced variants supervise a subset, and the
single-supervision ablation scores the final map only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError

__all__ = ["CLAMP_EPS", "LossReport", "bce", "total_loss"]

CLAMP_EPS = 1e-7


@dataclass
class LossReport:
    """Float view of one supervision step; absent terms are 0.0 and
    total is always the plain sum of the four fields."""

    l_s: float
    l_t: float
    l_c: float
    l_f: float
    total: float


def bce(s: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross entropy of a predicted map against a {0,1} mask.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs, so the
    loss is finite for any input in [0,1]. Returns a scalar tensor.
    """
    y = np.asarray(y, dtype=np.float64)
    if s.data.shape != y.shape:
        raise ShapeError(f"map shape {s.data.shape} != mask shape {y.shape}")
    if y.size == 0:
        raise ShapeError("empty mask")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("mask must be binary {0,1}")
    p = s.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    ll = Tensor(y) * p.log() + Tensor(1.0 - y) * (1.0 - p).log()
    return -ll.mean()


def total_loss(y: np.ndarray,
               s_s: Tensor | None = None,
               s_t: Tensor | None = None,
               s_c: Tensor | None = None,
               s_f: Tensor | None = None,
               single_supervision: bool = False) -> tuple[Tensor, LossReport]:
    """Sum the cross entropies of whichever maps are supplied, in the fixed
    order spatial, temporal, coarse, final.

    With single_supervision=True only the final map is scored (it must be
    present); the other maps are ignored and reported as 0.0. Returns the
    backpropagatable total plus a float report whose total field is exactly
    the sum of its four components.
    """
    if single_supervision:
        if s_f is None:
            raise ValueError("single supervision needs the final map")
        maps = [(None, "l_s"), (None, "l_t"), (None, "l_c"), (s_f, "l_f")]
    else:
        maps = [(s_s, "l_s"), (s_t, "l_t"), (s_c, "l_c"), (s_f, "l_f")]
    if all(m is None for m, _ in maps):
        raise ValueError("no maps to supervise")

    total: Tensor | None = None
    fields = {"l_s": 0.0, "l_t": 0.0, "l_c": 0.0, "l_f": 0.0}
    for m, name in maps:
        if m is None:
            continue
        term = bce(m, y)
        fields[name] = term.item()
        total = term if total is None else total + term
    report = LossReport(total=float(total.item()), **fields)
    return total, report
