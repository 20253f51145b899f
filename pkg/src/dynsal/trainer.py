"""Training loop, evaluation, checkpointing, and the ablation driver.

A run is fully determined by its TrainConfig: the model's parameter streams,
the batch sampler, and the optimizer all derive from the config seed, so the
same config reproduces the same checkpoint bit for bit.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import fileio
from .losses import total_loss, LossReport
from .metrics import dataset_max_f, mae, pr_curve, average_pr, f_measure, s_measure
from .model import Model, VARIANTS, ForwardResult
from .optim import Adam
from .synth import VideoSample, static_flow_image

__all__ = [
    "TrainConfig", "Checkpoint", "TrainResult", "EvalReport",
    "ConfigError", "NumericFailure",
    "train", "evaluate", "evaluate_model", "ablate", "sweep_tau",
    "load_checkpoint", "build_model", "write_stub_checkpoint",
    "ABLATION_FAMILIES", "TAU_SWEEP",
]

# batch sampling draws from its own stream so it never interferes with the
# per-component parameter streams (spawn keys 0..5)
_BATCH_STREAM = 100
_FLAG_WINDOW = 200

_allocator_tuned = False


def _tune_allocator() -> None:
    """Keep large freed buffers on the heap instead of returning them to the OS.

    Each training step allocates and frees a few hundred MB of convolution
    buffers.  glibc serves allocations that big through mmap and unmaps them
    on free, so every step pays for fresh zeroed pages.  Raising the mmap and
    trim thresholds lets the heap recycle those buffers; measured ~25% faster
    steps.  Best effort: silently does nothing where mallopt is unavailable.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return
    _allocator_tuned = True
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except Exception:
        pass

ABLATION_FAMILIES: dict[str, tuple[str, ...]] = {
    "dwg": ("DWG-SEP", "DWG-FC", "proposed"),
    "caa": ("CAA-woS", "CAA-woN", "CAA-BU", "proposed"),
    "heads": ("M-SS", "M-AGGS", "M-woATT", "proposed"),
    "baseline": ("M1", "M2", "M3", "proposed"),
}
TAU_SWEEP = (0.2, 0.4, 0.6, 0.8, 1.0)

LOG_COLUMNS = (
    ["iter", "time_s", "l_s", "l_t", "l_c", "l_f", "total"]
    + [f"{vec}_{i}" for vec in ("w_s", "w_t", "v_s", "v_t", "u_s", "u_t")
       for i in range(1, 6)]
    + ["eps_s", "eps_t"]
)


class ConfigError(ValueError):
    """Bad or inconsistent configuration (CLI exit code 4)."""


class NumericFailure(RuntimeError):
    """Non-finite value during training (CLI exit code 5)."""


@dataclass
class TrainConfig:
    size: int = 64
    lr: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    tau: float = 0.6
    iterations: int = 200
    seed: int = 0
    variant: str = "proposed"
    image_ratio: float = 0.0  # fraction of samples shown with zeroed flow

    def __post_init__(self) -> None:
        if self.size < 16 or self.size % 8:
            raise ConfigError(f"size must be >= 16 and divisible by 8, got {self.size}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError(f"betas must lie in [0,1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0,1], got {self.tau}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        if not 0.0 <= self.image_ratio <= 1.0:
            raise ConfigError(f"image_ratio must lie in [0,1], got {self.image_ratio}")

    def to_dict(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in dataclass_fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping[str, str]) -> "TrainConfig":
        valid = {f.name: f.type for f in dataclass_fields(cls)}
        unknown = sorted(set(d) - set(valid))
        if unknown:
            raise ConfigError(
                f"unknown config keys {unknown}; valid keys: {sorted(valid)}")
        kinds = {f.name: type(getattr(cls(), f.name)) for f in dataclass_fields(cls)}
        kwargs = {}
        for key, raw in d.items():
            kind = kinds[key]
            try:
                kwargs[key] = raw if kind is str else kind(raw)
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
        return cls(**kwargs)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    opt_state: dict | None
    iteration: int
    config: dict[str, str]

    @property
    def is_stub(self) -> bool:
        return self.config.get("variant") == "stub"


@dataclass
class TrainResult:
    checkpoint_dir: Path
    log_path: Path
    rows: list[dict[str, object]]
    reports: list[LossReport]
    flagged: bool  # True when a 200-iteration loss window increased
    model: Model
    config: TrainConfig


@dataclass
class EvalReport:
    variant: str
    n_frames: int
    max_f: float
    s_measure: float
    mae: float
    eps_s_mean: float | None
    eps_t_mean: float | None


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------

def _batch_rng(seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_BATCH_STREAM,))
    return np.random.Generator(np.random.PCG64(ss))


def _stack_batch(samples: Sequence[VideoSample], idx: np.ndarray,
                 as_image: np.ndarray, blank_flow: np.ndarray):
    frames = np.stack([samples[i].frame for i in idx])
    flows = np.stack([blank_flow if as_image[j] else samples[i].flow_image
                      for j, i in enumerate(idx)])
    masks = np.stack([samples[i].mask[None] for i in idx]).astype(np.float64)
    return frames, flows, masks


def _loss_for(model: Model, result: ForwardResult, masks: np.ndarray):
    sup = model.plan.supervised
    return total_loss(
        masks,
        s_s=result.s_s if "s" in sup else None,
        s_t=result.s_t if "t" in sup else None,
        s_c=result.s_c if "c" in sup else None,
        s_f=result.s_f if "f" in sup else None,
        single_supervision=model.plan.single_supervision,
    )


def _first_bad_component(result: ForwardResult, report: LossReport) -> str | None:
    named = (("spatial coarse map", result.s_s), ("temporal coarse map", result.s_t),
             ("fused coarse map", result.s_c), ("final map", result.s_f))
    for name, t in named:
        if t is not None and not np.isfinite(t.data).all():
            return name
    if not np.isfinite(report.total):
        return "loss"
    return None


def _vec_cells(v: np.ndarray | None) -> list[object]:
    if v is None:
        return [""] * 5
    return [float(x) for x in v.mean(axis=0)]


def _log_row(i: int, dt: float, report: LossReport, result: ForwardResult) -> dict:
    d = result.diagnostics
    cells = ([i, round(dt, 6), report.l_s, report.l_t, report.l_c, report.l_f,
              report.total]
             + _vec_cells(d.w_s) + _vec_cells(d.w_t)
             + _vec_cells(d.v_s) + _vec_cells(d.v_t)
             + _vec_cells(d.u_s) + _vec_cells(d.u_t))
    for e in (d.eps_s, d.eps_t):
        cells.append("" if e is None else float(e.mean()))
    return dict(zip(LOG_COLUMNS, cells))


def _window_flag(totals: Sequence[float], window: int = _FLAG_WINDOW) -> bool:
    """True when any later full window's average exceeds the previous one's."""
    blocks = [np.mean(totals[i:i + window])
              for i in range(0, len(totals) - window + 1, window)]
    return any(b > a for a, b in zip(blocks, blocks[1:]))


def train(cfg: TrainConfig, samples: Sequence[VideoSample],
          out_dir: str | Path) -> TrainResult:
    """Optimize one model on the sample list, logging every iteration and
    writing the final checkpoint under out_dir."""
    _tune_allocator()
    if not samples:
        raise ValueError("empty dataset")
    for k, s in enumerate(samples):
        if s.frame.shape[1:] != (cfg.size, cfg.size):
            raise ConfigError(
                f"sample {k} is {s.frame.shape[1]}x{s.frame.shape[2]}, "
                f"config says {cfg.size}x{cfg.size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = Model(cfg.seed, cfg.variant, cfg.tau)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
               eps=cfg.eps, weight_decay=cfg.weight_decay)
    rng = _batch_rng(cfg.seed)
    blank_flow = static_flow_image(cfg.size)

    rows: list[dict] = []
    reports: list[LossReport] = []
    t0 = time.perf_counter()
    for i in range(cfg.iterations):
        idx = rng.integers(0, len(samples), size=cfg.batch_size)
        as_image = rng.random(cfg.batch_size) < cfg.image_ratio
        frames, flows, masks = _stack_batch(samples, idx, as_image, blank_flow)
        result = model.forward(frames if model.plan.spatial else None,
                               flows if model.plan.temporal else None)
        total, report = _loss_for(model, result, masks)
        bad = _first_bad_component(result, report)
        if bad is not None:
            raise NumericFailure(
                f"non-finite value at iteration {i} (component: {bad})")
        opt.zero_grad()
        total.backward()
        opt.step()
        rows.append(_log_row(i, time.perf_counter() - t0, report, result))
        reports.append(report)

    log_path = out_dir / "train_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    ckpt_dir = out_dir / "checkpoint"
    fileio.save_checkpoint(ckpt_dir, {k: p.data for k, p in params.items()},
                           opt.state_dict(), cfg.iterations, cfg.to_dict())
    flagged = _window_flag([r.total for r in reports])
    return TrainResult(ckpt_dir, log_path, rows, reports, flagged, model, cfg)


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------

def load_checkpoint(ckpt_dir: str | Path) -> Checkpoint:
    params, opt_state, iteration, config = fileio.load_checkpoint(ckpt_dir)
    return Checkpoint(params, opt_state, iteration, config)


def build_model(ckpt: Checkpoint) -> Model:
    """Reconstruct the trained model: structure from the config snapshot,
    parameters from the saved tensors."""
    if ckpt.is_stub:
        raise ConfigError("stub checkpoint has no model to build")
    cfg = TrainConfig.from_dict(ckpt.config)
    model = Model(cfg.seed, cfg.variant, cfg.tau)
    model.load_parameters(ckpt.params)
    return model


def write_stub_checkpoint(ckpt_dir: str | Path) -> Path:
    """A parameterless test double recognized by evaluate/infer: its
    prediction for any sample is the ground-truth mask."""
    ckpt_dir = Path(ckpt_dir)
    fileio.save_checkpoint(ckpt_dir, {}, None, 0, {"variant": "stub"})
    return ckpt_dir


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------

def _forward_eval(model: Model, samples: Sequence[VideoSample],
                  batch_size: int):
    """No-graph forward over the whole list; returns per-frame predicted
    maps plus concatenated reliability traces (or None)."""
    preds: list[np.ndarray] = []
    eps_s: list[np.ndarray] = []
    eps_t: list[np.ndarray] = []
    model.set_trainable(False)
    try:
        for lo in range(0, len(samples), batch_size):
            chunk = samples[lo:lo + batch_size]
            frames = np.stack([s.frame for s in chunk])
            flows = np.stack([s.flow_image for s in chunk])
            r = model.forward(frames if model.plan.spatial else None,
                              flows if model.plan.temporal else None)
            preds.extend(r.s_f.data[:, 0].copy())
            if r.diagnostics.eps_s is not None:
                eps_s.append(r.diagnostics.eps_s)
                eps_t.append(r.diagnostics.eps_t)
    finally:
        model.set_trainable(True)
    es = np.concatenate(eps_s) if eps_s else None
    et = np.concatenate(eps_t) if eps_t else None
    return preds, es, et


def evaluate_model(model_or_stub: Model | None, samples: Sequence[VideoSample],
                   batch_size: int = 4):
    """Metrics for one model over one dataset. Pass None for the stub
    (predictions echo the masks). Returns (EvalReport, preds, pr curve)."""
    if not samples:
        raise ValueError("empty dataset")
    if model_or_stub is None:
        preds = [s.mask.astype(np.float64) for s in samples]
        es = et = None
        variant = "stub"
    else:
        preds, es, et = _forward_eval(model_or_stub, samples, batch_size)
        variant = model_or_stub.variant
    gts = [s.mask.astype(np.float64) for s in samples]
    curves = [pr_curve(p, g) for p, g in zip(preds, gts)]
    prec, rec = average_pr(curves)
    report = EvalReport(
        variant=variant,
        n_frames=len(samples),
        max_f=float(np.max(f_measure(prec, rec))),
        s_measure=float(np.mean([s_measure(p, g) for p, g in zip(preds, gts)])),
        mae=float(np.mean([mae(p, g) for p, g in zip(preds, gts)])),
        eps_s_mean=None if es is None else float(es.mean()),
        eps_t_mean=None if et is None else float(et.mean()),
    )
    return report, preds, (prec, rec)


def _write_eval_csv(path: Path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# max_f pools PR curves over all frames before the F ratio;"
                 " s_measure and mae are frame averages\n")
        writer = csv.writer(fh)
        writer.writerow(["variant", "n_frames", "max_f", "s_measure", "mae",
                         "eps_s_mean", "eps_t_mean"])
        writer.writerow([
            report.variant, report.n_frames, report.max_f, report.s_measure,
            report.mae,
            "" if report.eps_s_mean is None else report.eps_s_mean,
            "" if report.eps_t_mean is None else report.eps_t_mean,
        ])


def _write_pr_csv(path: Path, prec: np.ndarray, rec: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall"])
        for t in range(prec.size):
            writer.writerow([t, prec[t], rec[t]])


def _svg_polyline(points: list[tuple[float, float]], title: str,
                  x_label: str, y_label: str) -> str:
    """Minimal self-contained line chart; x/y are data coordinates."""
    w, h, pad = 480, 320, 42
    xs = [p[0] for p in points] or [0.0]
    ys = [p[1] for p in points] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x): return pad + (x - x0) / (x1 - x0) * (w - 2 * pad)
    def sy(y): return h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad)

    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in points)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">\n'
        f'<rect width="{w}" height="{h}" fill="white"/>\n'
        f'<text x="{w / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>\n'
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>\n'
        f'<text x="{w / 2:.0f}" y="{h - 8}" text-anchor="middle" font-size="11">{x_label}</text>\n'
        f'<text x="14" y="{h / 2:.0f}" font-size="11" transform="rotate(-90 14 {h / 2:.0f})"'
        f' text-anchor="middle">{y_label}</text>\n'
        f'<text x="{pad}" y="{h - pad + 14}" font-size="9">{x0:.3g}</text>\n'
        f'<text x="{w - pad}" y="{h - pad + 14}" font-size="9" text-anchor="end">{x1:.3g}</text>\n'
        f'<text x="{pad - 4}" y="{h - pad}" font-size="9" text-anchor="end">{y0:.3g}</text>\n'
        f'<text x="{pad - 4}" y="{pad + 4}" font-size="9" text-anchor="end">{y1:.3g}</text>\n'
        f'<polyline points="{pts}" fill="none" stroke="#2060c0" stroke-width="1.5"/>\n'
        f'</svg>\n'
    )


def evaluate(ckpt_dir: str | Path, samples: Sequence[VideoSample],
             out_dir: str | Path | None = None,
             expect_variant: str | None = None,
             svg: bool = False) -> EvalReport:
    """Score a checkpoint on a dataset; optionally write report/PR CSVs and
    an SVG of the PR curve."""
    ckpt = load_checkpoint(ckpt_dir)
    if ckpt.is_stub:
        if expect_variant not in (None, "stub"):
            raise ConfigError(
                f"checkpoint variant 'stub' does not match requested "
                f"{expect_variant!r}")
        model = None
        batch = 4
    else:
        cfg = TrainConfig.from_dict(ckpt.config)
        if expect_variant is not None and cfg.variant != expect_variant:
            raise ConfigError(
                f"checkpoint variant {cfg.variant!r} does not match requested "
                f"{expect_variant!r}")
        model = build_model(ckpt)
        batch = cfg.batch_size
    report, _, (prec, rec) = evaluate_model(model, samples, batch)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_eval_csv(out_dir / "eval_report.csv", report)
        _write_pr_csv(out_dir / "pr_curve.csv", prec, rec)
        if svg:
            pts = sorted(zip(rec.tolist(), prec.tolist()))
            (out_dir / "pr_curve.svg").write_text(
                _svg_polyline(pts, f"PR ({report.variant})", "recall", "precision"))
    return report


# ----------------------------------------------------------------------
# ablations
# ----------------------------------------------------------------------

def _table_csv(path: Path, label: str, rows: list[tuple[str, EvalReport]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([label, "max_f", "s_measure", "mae"])
        for name, rep in rows:
            writer.writerow([name, rep.max_f, rep.s_measure, rep.mae])


def ablate(base_cfg: TrainConfig, samples: Sequence[VideoSample],
           out_dir: str | Path,
           families: Iterable[str] | None = None) -> dict[str, list[tuple[str, EvalReport]]]:
    """Train and evaluate every variant of the requested families under the
    base config's seed and budget; one CSV table per family."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(families) if families is not None else list(ABLATION_FAMILIES)
    unknown = sorted(set(names) - set(ABLATION_FAMILIES))
    if unknown:
        raise ConfigError(
            f"unknown ablation families {unknown}; valid: {sorted(ABLATION_FAMILIES)}")
    tables: dict[str, list[tuple[str, EvalReport]]] = {}
    done: dict[str, EvalReport] = {}
    for fam in names:
        rows = []
        for variant in ABLATION_FAMILIES[fam]:
            if variant not in done:
                cfg = TrainConfig.from_dict({**base_cfg.to_dict(), "variant": variant})
                res = train(cfg, samples, out_dir / f"run_{variant}")
                done[variant], _, _ = evaluate_model(res.model, samples,
                                                     cfg.batch_size)
            rows.append((variant, done[variant]))
        _table_csv(out_dir / f"ablation_{fam}.csv", "variant", rows)
        tables[fam] = rows
    return tables


def sweep_tau(base_cfg: TrainConfig, samples: Sequence[VideoSample],
              out_dir: str | Path,
              taus: Sequence[float] = TAU_SWEEP) -> list[tuple[str, EvalReport]]:
    """Train the proposed variant at each threshold; one CSV table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for tau in taus:
        cfg = TrainConfig.from_dict({**base_cfg.to_dict(),
                                     "variant": "proposed", "tau": str(tau)})
        res = train(cfg, samples, out_dir / f"run_tau_{tau}")
        rep, _, _ = evaluate_model(res.model, samples, cfg.batch_size)
        rows.append((str(tau), rep))
    _table_csv(out_dir / "tau_sweep.csv", "tau", rows)
    return rows
