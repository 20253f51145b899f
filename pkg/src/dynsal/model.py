"""Full two-branch network assembly and the ablation-variant switchboard.

The proposed pipeline: two symmetric branch encoders (frames / rendered flow)
each emit a 5-level pyramid plus a coarse saliency map; per-branch weight
generators score every level; the scores are pairwise-normalized, gated, and
used to blend the pyramids level by level; the blend is fused top-down into
one feature; the coarse maps are blended by branch reliability and gate that
feature spatially before the final decoder.

Every ablation is a named variant that swaps or disables one piece while
keeping the shared components' parameters bit-identical (each component draws
from its own fixed seed stream).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError
from . import ops, caa, fusion
from .encoder import BranchEncoder, Decoder, PYRAMID_CHANNELS, LEVEL_STRIDES
from .weightgen import WeightGenerator, SeparateWeightGenerator, DenseWeightGenerator

__all__ = ["VARIANTS", "Diagnostics", "ForwardResult", "Model"]


@dataclass(frozen=True)
class _Plan:
    """Structural knobs one variant turns."""

    spatial: bool = True
    temporal: bool = True
    generator: str | None = "proposed"  # proposed | sep | fc | None
    gate: str = "threshold"             # threshold | raw | none | ones
    direction: str = "td"               # td | bu
    coarse: str | None = "eps"          # eps | sum | None
    attention: bool = True
    echo: str | None = None             # s | t: single-branch passthrough
    supervised: tuple[str, ...] = ("s", "t", "c", "f")
    single_supervision: bool = False


_PLANS = {
    "proposed": _Plan(),
    "M1": _Plan(temporal=False, generator=None, coarse=None, attention=False,
                echo="s", supervised=("s",)),
    "M2": _Plan(spatial=False, generator=None, coarse=None, attention=False,
                echo="t", supervised=("t",)),
    "M3": _Plan(generator=None, gate="ones", coarse=None, attention=False,
                supervised=("s", "t", "f")),
    "DWG-SEP": _Plan(generator="sep"),
    "DWG-FC": _Plan(generator="fc"),
    "CAA-woS": _Plan(gate="raw"),
    "CAA-woN": _Plan(gate="none"),
    "CAA-BU": _Plan(direction="bu"),
    "M-SS": _Plan(supervised=("f",), single_supervision=True),
    "M-AGGS": _Plan(coarse="sum"),
    "M-woATT": _Plan(attention=False),
}

VARIANTS = tuple(_PLANS)

# component index -> independent parameter stream, so a component's initial
# parameters are identical in every variant that includes it
_STREAMS = {"enc_s": 0, "enc_t": 1, "dwg_s": 2, "dwg_t": 3, "caa": 4, "dec_f": 5}


@dataclass
class Diagnostics:
    """Per-sample gate traces: raw, normalized, and gated weight vectors
    (B,n) plus the reliability pair (B,). Fields a variant never computes
    are None."""

    w_s: np.ndarray | None = None
    w_t: np.ndarray | None = None
    v_s: np.ndarray | None = None
    v_t: np.ndarray | None = None
    u_s: np.ndarray | None = None
    u_t: np.ndarray | None = None
    eps_s: np.ndarray | None = None
    eps_t: np.ndarray | None = None


@dataclass
class ForwardResult:
    s_s: Tensor | None
    s_t: Tensor | None
    s_c: Tensor | None
    s_f: Tensor
    diagnostics: Diagnostics


def _stream_rng(seed: int, component: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_STREAMS[component],))
    return np.random.Generator(np.random.PCG64(ss))


class Model:
    """One assembled network.

    reliability_from selects which vectors feed the coarse-map blend:
    'v' (normalized, the default) or 'u' (gated) for experimentation.
    """

    def __init__(self, seed: int, variant: str = "proposed",
                 tau: float = caa.DEFAULT_TAU,
                 channels: tuple[int, ...] = PYRAMID_CHANNELS,
                 reliability_from: str = "v"):
        if variant not in _PLANS:
            raise ValueError(
                f"unknown variant {variant!r}; valid: {', '.join(VARIANTS)}")
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau must lie in [0,1], got {tau}")
        if reliability_from not in ("v", "u"):
            raise ValueError(f"reliability_from must be 'v' or 'u'")
        self.seed = int(seed)
        self.variant = variant
        self.plan = _PLANS[variant]
        self.tau = float(tau)
        self.channels = tuple(channels)
        self.reliability_from = reliability_from
        plan = self.plan

        self.enc_s = BranchEncoder(_stream_rng(seed, "enc_s"), self.channels) \
            if plan.spatial else None
        self.enc_t = BranchEncoder(_stream_rng(seed, "enc_t"), self.channels) \
            if plan.temporal else None

        self.dwg_s = self.dwg_t = None
        if plan.generator is not None:
            cls = {"proposed": WeightGenerator, "sep": SeparateWeightGenerator,
                   "fc": DenseWeightGenerator}[plan.generator]
            self.dwg_s = cls(_stream_rng(seed, "dwg_s"), self.channels)
            self.dwg_t = cls(_stream_rng(seed, "dwg_t"), self.channels)

        self.stage_configs = None
        self.dec_f = None
        if plan.echo is None:
            build = (caa.build_stage_configs if plan.direction == "td"
                     else caa.build_bottom_up_configs)
            self.stage_configs = build(_stream_rng(seed, "caa"),
                                       self.channels, LEVEL_STRIDES)
            final_in = (self.stage_configs[0] if plan.direction == "td"
                        else self.stage_configs[-1]).out_channels
            self.dec_f = Decoder(_stream_rng(seed, "dec_f"), final_in)

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        parts = [("enc_s", self.enc_s), ("enc_t", self.enc_t),
                 ("dwg_s", self.dwg_s), ("dwg_t", self.dwg_t)]
        for prefix, comp in parts:
            if comp is not None:
                out.update({f"{prefix}.{k}": v for k, v in comp.params().items()})
        if self.stage_configs is not None:
            for cfg in self.stage_configs:
                out.update({f"caa.{k}": v for k, v in cfg.params().items()})
        if self.dec_f is not None:
            out.update({f"dec_f.{k}": v for k, v in self.dec_f.params().items()})
        return out

    def set_trainable(self, flag: bool) -> None:
        """Toggle gradient tracking; evaluation forwards build no graph."""
        for p in self.parameters().values():
            p.requires_grad = flag

    def load_parameters(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ValueError(
                f"parameter names differ (missing {missing[:3]}, extra {extra[:3]})")
        for name, p in params.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: shape {a.shape} != {p.data.shape}")
            p.data = a.copy()

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    @staticmethod
    def _batchify(x: np.ndarray, what: str) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"{what} must be (B,3,H,W), got {x.shape}")
        return Tensor(x)

    def forward(self, frames: np.ndarray | None,
                flows: np.ndarray | None) -> ForwardResult:
        """Run one batch: frames are RGB in [0,1], flows are rendered flow
        images in [0,1]. A disabled branch's input may be None and is never
        touched."""
        plan = self.plan
        if plan.echo == "s":
            out = self.enc_s.run_branch(self._batchify(frames, "frames"))
            return ForwardResult(out.coarse_map, None, None, out.coarse_map,
                                 Diagnostics())
        if plan.echo == "t":
            out = self.enc_t.run_branch(self._batchify(flows, "flows"))
            return ForwardResult(None, out.coarse_map, None, out.coarse_map,
                                 Diagnostics())

        ft = self._batchify(frames, "frames")
        fl = self._batchify(flows, "flows")
        if ft.data.shape != fl.data.shape:
            raise ShapeError(
                f"frame batch {ft.data.shape} != flow batch {fl.data.shape}")
        out_s = self.enc_s.run_branch(ft)
        out_t = self.enc_t.run_branch(fl)
        s_s, s_t = out_s.coarse_map, out_t.coarse_map
        n = len(self.channels)
        batch = ft.data.shape[0]
        diag = Diagnostics()

        if plan.generator is not None:
            w_s = self.dwg_s(out_s.pyramid)
            w_t = self.dwg_t(out_t.pyramid)
            pair = caa.cross_normalize_t(w_s, w_t)
            v_s, v_t = pair.spatial, pair.temporal
            gates = []
            for i in range(n):
                v_i = caa.GatePair(ops.slice_channels(v_s, i, i + 1),
                                   ops.slice_channels(v_t, i, i + 1),
                                   "normalized")
                if plan.gate == "threshold":
                    gates.append(caa.cross_threshold_t(v_i, self.tau))
                elif plan.gate == "raw":
                    gates.append(caa.raw_threshold_t(
                        ops.slice_channels(w_s, i, i + 1),
                        ops.slice_channels(w_t, i, i + 1), self.tau))
                else:  # no thresholding: use the normalized pair as-is
                    gates.append(caa.GatePair(v_i.spatial, v_i.temporal, "gated"))
            u_s = ops.concat_channels([g.spatial for g in gates])
            u_t = ops.concat_channels([g.temporal for g in gates])
            diag.w_s = w_s.data.reshape(batch, n).copy()
            diag.w_t = w_t.data.reshape(batch, n).copy()
            diag.v_s = v_s.data.reshape(batch, n).copy()
            diag.v_t = v_t.data.reshape(batch, n).copy()
            diag.u_s = u_s.data.reshape(batch, n).copy()
            diag.u_t = u_t.data.reshape(batch, n).copy()
        else:  # symmetric baseline: plain feature sums
            gates = [caa.GatePair(1.0, 1.0, "gated")] * n

        fuse = caa.top_down_fuse if plan.direction == "td" else caa.bottom_up_fuse
        f_final = fuse(out_s.pyramid.levels, out_t.pyramid.levels,
                       gates, self.stage_configs)

        s_c = None
        if plan.coarse == "eps":
            # raw-gated u may be negative; reliability always comes from a
            # softmax-normalized stack in that case
            if self.reliability_from == "u" and plan.gate != "raw":
                rel = fusion.branch_reliability(u_s, u_t)
            else:
                rel = fusion.branch_reliability(v_s, v_t)
            s_c = fusion.fuse_coarse_maps(s_s, s_t, rel)
            diag.eps_s = rel.eps_s.data.reshape(batch).copy()
            diag.eps_t = rel.eps_t.data.reshape(batch).copy()
        elif plan.coarse == "sum":
            s_c = fusion.fuse_coarse_maps_sum(s_s, s_t)

        f_att = f_final
        if plan.attention and s_c is not None:
            f_att = fusion.apply_spatial_attention(f_final, s_c)
        _, _, h, w = ft.data.shape
        s_f = self.decode_final(f_att, h, w)
        return ForwardResult(s_s, s_t, s_c, s_f, diag)

    def decode_final(self, f_att: Tensor, out_h: int, out_w: int) -> Tensor:
        """Final saliency from the (optionally attention-gated) fused feature."""
        if self.dec_f is None:
            raise ValueError(f"variant {self.variant} has no final decoder")
        return self.dec_f(f_att, out_h, out_w)
