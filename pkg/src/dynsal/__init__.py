"""Two-branch video saliency network with dynamic cross-branch gating.

Package layout:
  tensor/ops   float64 autograd engine and spatial primitives
  encoder      branch backbone, multi-scale context block, decoders
  weightgen    per-branch dynamic 5-level weight generators
  caa          cross-branch gating and progressive pyramid fusion
  fusion       coarse-map fusion, spatial attention
  losses       per-map cross entropy and the multi-supervision total
  metrics      MAE, PR curve, F-measure, maxF, structure measure
  synth        synthetic moving-shape scenes with analytic flow
  fileio       .flo / PGM / PNG / tensor-dump / checkpoint / config files
  model        full network assembly and the variant switchboard
  optim        Adam with decoupled weight decay
  trainer      training loop, evaluation, ablation drivers
  cli          command-line entry point
"""

from .tensor import ShapeError, Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "ShapeError", "__version__"]
