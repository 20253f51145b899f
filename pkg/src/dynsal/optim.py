"""Adam with bias correction and decoupled weight decay.

Parameters whose gradient is None after backward (gate-suppressed branches,
frozen subgraphs) are skipped entirely for that step: their values and
moment buffers stay untouched.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["Adam"]


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr < 0 or weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        if not params:
            raise ValueError("no parameters to optimize")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """One update over all parameters that received a gradient."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self._m.items()},
            "v": {k: v.copy() for k, v in self._v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        if set(state["m"]) != set(self.params) or set(state["v"]) != set(self.params):
            missing = set(self.params) ^ set(state["m"])
            raise ValueError(f"optimizer state names differ: {sorted(missing)}")
        for k, p in self.params.items():
            if state["m"][k].shape != p.data.shape:
                raise ValueError(
                    f"moment shape for {k}: {state['m'][k].shape} != {p.data.shape}")
        self.t = int(state["t"])
        self._m = {k: np.asarray(v, dtype=np.float64).copy()
                   for k, v in state["m"].items()}
        self._v = {k: np.asarray(v, dtype=np.float64).copy()
                   for k, v in state["v"].items()}
