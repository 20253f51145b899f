"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is built eagerly: every operation returns a new Tensor carrying a
backward closure over its parents. Calling backward() on a scalar output
topologically sorts the graph and accumulates gradients into every node that
requires them. Only the fixed set of primitives the network needs exists —
this is not a general autograd framework.

Activations follow the (batch, channels, height, width) layout; reductions
may produce lower-rank tensors (loss scalars, bias vectors).
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

__all__ = ["Tensor", "ShapeError"]

# Largest sigmoid output strictly below 1.0 in float64.
_ONE_BELOW = np.nextafter(1.0, 0.0)
_SIGMOID_CLAMP = 40.0


class ShapeError(ValueError):
    """An operand's shape violates the operation's contract."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(t: "Tensor", g: np.ndarray) -> None:
    if t.grad is None:
        if g.shape == t.data.shape:
            t.grad = np.array(g, dtype=np.float64)
            return
        t.grad = np.zeros_like(t.data)
    t.grad += g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # ------------------------------------------------------------------
    # graph plumbing
    # ------------------------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: Iterable["Tensor"],
                backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        parents = tuple(parents)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into .grad across the graph.

        self must hold a single value. Iterative DFS keeps deep chains
        (long conv stacks) clear of the recursion limit.
        """
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output, got shape %r"
                             % (self.data.shape,))
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        _accum(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # basic introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # ------------------------------------------------------------------
    # arithmetic (numpy broadcasting; gradients are unbroadcast back)
    # ------------------------------------------------------------------

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def __add__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self, other

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.data.shape))

        return Tensor._result(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accum(a, -g)

        return Tensor._result(-a.data, (a,), backward)

    def __sub__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self, other

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g, b.data.shape))

        return Tensor._result(a.data - b.data, (a, b), backward)

    def __rsub__(self, other) -> "Tensor":
        return Tensor._coerce(other).__sub__(self)

    def __mul__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self, other

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accum(a, _unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * a.data, b.data.shape))

        return Tensor._result(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self, other
        out_data = a.data / b.data

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accum(a, _unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g * out_data / b.data, b.data.shape))

        return Tensor._result(out_data, (a, b), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor._coerce(other).__truediv__(self)

    # ------------------------------------------------------------------
    # pointwise nonlinearities
    # ------------------------------------------------------------------

    def exp(self) -> "Tensor":
        a = self
        out_data = np.exp(a.data)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accum(a, g * out_data)

        return Tensor._result(out_data, (a,), backward)

    def log(self) -> "Tensor":
        a = self

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accum(a, g / a.data)

        return Tensor._result(np.log(a.data), (a,), backward)

    def clamp(self, lo: float, hi: float) -> "Tensor":
        a = self
        mask = (a.data > lo) & (a.data < hi)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accum(a, g * mask)

        return Tensor._result(np.clip(a.data, lo, hi), (a,), backward)

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0  # subgradient 0 at exactly 0

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accum(a, g * mask)

        return Tensor._result(np.maximum(a.data, 0.0), (a,), backward)

    def sigmoid(self) -> "Tensor":
        # Inputs clamped to +-40 so exp stays finite; the high side is then
        # nudged below 1.0 so downstream logs of (1 - s) stay defined.
        a = self
        z = np.clip(a.data, -_SIGMOID_CLAMP, _SIGMOID_CLAMP)
        s = 1.0 / (1.0 + np.exp(-z))
        s = np.minimum(s, _ONE_BELOW)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accum(a, g * s * (1.0 - s))

        return Tensor._result(s, (a,), backward)

    # ------------------------------------------------------------------
    # reductions
    # ------------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g: np.ndarray) -> None:
            if not a.requires_grad:
                return
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape))

        return Tensor._result(out_data, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out_data = a.data.mean(axis=axis, keepdims=keepdims)
        count = a.data.size if axis is None else int(
            np.prod([a.data.shape[i] for i in np.atleast_1d(axis)]))

        def backward(g: np.ndarray) -> None:
            if not a.requires_grad:
                return
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape) / count)

        return Tensor._result(out_data, (a,), backward)
