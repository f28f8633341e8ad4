"""Minimal reverse-mode automatic differentiation over 64-bit real arrays.

A :class:`Tensor` wraps a numpy array and records its parents plus a backward
closure on a tape; :func:`backward` runs the tape in reverse topological
order.  Every op checks its output for NaN/Inf and raises
:class:`NonFiniteValue` on the spot, which keeps gradient debugging local.

Matmul supports stacked (batched) left operands against 2-D weights as well
as fully batched pairs, with broadcast-aware gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteValue, ShapeMismatch


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"non-finite value produced by {op}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None,
                 _op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, _op)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    # -- construction helpers ---------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data + other.data, parents=(self, other), _op="add")

        def bw(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        out.backward_fn = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,), _op="neg")
        out.backward_fn = lambda g: (-g,)
        return out

    def __sub__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data - other.data, parents=(self, other), _op="sub")

        def bw(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        out.backward_fn = bw
        return out

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data * other.data, parents=(self, other), _op="mul")

        def bw(g):
            return (_unbroadcast(g * other.data, self.shape),
                    _unbroadcast(g * self.data, other.shape))

        out.backward_fn = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data / other.data, parents=(self, other), _op="div")

        def bw(g):
            return (_unbroadcast(g / other.data, self.shape),
                    _unbroadcast(-g * self.data / other.data**2, other.shape))

        out.backward_fn = bw
        return out

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, exponent: float):
        out = Tensor(self.data**exponent, parents=(self,), _op="pow")
        out.backward_fn = lambda g: (g * exponent * self.data ** (exponent - 1),)
        return out

    def __matmul__(self, other):
        other = _as_tensor(other)
        if self.data.ndim < 1 or other.data.ndim < 2:
            raise ShapeMismatch("matmul expects at least (.., m, k) @ (.., k, n)")
        try:
            data = np.matmul(self.data, other.data)
        except ValueError as exc:
            raise ShapeMismatch(str(exc)) from exc
        out = Tensor(data, parents=(self, other), _op="matmul")

        def bw(g):
            ga = np.matmul(g, np.swapaxes(other.data, -1, -2))
            gb = np.matmul(np.swapaxes(self.data, -1, -2), g)
            return _unbroadcast(ga, self.shape), _unbroadcast(gb, other.shape)

        out.backward_fn = bw
        return out

    # -- elementwise functions --------------------------------------------
    def exp(self):
        out = Tensor(np.exp(self.data), parents=(self,), _op="exp")
        out.backward_fn = lambda g: (g * out.data,)
        return out

    def log(self):
        out = Tensor(np.log(self.data), parents=(self,), _op="log")
        out.backward_fn = lambda g: (g / self.data,)
        return out

    def sqrt(self):
        out = Tensor(np.sqrt(self.data), parents=(self,), _op="sqrt")
        out.backward_fn = lambda g: (g * 0.5 / out.data,)
        return out

    def sigmoid(self):
        out = Tensor(1.0 / (1.0 + np.exp(-self.data)), parents=(self,), _op="sigmoid")
        out.backward_fn = lambda g: (g * out.data * (1.0 - out.data),)
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), parents=(self,), _op="tanh")
        out.backward_fn = lambda g: (g * (1.0 - out.data**2),)
        return out

    # -- reductions / shaping ---------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,), _op="sum")

        def bw(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        out.backward_fn = bw
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,), _op="reshape")
        out.backward_fn = lambda g: (g.reshape(self.shape),)
        return out

    def swap_last(self):
        """Transpose the last two axes."""
        out = Tensor(np.swapaxes(self.data, -1, -2), parents=(self,), _op="swap")
        out.backward_fn = lambda g: (np.swapaxes(g, -1, -2),)
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], parents=(self,), _op="slice")

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            return (full,)

        out.backward_fn = bw
        return out

    def softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(y, parents=(self,), _op="softmax")

        def bw(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            return (y * (g - dot),)

        out.backward_fn = bw
        return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), parents=tuple(tensors), _op="concat")
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    out.backward_fn = bw
    return out


def backward(loss: Tensor) -> None:
    """Accumulate gradients of ``loss`` (a scalar) into every reachable tensor."""
    if loss.data.size != 1:
        raise ShapeMismatch("backward expects a scalar loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    for node in topo:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node.backward_fn is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if parent.requires_grad:
                _check_finite(g, "backward")
                parent.grad = parent.grad + g if parent.grad is not None else np.array(g)


def zero_grad(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def sgd_step(params: dict[str, Tensor], lr: float) -> None:
    """Plain stochastic gradient descent: p <- p - lr * grad."""
    for p in params.values():
        if p.grad is not None:
            p.data -= lr * p.grad
