"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

A :class:`Var` wraps an ndarray and remembers how it was produced; calling
:func:`backward` on a scalar loss walks the recorded graph once in reverse
topological order and leaves exact gradients on every reachable variable.
Everything is 64-bit; there is no graph reuse, retained state, or implicit
broadcasting beyond what the listed ops define.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Var", "backward", "concat_rows", "const", "grad_of"]


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """Node in the computation graph; leaves are parameters or constants."""

    __slots__ = ("data", "grad", "_parents", "_bw")

    def __init__(self, data, _parents: tuple = (), _bw=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._bw = _bw

    # -- basic arithmetic ---------------------------------------------------

    def __add__(self, other):
        other = wrap(other)
        out = Var(self.data + other.data, (self, other))

        def bw(g):
            _accum(self, _unbroadcast(g, self.data.shape))
            _accum(other, _unbroadcast(g, other.data.shape))
        out._bw = bw
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = wrap(other)
        out = Var(self.data - other.data, (self, other))

        def bw(g):
            _accum(self, _unbroadcast(g, self.data.shape))
            _accum(other, _unbroadcast(-g, other.data.shape))
        out._bw = bw
        return out

    def __rsub__(self, other):
        return wrap(other).__sub__(self)

    def __neg__(self):
        out = Var(-self.data, (self,))

        def bw(g):
            _accum(self, -g)
        out._bw = bw
        return out

    def __mul__(self, other):
        other = wrap(other)
        out = Var(self.data * other.data, (self, other))

        def bw(g):
            _accum(self, _unbroadcast(g * other.data, self.data.shape))
            _accum(other, _unbroadcast(g * self.data, other.data.shape))
        out._bw = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = wrap(other)
        out = Var(self.data / other.data, (self, other))

        def bw(g):
            _accum(self, _unbroadcast(g / other.data, self.data.shape))
            _accum(other, _unbroadcast(-g * self.data / (other.data ** 2),
                                       other.data.shape))
        out._bw = bw
        return out

    def __rtruediv__(self, other):
        return wrap(other).__truediv__(self)

    def matmul(self, other: "Var") -> "Var":
        other = wrap(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul expects 2-D operands")
        out = Var(self.data @ other.data, (self, other))

        def bw(g):
            _accum(self, g @ other.data.T)
            _accum(other, self.data.T @ g)
        out._bw = bw
        return out

    __matmul__ = matmul

    # -- elementwise nonlinearities ------------------------------------------

    def sigmoid(self) -> "Var":
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = Var(s, (self,))

        def bw(g):
            _accum(self, g * s * (1.0 - s))
        out._bw = bw
        return out

    def tanh(self) -> "Var":
        t = np.tanh(self.data)
        out = Var(t, (self,))

        def bw(g):
            _accum(self, g * (1.0 - t * t))
        out._bw = bw
        return out

    def leaky_relu(self, slope: float = 0.01) -> "Var":
        x = self.data
        out = Var(np.where(x >= 0, x, slope * x), (self,))

        def bw(g):
            _accum(self, np.where(x >= 0, g, slope * g))
        out._bw = bw
        return out

    def exp(self) -> "Var":
        e = np.exp(self.data)
        out = Var(e, (self,))

        def bw(g):
            _accum(self, g * e)
        out._bw = bw
        return out

    def log(self) -> "Var":
        out = Var(np.log(self.data), (self,))

        def bw(g):
            _accum(self, g / self.data)
        out._bw = bw
        return out

    def square(self) -> "Var":
        out = Var(self.data * self.data, (self,))

        def bw(g):
            _accum(self, 2.0 * g * self.data)
        out._bw = bw
        return out

    def clip(self, lo: float, hi: float) -> "Var":
        """Clamp; gradient passes through only where the value was kept."""
        x = self.data
        out = Var(np.clip(x, lo, hi), (self,))
        mask = (x >= lo) & (x <= hi)

        def bw(g):
            _accum(self, g * mask)
        out._bw = bw
        return out

    def minimum(self, other: "Var") -> "Var":
        """Elementwise min; ties route the gradient to ``self``."""
        other = wrap(other)
        take_self = self.data <= other.data
        out = Var(np.where(take_self, self.data, other.data), (self, other))

        def bw(g):
            _accum(self, _unbroadcast(g * take_self, self.data.shape))
            _accum(other, _unbroadcast(g * ~take_self, other.data.shape))
        out._bw = bw
        return out

    # -- reductions and shape ops ---------------------------------------------

    def sum(self) -> "Var":
        out = Var(self.data.sum(), (self,))

        def bw(g):
            _accum(self, np.broadcast_to(g, self.data.shape).copy())
        out._bw = bw
        return out

    def mean(self) -> "Var":
        n = self.data.size
        out = Var(self.data.mean(), (self,))

        def bw(g):
            _accum(self, np.broadcast_to(g / n, self.data.shape).copy())
        out._bw = bw
        return out

    def reshape(self, *shape) -> "Var":
        old = self.data.shape
        out = Var(self.data.reshape(*shape), (self,))

        def bw(g):
            _accum(self, g.reshape(old))
        out._bw = bw
        return out

    # -- bookkeeping -----------------------------------------------------------

    def grad_value(self) -> np.ndarray:
        if self.grad is None:
            raise RuntimeError("gradient queried before backward() ran over this variable")
        return self.grad

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Var(shape={self.data.shape})"


def wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def const(x) -> Var:
    """Alias for wrapping plain arrays that only feed forward."""
    return wrap(x)


def concat_rows(parts: list[Var]) -> Var:
    """Stack 2-D blocks along axis 0; gradient splits back row-wise."""
    datas = [p.data for p in parts]
    out = Var(np.concatenate(datas, axis=0), tuple(parts))
    sizes = [d.shape[0] for d in datas]

    def bw(g):
        offset = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[offset:offset + n])
            offset += n
    out._bw = bw
    return out


def _accum(var: Var, g: np.ndarray) -> None:
    if var.grad is None:
        var.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        var.grad += g


def backward(loss: Var, params: dict[str, Var] | None = None) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients of every variable reachable from ``loss`` are freshly computed
    (previous contents are discarded). Parameters passed in ``params`` that
    the loss does not depend on get exact zero gradients, so optimizers can
    treat the dict uniformly.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    topo: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    for node in topo:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bw is not None and node.grad is not None:
            node._bw(node.grad)

    if params is not None:
        for p in params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def grad_of(var: Var) -> np.ndarray:
    return var.grad_value()
