"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape-free engine: every primitive builds a new ``Tensor`` that keeps
references to its parents and a closure computing the parent gradients.
``backward`` replays the DAG in reverse topological order. Everything is
double precision so analytic gradients can be validated against central
finite differences at tight tolerances.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "as_tensor",
    "backward",
    "zeros",
    "absolute",
    "exp",
    "power",
    "tensor_sum",
    "reshape",
    "transpose",
    "narrow",
    "pad",
    "concat",
    "stack",
    "select",
    "set_finite_checks",
    "set_corrupt_op",
]

_FINITE_CHECKS = True
_CORRUPT_OP: str | None = None


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class NumericError(ArithmeticError):
    """An operation received or produced non-finite values."""


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf validation of operation inputs (on by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def set_corrupt_op(op_name: str | None) -> None:
    """Scale the analytic gradients of one named op by 1.01.

    Self-test hook for the gradient-check harness: a corrupted op must make
    the finite-difference comparison fail.
    """
    global _CORRUPT_OP
    _CORRUPT_OP = op_name


def _require_finite(op: str, *arrays: np.ndarray) -> None:
    if not _FINITE_CHECKS:
        return
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{op}: non-finite values in input")


class Tensor:
    """Dense float64 array with an optional slot in the autodiff graph.

    ``grad`` accumulates across repeated ``backward`` calls until the caller
    resets it (``zero_grad``). Data is always contiguous float64.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None) -> "Tensor":
        n = self.size if axis is None else self.shape[axis]
        return tensor_sum(self, axis=axis) * (1.0 / n)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    """Promote arrays and scalars to constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _from_op(data, parents, backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _topo_order(root: Tensor) -> list:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor with ``requires_grad``.

    ``loss`` must be scalar. Repeated calls accumulate into existing grads.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    _require_finite("backward", loss.data)

    order = _topo_order(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            # flowing arrays are freshly allocated per pass; aliasing is safe
            # because grads are never mutated in place
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        if _CORRUPT_OP is not None and node._op == _CORRUPT_OP:
            parent_grads = tuple(None if pg is None else pg * 1.01 for pg in parent_grads)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                pg = _unbroadcast(pg, parent.data.shape)
            acc = flowing.get(id(parent))
            flowing[id(parent)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_finite("add", a.data, b.data)

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _from_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_finite("sub", a.data, b.data)

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_finite("mul", a.data, b.data)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _from_op(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_finite("div", a.data, b.data)
    out = a.data / b.data

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _from_op(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (-g,)

    return _from_op(-a.data, (a,), bw, "neg")


def power(a, p) -> Tensor:
    """Elementwise power with a constant exponent."""
    a = as_tensor(a)
    p = float(p)
    _require_finite("power", a.data)

    def bw(g):
        return (g * p * np.power(a.data, p - 1.0),)

    return _from_op(np.power(a.data, p), (a,), bw, "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    _require_finite("exp", a.data)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _from_op(out, (a,), bw, "exp")


def absolute(a) -> Tensor:
    """|x|, with subgradient 0 at x == 0."""
    a = as_tensor(a)
    _require_finite("abs", a.data)
    sgn = np.sign(a.data)

    def bw(g):
        return (g * sgn,)

    return _from_op(np.abs(a.data), (a,), bw, "abs")


# ---------------------------------------------------------------------------
# reductions and shape surgery


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _require_finite("sum", a.data)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _from_op(out, (a,), bw, "sum")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g.reshape(a.shape),)

    return _from_op(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inverse),)

    return _from_op(a.data.transpose(axes), (a,), bw, "transpose")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along one axis."""
    a = as_tensor(a)
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow out of range: axis {axis} extent {a.shape[axis]}, "
            f"requested [{start}, {start + length})"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def bw(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _from_op(a.data[index].copy(), (a,), bw, "narrow")


def pad(a, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` follows ``np.pad`` conventions."""
    a = as_tensor(a)
    pad_width = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    if len(pad_width) != a.ndim:
        raise ShapeError("pad_width must give (before, after) for every axis")
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))

    def bw(g):
        return (g[crop],)

    return _from_op(np.pad(a.data, pad_width), (a,), bw, "pad")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        out = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * t.ndim
            index[axis] = slice(lo, hi)
            out.append(g[tuple(index)])
        return tuple(out)

    return _from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shape0 = tensors[0].shape
    for t in tensors:
        if t.shape != shape0:
            raise ShapeError("stack requires identical shapes")

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _from_op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw, "stack")


def select(mask: np.ndarray, a, b) -> Tensor:
    """``where(mask, a, b)`` with a constant boolean mask.

    The mask is data, not a graph node; gradients route to the chosen branch.
    """
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)

    def bw(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        )

    return _from_op(out, (a, b), bw, "select")
