"""Dense-tensor engine with tape-based reverse-mode automatic differentiation.

Values live in numpy arrays (float32 by default, float64 supported for
high-precision checks). Operations executed inside an active ``Graph``
context are recorded on a tape; ``Graph.backward`` replays the tape in
reverse, visiting every recorded operation exactly once. Outside a graph,
ops run as plain numpy computations with no recording overhead.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "GraphError",
    "ParameterError",
    "tensor",
    "parameter",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "power",
    "exp",
    "log",
    "sqrt",
    "clamp",
    "arccos",
    "gelu",
    "softmax",
    "layer_norm",
    "dropout",
    "tsum",
    "tmean",
    "reshape",
    "transpose",
    "concat",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(RuntimeError):
    """Misuse of the recording tape (non-scalar loss, repeated backward...)."""


class ParameterError(ValueError):
    """An operation argument is outside its legal range."""


_local = threading.local()


def _graph_stack() -> list["Graph"]:
    stack = getattr(_local, "graphs", None)
    if stack is None:
        stack = []
        _local.graphs = stack
    return stack


def current_graph() -> "Graph | None":
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense array plus grad bookkeeping.

    ``data`` is always a numpy float array; ``grad`` is populated by
    ``Graph.backward`` for every tensor with ``requires_grad=True`` that
    participated in the recorded computation.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def tensor(data, dtype=None) -> Tensor:
    """Wrap raw data as a constant (non-trainable) tensor."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    """Wrap raw data as a trainable tensor."""
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


class _Node:
    __slots__ = ("inputs", "out", "backward")

    def __init__(self, inputs: tuple[Tensor, ...], out: Tensor,
                 backward: Callable[[np.ndarray], Iterable[np.ndarray | None]]):
        self.inputs = inputs
        self.out = out
        self.backward = backward


class Graph:
    """Recording tape for one forward pass.

    Usage::

        with Graph() as g:
            loss = ...            # ops executed here are recorded
        g.backward(loss)          # populates .grad on trainable tensors

    Backward walks the tape in reverse execution order, so every recorded
    operation is visited exactly once and a tensor's gradient is complete
    before its producing operation consumes it. A second ``backward`` on
    the same graph raises; re-record the forward pass instead.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _graph_stack().pop()

    def _record(self, inputs: tuple[Tensor, ...], out: Tensor, backward) -> None:
        self._nodes.append(_Node(inputs, out, backward))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise GraphError(
                "backward was already run on this graph; record a new forward pass")
        if loss.data.size != 1:
            raise GraphError(f"loss must be scalar, got shape {loss.shape}")
        self._consumed = True

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
        produced = {id(node.out) for node in self._nodes}

        for node in reversed(self._nodes):
            grad_out = pending.pop(id(node.out), None)
            if grad_out is None:
                continue  # not on a path to the loss
            out = node.out
            if out.requires_grad:
                out.grad = grad_out if out.grad is None else out.grad + grad_out
            for inp, g in zip(node.inputs, node.backward(grad_out)):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + g
                else:
                    pending[key] = g
                if key not in produced:
                    leaves[key] = (inp, pending[key])

        for key, (leaf, _) in leaves.items():
            g = pending.get(key)
            if g is None:
                continue
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def _record_op(inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    graph = current_graph()
    needs = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        graph._record(tuple(inputs), out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record_op((a, b), out, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record_op((a, b), out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record_op((a, b), out, backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = (_unbroadcast(-g * a.data / (b.data * b.data), b.shape)
              if b.requires_grad else None)
        return ga, gb

    return _record_op((a, b), out, backward)


def neg(a: Tensor) -> Tensor:
    return _record_op((a,), -a.data, lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    arr = a.data * a.data.dtype.type(c)
    return _record_op((a,), arr, lambda g: (g * c,))


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for a constant exponent."""
    p = float(p)
    out = a.data ** p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return _record_op((a,), out, backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record_op((a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return _record_op((a,), out, lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        return (g / (2.0 * out),)

    return _record_op((a,), out, backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values into [lo, hi]; gradient is zero at and beyond the bounds."""
    if lo >= hi:
        raise ParameterError(f"clamp bounds must satisfy lo < hi, got [{lo}, {hi}]")
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        return (g * inside,)

    return _record_op((a,), out, backward)


def arccos(a: Tensor) -> Tensor:
    out = np.arccos(a.data)

    def backward(g):
        return (-g / np.sqrt(1.0 - a.data * a.data),)

    return _record_op((a,), out, backward)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = a.data
    half = x.dtype.type(0.5)
    cdf = half * (x.dtype.type(1.0) + erf(x * x.dtype.type(0.7071067811865476)))
    out = x * cdf

    def backward(g):
        pdf = np.exp(-half * x * x) * x.dtype.type(0.3989422804014327)
        return (g * (cdf + x * pdf),)

    return _record_op((a,), out, backward)


# ---------------------------------------------------------------------------
# normalization and regularization


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax; sums along ``axis`` are 1 to float accuracy."""
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    # accumulate the normalizer in 64-bit, then divide in storage precision
    denom = e.sum(axis=axis, keepdims=True, dtype=np.float64)
    out = e / denom.astype(a.data.dtype)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _record_op((a,), out, backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, axis: int = -1,
               eps: float = 1e-5) -> Tensor:
    """Normalize along ``axis`` to zero mean / unit variance, then affine."""
    n = a.data.shape[axis]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({n},), got "
            f"{gain.data.shape} and {bias.data.shape}")
    # moments accumulate in 64-bit; centering/scaling stay in storage precision
    mean = a.data.mean(axis=axis, keepdims=True, dtype=np.float64)
    centered = a.data - mean.astype(a.data.dtype)
    var = np.square(centered).mean(axis=axis, keepdims=True, dtype=np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(a.data.dtype)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        red = tuple(i for i in range(g.ndim) if i != axis % g.ndim)
        ggain = (g * xhat).sum(axis=red) if gain.requires_grad else None
        gbias = g.sum(axis=red) if bias.requires_grad else None
        ga = None
        if a.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=axis, keepdims=True)
            m2 = (gx * xhat).mean(axis=axis, keepdims=True)
            ga = inv * (gx - m1 - xhat * m2)
        return ga, ggain, gbias

    return _record_op((a, gain, bias), out, backward)


def dropout(a: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Zero each element with probability ``rate`` and rescale survivors.

    Identity (the same tensor object) at eval time. The generator must be
    supplied for training-mode calls so runs are reproducible.
    """
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ParameterError("training-mode dropout needs an explicit rng")
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype)
    keep /= a.data.dtype.type(1.0 - rate)
    out = a.data * keep

    def backward(g):
        return (g * keep,)

    return _record_op((a,), out, backward)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
    out = out.astype(a.data.dtype)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).astype(a.data.dtype, copy=False).copy(),)

    return _record_op((a,), out, backward)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64)
    out = out.astype(a.data.dtype)

    def backward(g):
        if axis is None:
            gg = np.broadcast_to(g / count, a.shape)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            gg = np.broadcast_to(gg / count, a.shape)
        return (gg.astype(a.data.dtype, copy=False).copy(),)

    return _record_op((a,), out, backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _record_op((a,), out, backward)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _record_op((a,), out, backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ParameterError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record_op(tuple(tensors), out, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy-style broadcasting of leading batch dims."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record_op((a, b), out, backward)
