"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Operations executed while a :class:`Graph` is active (``with Graph() as g:``)
and that touch at least one tensor with ``requires_grad=True`` are recorded
on the graph in execution order, which is a valid topological order.
:func:`backward` walks the recorded nodes in exact reverse order.

Outside an active graph nothing is recorded, which is how inference runs.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, DomainError

_local = threading.local()


def _stack():
    if not hasattr(_local, "graphs"):
        _local.graphs = []
    return _local.graphs


def active_graph() -> "Graph | None":
    stack = _stack()
    return stack[-1] if stack else None


class Node:
    __slots__ = ("kind", "inputs", "output", "backward", "graph", "index")

    def __init__(self, kind, inputs, output, backward, graph, index):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.graph = graph
        self.index = index

    def __repr__(self):
        return f"Node({self.kind!r}, index={self.index})"


class Graph:
    """Ordered record of primitive applications.

    Graphs are confined to the thread that entered them.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("graph contexts exited out of order")
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, tensor):
        node = getattr(tensor, "_node", None)
        return node is not None and node.graph is self

    def record(self, kind, inputs, output, backward):
        node = Node(kind, inputs, output, backward, self, len(self.nodes))
        self.nodes.append(node)
        return node


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __array_priority__ = 1000

    def __init__(self, values, requires_grad: bool = False):
        self.data = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    @classmethod
    def _wrap(cls, array):
        t = cls.__new__(cls)
        t.data = np.asarray(array, dtype=np.float64)
        t.requires_grad = False
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self._node is None:
            raise ContractError("tensor was not produced on an active graph")
        return backward(self._node.graph, self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def _emit(kind: str, data, inputs: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    out = Tensor._wrap(data)
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = graph.record(kind, tuple(inputs), out, grad_fn)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from exc


def _first(mask):
    return tuple(int(i) for i in np.argwhere(mask)[0])


# ---------------------------------------------------------------- binary ops

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    zero = b.data == 0
    if zero.any():
        raise DomainError("div: division by zero", _first(zero))
    return _emit("div", a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / b.data ** 2, b.shape)))


def atan2(y, x):
    """Four-quadrant arctangent; the gradient at the origin is defined as zero."""
    y, x = as_tensor(y), as_tensor(x)
    _check_broadcast("atan2", y, x)

    def grad(g):
        r2 = x.data ** 2 + y.data ** 2
        safe = np.where(r2 == 0, 1.0, r2)
        gy = np.where(r2 == 0, 0.0, g * x.data / safe)
        gx = np.where(r2 == 0, 0.0, -g * y.data / safe)
        return _unbroadcast(gy, y.shape), _unbroadcast(gx, x.shape)

    return _emit("atan2", np.arctan2(y.data, x.data), (y, x), grad)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def grad(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", a.data @ b.data, (a, b), grad)


# ----------------------------------------------------------------- unary ops

def neg(a):
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _emit("relu", a.data * mask, (a,), lambda g: (g * mask,))


def sin(a):
    a = as_tensor(a)
    return _emit("sin", np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = as_tensor(a)
    return _emit("cos", np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def tan(a):
    a = as_tensor(a)
    y = np.tan(a.data)
    return _emit("tan", y, (a,), lambda g: (g * (1.0 + y * y),))


def atan(a):
    a = as_tensor(a)
    return _emit("atan", np.arctan(a.data), (a,), lambda g: (g / (1.0 + a.data ** 2),))


def sqrt(a):
    a = as_tensor(a)
    bad = a.data < 0
    if bad.any():
        raise DomainError("sqrt: negative argument", _first(bad))
    y = np.sqrt(a.data)
    return _emit("sqrt", y, (a,), lambda g: (g * 0.5 / y,))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return _emit("exp", y, (a,), lambda g: (g * y,))


def log(a):
    a = as_tensor(a)
    bad = a.data <= 0
    if bad.any():
        raise DomainError("log: non-positive argument", _first(bad))
    return _emit("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a):
    a = as_tensor(a)
    return _emit("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp(a, lo, hi):
    """Clip to ``[lo, hi]``; gradient passes through on the closed interval."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def huber(a, h=1.0):
    """Elementwise Huber penalty with cutoff ``h``."""
    a = as_tensor(a)
    x = a.data
    ax = np.abs(x)
    y = np.where(ax < h, 0.5 * x * x, h * (ax - 0.5 * h))
    return _emit("huber", y, (a,), lambda g: (g * np.clip(x, -h, h),))


# ------------------------------------------------------------- reductions

def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    y = a.data.sum(axis=axes, keepdims=keepdims)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", y, (a,), grad)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    y = a.data.mean(axis=axes, keepdims=keepdims) if axes else a.data.copy()

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _emit("mean", y, (a,), grad)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _emit("log_softmax", y, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# ------------------------------------------------------------ shape ops

def reshape(a, shape):
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot reshape {a.shape} into {shape}") from exc
    return _emit("reshape", y, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    y = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _emit("transpose", y, (a,), lambda g: (np.transpose(g, inverse),))


def _is_advanced(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def slice_(a, index):
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    try:
        y = a.data[index]
    except IndexError as exc:
        raise DimensionError(f"slice: {exc}") from exc
    advanced = _is_advanced(index)

    def grad(g):
        out = np.zeros(a.shape)
        if advanced:
            np.add.at(out, index, g)
        else:
            out[index] += g
        return (out,)

    return _emit("slice", np.array(y, dtype=np.float64), (a,), grad)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit("concat", y, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from exc
    n = len(tensors)
    return _emit("stack", y, tensors,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# ------------------------------------------------------------ convolution

def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation of ``x`` (B, C, H, W) with ``weight`` (O, C, k, k)."""
    x, weight = as_tensor(x), as_tensor(weight)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        inputs.append(bias)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    B, C, H, W = x.shape
    O, _, kh, kw = weight.shape
    p, s = padding, stride
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    if Ho <= 0 or Wo <= 0:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    patches = [xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] for i in range(kh) for j in range(kw)]
    cols = np.stack(patches, axis=2)  # B, C, kh*kw, Ho, Wo
    cols = cols.transpose(0, 3, 4, 1, 2).reshape(B, Ho, Wo, C * kh * kw)
    wmat = weight.data.reshape(O, C * kh * kw)
    y = cols @ wmat.T
    if bias is not None:
        y = y + bias.data
    y = y.transpose(0, 3, 1, 2)

    def grad(g):
        gt = g.transpose(0, 2, 3, 1)  # B, Ho, Wo, O
        gw = (gt.reshape(-1, O).T @ cols.reshape(-1, C * kh * kw)).reshape(weight.shape)
        gcols = (gt @ wmat).reshape(B, Ho, Wo, C, kh * kw).transpose(0, 3, 4, 1, 2)
        gxp = np.zeros(xp.shape)
        k = 0
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += gcols[:, :, k]
                k += 1
        gx = gxp[:, :, p:p + H, p:p + W]
        out = [gx, gw]
        if bias is not None:
            out.append(gt.reshape(-1, O).sum(axis=0))
        return tuple(out)

    return _emit("conv2d", y, inputs, grad)


PRIMITIVES: dict[str, Callable] = {
    "add": add, "sub": sub, "mul": mul, "div": div, "matmul": matmul,
    "concat": concat, "stack": stack, "slice": slice_, "reshape": reshape, "transpose": transpose,
    "neg": neg, "tanh": tanh, "sigmoid": sigmoid, "relu": relu, "sin": sin, "cos": cos,
    "tan": tan, "atan": atan, "atan2": atan2, "sqrt": sqrt, "exp": exp, "log": log, "abs": abs_,
    "sum": sum_, "mean": mean, "softmax": softmax, "log_softmax": log_softmax,
    "clamp": clamp, "huber": huber, "conv2d": conv2d,
}

_LIST_INPUT = {"concat", "stack"}


def apply_primitive(op_kind: str, inputs, **params) -> Tensor:
    """Apply a primitive by name; records a node when a graph is active."""
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise ContractError(f"unknown primitive {op_kind!r}") from None
    if op_kind in _LIST_INPUT:
        return fn(list(inputs), **params)
    return fn(*inputs, **params)


def backward(graph: Graph, output: Tensor) -> dict:
    """Accumulate d(output)/d(tensor) into ``.grad`` of every tracked tensor.

    Returns a mapping from each reached tensor to its gradient. Leaf tensors
    requiring grad that appear on the graph but do not influence ``output``
    receive a zero gradient.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if output not in graph:
        raise ContractError("output was not recorded on this graph")
    grads = {id(output): np.ones_like(output.data)}
    reached = {id(output): output}
    for node in reversed(graph.nodes[:output._node.index + 1]):
        g = grads.get(id(node.output))
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                reached[key] = t
    result = {}
    for key, t in reached.items():
        g = grads[key]
        t.grad = np.array(g, dtype=np.float64) if t.grad is None else t.grad + g
        result[t] = g
    for node in graph.nodes:
        for t in node.inputs:
            if t.requires_grad and t._node is None and t.grad is None:
                t.grad = np.zeros(t.shape)
    return result
