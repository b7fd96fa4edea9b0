"""Eager tensors with tape-based reverse-mode differentiation.

Every op that touches a tensor with ``requires_grad`` appends a node to an
implicit tape (nodes carry a global sequence number).  ``backward`` walks the
reachable part of that tape in reverse sequence order, so each node is visited
exactly once and only after every consumer of its output.

Backward rules are module-level functions looked up at call time; tests
monkeypatch them to check that the gradient harness catches broken rules.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}

_state = threading.local()
_seq = itertools.count()


def _flag(name, default):
    return getattr(_state, name, default)


def is_grad_enabled() -> bool:
    return _flag("grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def is_verifying() -> bool:
    return _flag("verify", False)


@contextlib.contextmanager
def verification_mode(enabled: bool = True):
    """Assert every op output is finite while active."""
    prev = is_verifying()
    _state.verify = enabled
    try:
        yield
    finally:
        _state.verify = prev


class NonFiniteError(FloatingPointError):
    pass


class Node:
    """One tape entry: the op that produced a tensor."""

    __slots__ = ("seq", "op", "inputs", "backward")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward: Callable):
        self.seq = next(_seq)
        self.op = op
        self.inputs = tuple(inputs)
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if any(s < 0 for s in arr.shape):
            raise ValueError(f"negative extent in shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        op = f", op={self._node.op}" if self._node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{op})"

    def __len__(self):
        return self.shape[0]

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)

    def abs(self):
        return abs_(self)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """A trainable leaf tensor carrying a hierarchical name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(data: np.ndarray, inputs: Sequence[Tensor], op: str, backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as an op output and record a tape node if needed."""
    if is_verifying() and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    return a, b


# -- elementwise binary -----------------------------------------------------
def _add_bwd(a, b, g):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(a.data + b.data, (a, b), "add", lambda g: _add_bwd(a, b, g))


def _sub_bwd(a, b, g):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(a.data - b.data, (a, b), "sub", lambda g: _sub_bwd(a, b, g))


def _mul_bwd(a, b, g):
    ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(a.data * b.data, (a, b), "mul", lambda g: _mul_bwd(a, b, g))


# -- elementwise unary ------------------------------------------------------
def _sigmoid_bwd(out, g):
    return (g * out * (1.0 - out),)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return make_result(out, (x,), "sigmoid", lambda g: _sigmoid_bwd(out, g))


def _tanh_bwd(out, g):
    return (g * (1.0 - out * out),)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result(out, (x,), "tanh", lambda g: _tanh_bwd(out, g))


def _relu_bwd(x, g):
    return (g * (x.data > 0),)


def relu(x: Tensor) -> Tensor:
    return make_result(np.maximum(x.data, 0), (x,), "relu", lambda g: _relu_bwd(x, g))


def _leaky_relu_bwd(x, slope, g):
    return (np.where(x.data > 0, g, g * slope),)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    d = x.data
    out = np.where(d > 0, d, d * slope)
    return make_result(out, (x,), "leaky_relu", lambda g: _leaky_relu_bwd(x, slope, g))


def _abs_bwd(x, g):
    return (g * np.sign(x.data),)


def abs_(x: Tensor) -> Tensor:
    return make_result(np.abs(x.data), (x,), "abs", lambda g: _abs_bwd(x, g))


def identity(x: Tensor) -> Tensor:
    return x


# -- reductions -------------------------------------------------------------
def _sum_bwd(x, g):
    return (np.broadcast_to(g, x.shape).astype(x.dtype),)


def sum_(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_result(out, (x,), "sum", lambda g: _sum_bwd(x, g))


def _mean_bwd(x, g):
    return (np.full(x.shape, g / max(x.size, 1), dtype=x.dtype),)


def mean(x: Tensor) -> Tensor:
    # shifting by one element makes the mean of a constant array exact
    x0 = x.data.flat[0] if x.size else 0
    out = np.asarray(x0 + (x.data - x0).mean(), dtype=x.dtype)
    return make_result(out, (x,), "mean", lambda g: _mean_bwd(x, g))


# -- structural -------------------------------------------------------------
def _concat_bwd(sizes, axis, g):
    bounds = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    return make_result(out, tensors, "concat", lambda g: _concat_bwd(sizes, axis, g))


def _reshape_bwd(shape, g):
    return (g.reshape(shape),)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), "reshape", lambda g: _reshape_bwd(src, g))


# -- reverse pass -----------------------------------------------------------
def build_tape(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root`` that carry a node, in tape order."""
    seen = set()
    found = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._node is None:
            continue
        seen.add(id(t))
        found.append(t)
        stack.extend(t._node.inputs)
    found.sort(key=lambda t: t._node.seq)
    return found


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ValueError(f"backward needs a single-element loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    seed = np.ones(loss.shape, dtype=loss.dtype) if grad is None else np.asarray(grad, dtype=loss.dtype)
    if loss._node is None:
        _accumulate(loss, seed)
        return
    grads = {id(loss): seed}
    for t in reversed(build_tape(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            gi = np.asarray(gi, dtype=inp.dtype)
            if gi.shape != inp.shape:
                raise RuntimeError(f"{node.op}: grad shape {gi.shape} != input shape {inp.shape}")
            if inp._node is None:
                _accumulate(inp, gi)
            elif id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + gi
            else:
                grads[id(inp)] = gi


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
