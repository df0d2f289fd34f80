"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Value` records the operation that produced it and a closure that
maps the upstream gradient to gradients for each parent.  Graphs are built
eagerly, one per evaluation, and discarded afterwards.

Elementwise binary operations accept operands of identical shape, or one
0-d operand against an array.  Anything else must be reshaped or expanded
with :func:`broadcast_to` explicitly.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

NEG_INF = -np.inf

GradFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Value:
    """A node holding ``data``, its accumulated ``grad`` and its parents."""

    __slots__ = ("data", "_grad", "requires_grad", "parents", "op", "_grad_fn")
    __array_ufunc__ = None  # make ``ndarray <op> Value`` dispatch to Value

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Value", ...] = (),
        op: str = "",
        grad_fn: GradFn | None = None,
    ):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.array(data, dtype=np.float64)
        self._grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.op = op
        self._grad_fn = grad_fn

    # -- gradient slot -------------------------------------------------
    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ValueError(f"grad shape {value.shape} != data shape {self.data.shape}")
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None

    # -- array-ish conveniences ----------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op!r}" if self.op else ""
        return f"Value(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operators -----------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Value":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Value":
        return vsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Value":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Value":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self) -> "Value":
        return exp(self)

    def log(self) -> "Value":
        return log(self)

    def tanh(self) -> "Value":
        return tanh(self)

    def sigmoid(self) -> "Value":
        return sigmoid(self)


def as_value(x) -> Value:
    """Wrap ``x`` as a constant Value unless it already is one."""
    return x if isinstance(x, Value) else Value(x)


def _node(data: np.ndarray, parents: tuple[Value, ...], op: str, grad_fn: GradFn) -> Value:
    if any(p.requires_grad for p in parents):
        return Value(data, True, parents, op, grad_fn)
    return Value(data)


def detach(x) -> Value:
    """Same data, cut from the graph."""
    return Value(as_value(x).data)


# ----------------------------------------------------------------------
# graph traversal
# ----------------------------------------------------------------------
def _topological_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Value) -> None:
    """Accumulate d(root)/d(v) into ``v.grad`` for every reachable ``v``.

    ``root`` must hold exactly one element.  Calling this twice adds the
    gradient twice; use :meth:`Value.zero_grad` in between to reset.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_topological_order(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node._grad = g if node._grad is None else node._grad + g
        if node._grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------
def _check_elementwise(a: Value, b: Value, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} differ; expand explicitly with broadcast_to"
        )


def _unbroadcast(g: np.ndarray, target: Value) -> np.ndarray:
    if target.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_elementwise(a, b, "add")

    def grad_fn(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return _node(a.data + b.data, (a, b), "add", grad_fn)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_elementwise(a, b, "sub")

    def grad_fn(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return _node(a.data - b.data, (a, b), "sub", grad_fn)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_elementwise(a, b, "mul")

    def grad_fn(g):
        ga = _unbroadcast(g * b.data, a) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), "mul", grad_fn)


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_elementwise(a, b, "div")
    out = a.data / b.data

    def grad_fn(g):
        ga = _unbroadcast(g / b.data, a) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), "div", grad_fn)


def neg(a) -> Value:
    a = as_value(a)
    return _node(-a.data, (a,), "neg", lambda g: (-g,))


def power(a, exponent: float) -> Value:
    a = as_value(a)
    exponent = float(exponent)

    def grad_fn(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _node(a.data**exponent, (a,), "pow", grad_fn)


def square(a) -> Value:
    a = as_value(a)
    return _node(a.data * a.data, (a,), "square", lambda g: (2.0 * g * a.data,))


def exp(a) -> Value:
    a = as_value(a)
    out = np.exp(a.data)
    return _node(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Value:
    a = as_value(a)
    with np.errstate(divide="ignore"):
        out = np.log(a.data)

    def grad_fn(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(g == 0.0, 0.0, g / a.data),)

    return _node(out, (a,), "log", grad_fn)


def sqrt(a) -> Value:
    a = as_value(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), "sqrt", lambda g: (0.5 * g / out,))


def tanh(a) -> Value:
    a = as_value(a)
    out = np.tanh(a.data)
    return _node(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Value:
    a = as_value(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a) -> Value:
    """``log(sigmoid(a))`` without overflow for large ``|a|``."""
    a = as_value(a)
    out = -np.logaddexp(0.0, -a.data)
    return _node(out, (a,), "log_sigmoid", lambda g: (g * (1.0 - np.exp(out)),))


def relu(a) -> Value:
    a = as_value(a)
    return _node(np.maximum(a.data, 0.0), (a,), "relu", lambda g: (g * (a.data > 0.0),))


def vabs(a) -> Value:
    """Absolute value; the subgradient at zero is taken as 0."""
    a = as_value(a)
    return _node(np.abs(a.data), (a,), "abs", lambda g: (g * np.sign(a.data),))


def maximum(a, floor: float) -> Value:
    """``max(a, floor)`` against a constant; ties pass the gradient to ``a``."""
    a = as_value(a)
    keep = a.data >= floor
    return _node(np.where(keep, a.data, floor), (a,), "maximum", lambda g: (g * keep,))


def clip(a, low: float, high: float) -> Value:
    """Clamp to ``[low, high]``; gradient is zero strictly outside the box."""
    a = as_value(a)
    inside = (a.data >= low) & (a.data <= high)
    return _node(np.clip(a.data, low, high), (a,), "clip", lambda g: (g * inside,))


def where(condition, a, b) -> Value:
    """Select ``a`` where ``condition`` holds, else ``b`` (constant condition)."""
    a, b = as_value(a), as_value(b)
    cond = np.asarray(condition, dtype=bool)
    shape = np.broadcast_shapes(a.shape, b.shape)
    if cond.shape != shape:
        raise ValueError(f"where: condition shape {cond.shape} != operand shape {shape}")
    _check_elementwise(a, b, "where")

    def grad_fn(g):
        return _unbroadcast(np.where(cond, g, 0.0), a), _unbroadcast(np.where(cond, 0.0, g), b)

    return _node(np.where(cond, a.data, b.data), (a, b), "where", grad_fn)


def masked_fill(a, mask, fill: float) -> Value:
    """Replace entries where ``mask`` is true by the constant ``fill``."""
    a = as_value(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ValueError(f"masked_fill: mask shape {mask.shape} != {a.shape}")
    return _node(np.where(mask, fill, a.data), (a,), "masked_fill", lambda g: (np.where(mask, 0.0, g),))


def straight_through(soft, hard) -> Value:
    """Forward value ``hard`` (a constant array), gradient passed to ``soft`` unchanged."""
    soft = as_value(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ValueError("straight_through: hard and soft shapes differ")
    return _node(hard.copy(), (soft,), "straight_through", lambda g: (g,))


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------
def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def vsum(a, axis=None, keepdims: bool = False) -> Value:
    a = as_value(a)

    def grad_fn(g):
        return (_expand_reduced(g, a.shape, axis, keepdims),)

    return _node(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), "sum", grad_fn)


def mean(a, axis=None, keepdims: bool = False) -> Value:
    a = as_value(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return vsum(a, axis, keepdims) * (1.0 / count)


def vmax(a, axis: int | None = None) -> Value:
    """Maximum along ``axis``; the gradient goes to the lowest maximizing index."""
    a = as_value(a)
    if axis is None:
        flat = a.data.reshape(-1)
        idx = int(np.argmax(flat))

        def grad_fn(g):
            out = np.zeros(flat.shape)
            out[idx] = g
            return (out.reshape(a.shape),)

        return _node(np.asarray(flat[idx]), (a,), "max", grad_fn)
    axis = axis % a.ndim
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis).squeeze(axis)

    def grad_fn(g):
        full = np.zeros(a.shape)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis)
        return (full,)

    return _node(out, (a,), "max", grad_fn)


def cumsum(a, axis: int = 0) -> Value:
    a = as_value(a)

    def grad_fn(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _node(np.cumsum(a.data, axis=axis), (a,), "cumsum", grad_fn)


# ----------------------------------------------------------------------
# log-space primitives
# ----------------------------------------------------------------------
def _lse(data: np.ndarray, axis, keepdims: bool) -> np.ndarray:
    peak = np.max(data, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(data - shift), axis=axis, keepdims=True)) + shift
    return out if keepdims else np.squeeze(out, axis=axis)


def logsumexp(xs, axis: int | tuple[int, ...] | None = -1, keepdims: bool = False) -> Value:
    """``log(sum(exp(xs)))`` along ``axis`` via max-shift.

    Entries equal to ``-inf`` contribute nothing; a slice with no finite entry
    yields ``-inf`` and passes back a zero gradient.
    """
    xs = as_value(xs)
    if axis is None:
        axis = tuple(range(xs.ndim))
    out_keep = _lse(xs.data, axis, True)

    def grad_fn(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        with np.errstate(invalid="ignore"):
            weights = np.where(np.isfinite(out_keep), np.exp(xs.data - out_keep), 0.0)
        return (gk * weights,)

    out = out_keep if keepdims else np.squeeze(out_keep, axis=axis)
    return _node(out, (xs,), "logsumexp", grad_fn)


def log_softmax(xs, axis: int = -1) -> Value:
    xs = as_value(xs)
    norm = _lse(xs.data, axis, True)
    finite = np.isfinite(norm)
    with np.errstate(invalid="ignore"):
        out = np.where(finite, xs.data - norm, NEG_INF)
        probs = np.where(finite, np.exp(out), 0.0)

    def grad_fn(g):
        g = np.where(np.isfinite(out), g, 0.0)
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _node(out, (xs,), "log_softmax", grad_fn)


def softmax(xs, axis: int = -1) -> Value:
    xs = as_value(xs)
    norm = _lse(xs.data, axis, True)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isfinite(norm), np.exp(xs.data - norm), 0.0)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (xs,), "softmax", grad_fn)


# ----------------------------------------------------------------------
# linear algebra and shape manipulation
# ----------------------------------------------------------------------
def matmul(a, b) -> Value:
    """Matrix product.

    Supported: ``[..., k] @ [k, n]``, ``[..., k] @ [k]`` and batched
    ``[B..., i, k] @ [B..., k, n]`` with identical leading dimensions.
    """
    a, b = as_value(a), as_value(b)
    A, B = a.data, b.data
    if B.ndim == 1:
        def grad_fn(g):
            ga = g[..., None] * B if a.requires_grad else None
            gb = A.reshape(-1, B.shape[0]).T @ g.reshape(-1) if b.requires_grad else None
            return ga, gb
    elif B.ndim == 2:
        def grad_fn(g):
            ga = g @ B.T if a.requires_grad else None
            gb = None
            if b.requires_grad:
                gb = A.reshape(-1, B.shape[0]).T @ g.reshape(-1, B.shape[1])
            return ga, gb
    elif A.ndim == B.ndim and A.shape[:-2] == B.shape[:-2]:
        def grad_fn(g):
            ga = g @ np.swapaxes(B, -1, -2) if a.requires_grad else None
            gb = np.swapaxes(A, -1, -2) @ g if b.requires_grad else None
            return ga, gb
    else:
        raise ValueError(f"matmul: unsupported shapes {A.shape} @ {B.shape}")
    return _node(A @ B, (a, b), "matmul", grad_fn)


def reshape(a, shape) -> Value:
    a = as_value(a)
    return _node(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Sequence[int] | None = None) -> Value:
    a = as_value(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), "transpose", lambda g: (np.transpose(g, inverse),))


def swapaxes(a, axis1: int, axis2: int) -> Value:
    a = as_value(a)
    return _node(np.swapaxes(a.data, axis1, axis2), (a,), "swapaxes", lambda g: (np.swapaxes(g, axis1, axis2),))


def broadcast_to(a, shape) -> Value:
    """Explicit broadcast; the gradient sums over the expanded axes."""
    a = as_value(a)
    shape = tuple(shape)
    lead = len(shape) - a.ndim
    expanded = tuple(i for i, n in enumerate(a.shape) if n == 1 and shape[lead + i] != 1)

    def grad_fn(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        if expanded:
            g = g.sum(axis=expanded, keepdims=True)
        return (g,)

    return _node(np.broadcast_to(a.data, shape), (a,), "broadcast_to", grad_fn)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(
        isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items
    )


def getitem(a, index) -> Value:
    a = as_value(a)
    basic = _is_basic_index(index)

    def grad_fn(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(np.asarray(a.data[index]), (a,), "getitem", grad_fn)


def concat(values: Iterable, axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([v.data for v in values], axis=axis), tuple(values), "concat", grad_fn)


def stack(values: Iterable, axis: int = 0) -> Value:
    values = [as_value(v) for v in values]

    def grad_fn(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(np.stack([v.data for v in values], axis=axis), tuple(values), "stack", grad_fn)
