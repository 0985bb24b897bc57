"""Dense float64 tensors with a reverse-mode tape.

A :class:`Tape` records every operation whose inputs depend on a watched
leaf. Operations on tensors that do not belong to a tape run eagerly and
record nothing, so the same model code serves both training (taped) and
inference / finite-difference probes (untaped).

Backward rules receive the upstream gradient and return one gradient per
parent (``None`` for parents that need none). Broadcasting follows numpy
semantics; gradients are summed back to the parent's shape.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "tape", "parents", "backward_fn", "requires_grad", "name")

    __array_priority__ = 100.0
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, tape: "Tape | None" = None, parents=(), backward_fn=None,
                 requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, taped={self.tape is not None}{tag})"

    # operator sugar
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Tape:
    """Records operations for one forward/backward pass.

    A tape is single-owner. Gradients of several tapes over the same
    parameters are merged explicitly by the caller (see :func:`merge_grads`).
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: dict[str, Tensor] = {}

    def watch(self, value, name: str | None = None) -> Tensor:
        """Register a leaf whose gradient should be collected."""
        if name is None:
            name = f"_leaf{len(self.leaves)}"
        if name in self.leaves:
            raise KeyError(f"leaf {name!r} already watched")
        t = Tensor(np.array(value, dtype=np.float64), tape=self, requires_grad=True, name=name)
        self.leaves[name] = t
        return t

    def watch_all(self, params: dict) -> dict[str, Tensor]:
        return {k: self.watch(v, k) for k, v in params.items()}

    def backward(self, out: Tensor, seed=None) -> dict[str, np.ndarray]:
        """Propagate from ``out`` and return gradients of every watched leaf.

        Nodes are visited once each, in reverse creation order, which is a
        reverse topological order because a node is created after its parents.
        """
        if seed is None:
            if out.size != 1:
                raise ShapeError(f"backward needs a scalar output or an explicit seed, got {out.shape}")
            seed = np.ones_like(out.data)
        for leaf in self.leaves.values():
            leaf.grad = None
        out.grad = np.asarray(seed, dtype=np.float64).reshape(out.shape)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                # gradients are never updated in place, so aliasing pg is safe
                if parent.grad is None:
                    parent.grad = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
                else:
                    parent.grad = parent.grad + pg
            node.grad = None
        result = {}
        for name, leaf in self.leaves.items():
            result[name] = np.array(leaf.grad) if leaf.grad is not None else np.zeros_like(leaf.data)
        return result


def merge_grads(*grad_dicts: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Sum gradient dictionaries produced by independent tapes."""
    merged: dict[str, np.ndarray] = {}
    for gd in grad_dicts:
        for k, v in gd.items():
            merged[k] = v.copy() if k not in merged else merged[k] + v
    return merged


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Create the output of an operation, recording it when any parent is taped.

    This is the extension point for fused operations defined outside this
    module (e.g. the reservoir scan).
    """
    tape = None
    for p in parents:
        if p.requires_grad and p.tape is not None:
            tape = p.tape
            break
    if tape is None:
        return Tensor(data)
    out = Tensor(data, tape=tape, parents=tuple(parents), backward_fn=backward_fn, requires_grad=True)
    tape.nodes.append(out)
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` over the axes that broadcasting expanded from ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def backward(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return make_node(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return make_node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_node(out, (a, b), backward)


# ---------------------------------------------------------------- structure

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {a.shape} -> {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None))) or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    """Slicing and gather. Advanced-index gradients are scatter-added."""
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_node(out, (a,), backward)


def slice_axis(a, start: int, stop: int, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return getitem(a, tuple(idx))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat along {axis}: {[t.shape for t in ts]}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_node(out, ts, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"stack along {axis}: {[t.shape for t in ts]}") from None

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_node(out, ts, backward)


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)

    def backward(g):
        return (unbroadcast(np.where(cond, g, 0.0), a.shape),
                unbroadcast(np.where(cond, 0.0, g), b.shape))

    return make_node(out, (a, b), backward)


# ---------------------------------------------------------------- reductions

def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return make_node(out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims),))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size / max(out.size, 1) if a.size else 1.0
    return make_node(out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,))


def l2norm(a, axis=-1, keepdims=False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the zero vector is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, gk * a.data / safe, 0.0),)

    return make_node(out if keepdims else np.squeeze(out, axis=axis), (a,), backward)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node(s, (a,), backward)


# ---------------------------------------------------------------- elementwise

def _unary(a, fwd, dfwd) -> Tensor:
    a = as_tensor(a)
    out = fwd(a.data)
    return make_node(out, (a,), lambda g: (g * dfwd(a.data, out),))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def sigmoid(a) -> Tensor:
    return _unary(a, _sigmoid, lambda x, y: y * (1.0 - y))


def relu(a) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))


def silu(a) -> Tensor:
    def d(x, y):
        s = _sigmoid(x)
        return s * (1.0 + x * (1.0 - s))

    return _unary(a, lambda x: x * _sigmoid(x), d)


def softplus(a) -> Tensor:
    return _unary(a, lambda x: np.logaddexp(0.0, x), lambda x, y: _sigmoid(x))


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda x, y: y)


def log(a) -> Tensor:
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def sin(a) -> Tensor:
    return _unary(a, np.sin, lambda x, y: np.cos(x))


def cos(a) -> Tensor:
    return _unary(a, np.cos, lambda x, y: -np.sin(x))


def asin(a) -> Tensor:
    return _unary(a, np.arcsin, lambda x, y: 1.0 / np.sqrt(1.0 - x * x))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes only strictly inside the range or at the bounds."""
    return _unary(a, lambda x: np.clip(x, lo, hi),
                  lambda x, y: ((x >= lo) & (x <= hi)).astype(np.float64))


def atan2(y, x) -> Tensor:
    """Quadrant-aware arctangent of ``y / x``. Undefined (raises) at the origin."""
    y, x = as_tensor(y), as_tensor(x)
    _broadcast_check("atan2", y, x)
    r2 = y.data * y.data + x.data * x.data
    if np.any(r2 == 0.0):
        raise ValueError("atan2: gradient undefined at the origin")
    out = np.arctan2(y.data, x.data)

    def backward(g):
        return unbroadcast(g * x.data / r2, y.shape), unbroadcast(-g * y.data / r2, x.shape)

    return make_node(out, (y, x), backward)
