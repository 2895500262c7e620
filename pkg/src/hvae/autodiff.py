"""Reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable quantity in the package is a :class:`Tensor`.  Tensors
produced by a primitive whose inputs require gradients remember a
:class:`Node` (primitive tag, parent tensors, static attributes), so the graph
can be walked backwards by :meth:`Tensor.backward` or re-evaluated by
:func:`replay`.

Primitives are registered by tag in ``PRIMITIVES``; each provides a forward
function on raw arrays and a backward function returning one gradient per
input.  Binary elementwise primitives follow numpy broadcasting and reduce
gradients back to each input's shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Node",
    "PRIMITIVES",
    "make_tensor",
    "constant",
    "apply_primitive",
    "replay",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "relu",
    "sigmoid",
    "exp",
    "expm1",
    "log",
    "square",
    "clip",
    "sum",
    "mean",
    "concat",
    "slice",
    "reshape",
    "tile_rows",
    "add_bias",
]


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable[..., np.ndarray]
    backward: Callable[..., tuple]
    arity: int


@dataclass
class Node:
    primitive: str
    inputs: tuple
    attrs: dict


class Tensor:
    """Dense float64 array with an optional gradient and graph history."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    # make ndarray <op> Tensor defer to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, node: Node | None = None):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d arrays to shape (1,)
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, tensor has {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar; python scalars and arrays become constants
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not a primitive; multiply by exp(-log x)")
        return mul(self, 1.0 / float(other))

    def sum(self, axis=None):
        return sum(self, axis=axis)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.node is None:
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            prim = PRIMITIVES[t.node.primitive]
            arrays = [p.data for p in t.node.inputs]
            in_grads = prim.backward(g, arrays, t.data, **t.node.attrs)
            for parent, pg in zip(t.node.inputs, in_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list:
    order: list = []
    seen: set = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.inputs:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def make_tensor(shape: Sequence[int], values, requires_grad: bool = False) -> Tensor:
    """Build a leaf tensor from a flat row-major value list."""
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"negative extent in shape {shape}")
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    expected = int(np.prod(shape, dtype=np.int64))
    if flat.size != expected:
        raise ValueError(
            f"shape {shape} needs {expected} values, got {flat.size}"
        )
    return Tensor(flat.reshape(shape).copy(), requires_grad=requires_grad)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def apply_primitive(tag: str, inputs: Sequence, **attrs) -> Tensor:
    prim = PRIMITIVES.get(tag)
    if prim is None:
        raise KeyError(f"unknown primitive {tag!r}")
    tensors = tuple(constant(x) for x in inputs)
    if prim.arity >= 0 and len(tensors) != prim.arity:
        raise ValueError(f"{tag} takes {prim.arity} inputs, got {len(tensors)}")
    out = prim.forward(*(t.data for t in tensors), **attrs)
    if any(t.requires_grad for t in tensors):
        return Tensor(out, requires_grad=True, node=Node(tag, tensors, attrs))
    return Tensor(out)


def replay(out: Tensor) -> np.ndarray:
    """Re-run the recorded forward computation of ``out`` from its leaves."""
    order = _topological_order(out)
    values: dict[int, np.ndarray] = {}
    for t in order:
        if t.node is None:
            values[id(t)] = t.data
            continue
        arrays = [values[id(p)] if id(p) in values else p.data for p in t.node.inputs]
        values[id(t)] = PRIMITIVES[t.node.primitive].forward(*arrays, **t.node.attrs)
    return values[id(out)]


# ---------------------------------------------------------------------------
# primitive definitions


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(tag, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{tag}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _add_fwd(a, b):
    _broadcast_check("add", a, b)
    return a + b


def _add_bwd(g, arrays, out):
    a, b = arrays
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_fwd(a, b):
    _broadcast_check("sub", a, b)
    return a - b


def _sub_bwd(g, arrays, out):
    a, b = arrays
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_fwd(a, b):
    _broadcast_check("mul", a, b)
    return a * b


def _mul_bwd(g, arrays, out):
    a, b = arrays
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _matmul_fwd(a, b):
    if b.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _matmul_bwd(g, arrays, out):
    a, b = arrays
    ga = g @ b.T
    gb = np.outer(a, g) if a.ndim == 1 else a.T @ g
    return ga, gb


def _add_bias_fwd(x, b):
    if b.ndim != 1 or x.ndim < 1 or x.shape[-1] != b.shape[0]:
        raise ValueError(f"add_bias: bias {b.shape} does not match trailing axis of {x.shape}")
    return x + b


def _add_bias_bwd(g, arrays, out):
    return g, g.reshape(-1, g.shape[-1]).sum(axis=0)


def _relu_bwd(g, arrays, out):
    (x,) = arrays
    return (g * (x > 0.0),)


def _sigmoid_fwd(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_fwd(x):
    if x.size and not np.all(x > 0.0):
        bad = x[~(x > 0.0)].reshape(-1)[0]
        raise ValueError(f"log of non-positive value {bad!r}; clamp before taking logs")
    return np.log(x)


def _clip_fwd(x, lo, hi):
    return np.clip(x, lo, hi)


def _clip_bwd(g, arrays, out, lo, hi):
    (x,) = arrays
    return (g * ((x >= lo) & (x <= hi)),)


def _sum_fwd(x, axis=None):
    return np.asarray(x.sum(axis=axis))


def _sum_bwd(g, arrays, out, axis=None):
    (x,) = arrays
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _mean_fwd(x, axis=None):
    return np.asarray(x.mean(axis=axis))


def _mean_bwd(g, arrays, out, axis=None):
    (x,) = arrays
    count = x.size if axis is None else x.shape[axis]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, x.shape).copy(),)


def _concat_fwd(*xs, axis=-1):
    return np.concatenate(xs, axis=axis)


def _concat_bwd(g, arrays, out, axis=-1):
    cuts = np.cumsum([a.shape[axis] for a in arrays])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def _slice_fwd(x, axis, start, stop):
    if not (0 <= start <= stop <= x.shape[axis]):
        raise ValueError(f"slice [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    index = [np.s_[:]] * x.ndim
    index[axis] = np.s_[start:stop]
    return x[tuple(index)].copy()


def _slice_bwd(g, arrays, out, axis, start, stop):
    (x,) = arrays
    full = np.zeros_like(x)
    index = [np.s_[:]] * x.ndim
    index[axis] = np.s_[start:stop]
    full[tuple(index)] = g
    return (full,)


def _reshape_fwd(x, shape):
    return x.reshape(shape)


def _reshape_bwd(g, arrays, out, shape):
    return (g.reshape(arrays[0].shape),)


def _tile_rows_fwd(x, reps):
    return np.tile(x, (reps,) + (1,) * (x.ndim - 1))


def _tile_rows_bwd(g, arrays, out, reps):
    x = arrays[0]
    return (g.reshape((reps,) + x.shape).sum(axis=0),)


PRIMITIVES: dict = {
    p.name: p
    for p in [
        Primitive("add", _add_fwd, _add_bwd, 2),
        Primitive("sub", _sub_fwd, _sub_bwd, 2),
        Primitive("mul", _mul_fwd, _mul_bwd, 2),
        Primitive("neg", np.negative, lambda g, a, o: (-g,), 1),
        Primitive("matmul", _matmul_fwd, _matmul_bwd, 2),
        Primitive("add_bias", _add_bias_fwd, _add_bias_bwd, 2),
        Primitive("relu", lambda x: np.maximum(x, 0.0), _relu_bwd, 1),
        Primitive("sigmoid", _sigmoid_fwd, lambda g, a, o: (g * o * (1.0 - o),), 1),
        Primitive("exp", np.exp, lambda g, a, o: (g * o,), 1),
        Primitive("expm1", np.expm1, lambda g, a, o: (g * (o + 1.0),), 1),
        Primitive("log", _log_fwd, lambda g, a, o: (g / a[0],), 1),
        Primitive("square", np.square, lambda g, a, o: (2.0 * g * a[0],), 1),
        Primitive("clip", _clip_fwd, _clip_bwd, 1),
        Primitive("sum", _sum_fwd, _sum_bwd, 1),
        Primitive("mean", _mean_fwd, _mean_bwd, 1),
        Primitive("concat", _concat_fwd, _concat_bwd, -1),
        Primitive("slice", _slice_fwd, _slice_bwd, 1),
        Primitive("reshape", _reshape_fwd, _reshape_bwd, 1),
        Primitive("tile_rows", _tile_rows_fwd, _tile_rows_bwd, 1),
    ]
}


def add(a, b) -> Tensor:
    return apply_primitive("add", (a, b))


def sub(a, b) -> Tensor:
    return apply_primitive("sub", (a, b))


def mul(a, b) -> Tensor:
    return apply_primitive("mul", (a, b))


def neg(a) -> Tensor:
    return apply_primitive("neg", (a,))


def matmul(a, b) -> Tensor:
    return apply_primitive("matmul", (a, b))


def add_bias(x, b) -> Tensor:
    return apply_primitive("add_bias", (x, b))


def relu(x) -> Tensor:
    return apply_primitive("relu", (x,))


def sigmoid(x) -> Tensor:
    return apply_primitive("sigmoid", (x,))


def exp(x) -> Tensor:
    return apply_primitive("exp", (x,))


def expm1(x) -> Tensor:
    """exp(x) - 1 without cancellation near zero."""
    return apply_primitive("expm1", (x,))


def log(x) -> Tensor:
    return apply_primitive("log", (x,))


def square(x) -> Tensor:
    return apply_primitive("square", (x,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp into ``[lo, hi]``; gradient passes only where the input is inside."""
    return apply_primitive("clip", (x,), lo=float(lo), hi=float(hi))


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    return apply_primitive("sum", (x,), axis=axis)


def mean(x, axis: int | None = None) -> Tensor:
    return apply_primitive("mean", (x,), axis=axis)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    return apply_primitive("concat", tuple(xs), axis=axis)


def slice(x, start: int, stop: int, axis: int = -1) -> Tensor:  # noqa: A001
    x = constant(x)
    axis = axis % x.ndim
    return apply_primitive("slice", (x,), axis=axis, start=int(start), stop=int(stop))


def reshape(x, shape: Sequence[int]) -> Tensor:
    return apply_primitive("reshape", (x,), shape=tuple(int(s) for s in shape))


def tile_rows(x, reps: int) -> Tensor:
    """Stack ``reps`` copies of ``x`` along a new leading block of rows."""
    if reps < 1:
        raise ValueError(f"tile_rows needs reps >= 1, got {reps}")
    return apply_primitive("tile_rows", (x,), reps=int(reps))
