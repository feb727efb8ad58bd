"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on :class:`Tensor` objects that require gradients records a
node holding its parents and a closure mapping the output gradient to the
parent gradients.  :func:`backward` orders the recorded graph into a
:class:`Tape` (parents before children) and walks it once in reverse.

Broadcasting is restricted to the second operand of binary ops: ``b`` must
broadcast to ``a.shape`` and the result always has ``a.shape``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "no_grad",
    "inject_gradient_fault",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sigmoid",
    "tanh",
    "relu",
    "absolute",
    "elementwise",
    "matmul",
    "softmax",
    "concat",
    "split",
    "slice_axis",
    "reshape",
    "flatten",
    "transpose_last_two",
    "swapaxes",
    "reduce_sum",
    "reduce_mean",
    "l2norm",
    "take_rows",
    "L2NORM_EPS",
]

L2NORM_EPS = 1e-8

_grad_enabled = True
# op name -> multiplier applied to that op's parent gradients (test hook)
_faults: dict[str, float] = {}


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def inject_gradient_fault(op: str, scale: float = 1.5):
    """Scale every gradient produced by ``op`` while the block is active.

    Exists so gradient checks can be shown to catch a broken backward rule.
    """
    _faults[op] = scale
    try:
        yield
    finally:
        _faults.pop(op, None)


class Tensor:
    """An n-dimensional float64 array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op: str | None = None

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> Tensor:
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> Tensor:
        return reduce_mean(self, axis, keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _scaled(op: str, grad):
    scale = _faults.get(op)
    if scale is None or grad is None:
        return grad
    return grad * scale


class Tape:
    """Topologically ordered record of the graph below a root tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        # iterative post-order DFS; recurrent graphs are far deeper than the recursion limit
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(root: Tensor, retain_graph: bool = False) -> Tape:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf requiring grad.

    ``root`` must hold exactly one element.  The recorded graph is released
    afterwards unless ``retain_graph`` is set.
    """
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backward root does not depend on any tensor requiring grad")
    tape = Tape.from_root(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = _scaled(node._op, pg)
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if not retain_graph:
        for node in tape.nodes:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
    return tape


# ---------------------------------------------------------------- elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_binary(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        out = None
    if out != a.shape:
        raise ShapeError(f"{op}: operand shape {b.shape} does not broadcast to {a.shape}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary("add", a, b)
    sb = b.shape

    def back(g):
        return g, (_unbroadcast(g, sb) if b.requires_grad else None)

    return Tensor._make(a.data + b.data, (a, b), "add", back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary("sub", a, b)
    sb = b.shape

    def back(g):
        return g, (-_unbroadcast(g, sb) if b.requires_grad else None)

    return Tensor._make(a.data - b.data, (a, b), "sub", back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary("mul", a, b)
    ad, bd = a.data, b.data

    def back(g):
        ga = g * bd if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(ad * bd, (a, b), "mul", back)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        ga = g / bd if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), "div", back)


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), "neg", lambda g: (-g,))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form never overflows
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._make(s, (a,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return Tensor._make(t, (a,), "tanh", lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._make(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor._make(np.abs(a.data), (a,), "abs", lambda g: (g * sign,))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "abs": absolute}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch an elementwise op by name (``add``, ``sigmoid``, ...)."""
    if kind in _BINARY:
        if b is None:
            raise ContractError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ContractError(f"unknown elementwise kind {kind!r}")


# ------------------------------------------------------------------- matmul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` is ``(..., m, k)``; ``b`` is either a plain ``(k, p)`` matrix shared
    by every leading index or ``(..., k, p)`` with the same leading shape.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} has {a.shape[-1]}, {b.shape} has {b.shape[-2]}"
        )
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ShapeError(f"matmul batch shapes differ: {a.shape[:-2]} vs {b.shape[:-2]}")
    ad, bd = a.data, b.data
    shared = bd.ndim == 2

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if shared:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), "matmul", back)


# ------------------------------------------------------------------ softmax


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {a.ndim}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (a,), "softmax", back)


# --------------------------------------------------------------- shape ops


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: shape {t.shape} incompatible with {ref}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=ax), tensors, "concat", back)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice ``[start:stop]`` along one axis."""
    ax = axis % a.ndim
    size = a.shape[ax]
    if not 0 <= start <= stop <= size:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of size {size}")
    index = (slice(None),) * ax + (slice(start, stop),)
    return _getitem(a, index)


def _getitem(a: Tensor, index) -> Tensor:
    src_shape = a.shape
    out = a.data[index]
    advanced = _is_advanced(index)

    def back(g):
        full = np.zeros(src_shape)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return Tensor._make(np.array(out, dtype=np.float64), (a,), "slice", back)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def split(a: Tensor, sections: int | Sequence[int], axis: int = 0) -> list[Tensor]:
    """Split into equal ``sections`` or at the given indices along ``axis``."""
    ax = axis % a.ndim
    size = a.shape[ax]
    if isinstance(sections, int):
        if sections <= 0 or size % sections:
            raise ShapeError(f"cannot split axis of size {size} into {sections} equal parts")
        step = size // sections
        cuts = [i * step for i in range(sections + 1)]
    else:
        cuts = [0, *sections, size]
    return [slice_axis(a, lo, hi, ax) for lo, hi in zip(cuts[:-1], cuts[1:])]


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return Tensor._make(out, (a,), "reshape", lambda g: (g.reshape(src),))


def flatten(a: Tensor, start_axis: int = 0) -> Tensor:
    """Merge axes ``start_axis..`` into one, row-major."""
    ax = start_axis % a.ndim if a.ndim else 0
    return reshape(a, a.shape[:ax] + (-1,))


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    out = np.swapaxes(a.data, axis1, axis2)
    return Tensor._make(out, (a,), "swapaxes", lambda g: (np.swapaxes(g, axis1, axis2),))


def transpose_last_two(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError(f"transpose_last_two needs rank >= 2, got {a.shape}")
    return swapaxes(a, -1, -2)


def take_rows(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add back into the rows."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = int(ids[(ids < 0) | (ids >= n)][0])
        raise IndexError(f"row id {bad} outside table of {n} rows")
    src_shape = table.shape

    def back(g):
        full = np.zeros(src_shape)
        np.add.at(full, ids, g)
        return (full,)

    return Tensor._make(table.data[ids], (table,), "take", back)


# --------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    ax = _norm_axis(axis, a.ndim)
    src = a.shape

    def back(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._make(np.asarray(a.data.sum(axis=ax, keepdims=keepdims)), (a,), "sum", back)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    ax = _norm_axis(axis, a.ndim)
    src = a.shape
    count = a.data.size if ax is None else src[ax]

    def back(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, src).copy(),)

    return Tensor._make(np.asarray(a.data.mean(axis=ax, keepdims=keepdims)), (a,), "mean", back)


def l2norm(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """``sqrt(sum(x**2) + eps**2)``; the eps keeps the gradient finite at 0."""
    ax = _norm_axis(axis, a.ndim)
    ad = a.data
    norm = np.sqrt((ad * ad).sum(axis=ax, keepdims=True) + L2NORM_EPS**2)
    if keepdims:
        out = norm
    else:
        out = norm.reshape(()) if ax is None else np.squeeze(norm, axis=ax)

    def back(g):
        g = np.asarray(g)
        if ax is None:
            g = g.reshape((1,) * ad.ndim)
        elif not keepdims:
            g = np.expand_dims(g, ax)
        return (g * ad / norm,)

    return Tensor._make(np.asarray(out), (a,), "l2norm", back)


_REDUCERS = {"sum": reduce_sum, "mean": reduce_mean, "l2norm": l2norm}


def reduce(kind: str, a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    if kind not in _REDUCERS:
        raise ContractError(f"unknown reduction {kind!r}")
    return _REDUCERS[kind](a, axis, keepdims)


def parameters_finite(tensors: Iterable[tuple[str, Tensor]]) -> str | None:
    """Name of the first tensor whose data or grad holds NaN/Inf, else None."""
    for name, t in tensors:
        if not np.all(np.isfinite(t.data)):
            return f"{name} (values)"
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            return f"{name} (gradient)"
    return None
