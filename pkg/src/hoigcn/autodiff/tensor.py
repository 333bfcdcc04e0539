"""Dense tensors with a recording tape for reverse-mode differentiation.

Every differentiable operation that touches a tensor with ``requires_grad``
appends one entry to the active :class:`Tape`. :func:`backward` walks that
record in exact reverse order, so the traversal order is the execution order
flipped, with no graph search involved.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import expit

from ..errors import NonFiniteError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_local = threading.local()


class Tape:
    """Ordered record of executed operations."""

    def __init__(self) -> None:
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn, str]] = []
        self._previous: list[Tape] = []

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], fn: BackwardFn, op: str) -> None:
        self.entries.append((out, inputs, fn, op))

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        self._previous.append(active_tape())
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._previous.pop()


def active_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    previous = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the functional forms live below
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor owned by a model."""

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], fn: BackwardFn, op: str) -> Tensor:
    """Wrap an op output, enforce finiteness and record it if gradients flow."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    inputs = tuple(inputs)
    track = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        active_tape().record(out, inputs, fn, op)
    return out


def backward(loss: Tensor, tape: Tape | None = None, retain: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = tape if tape is not None else active_tape()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    refs: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, fn, _ in reversed(tape.entries):
        g = grads.pop(id(out), None)
        refs.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, fn(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                refs[key] = t
    # whatever is left was never produced by a recorded op: these are leaves
    for key, g in grads.items():
        t = refs[key]
        g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g
    if not retain:
        tape.clear()


# ---------------------------------------------------------------- elementwise


def _scalar_like(x) -> bool:
    if isinstance(x, Tensor):
        return x.size == 1
    return np.ndim(x) == 0


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    ref = ta if ta is not None else tb
    if ta is None:
        ta = Tensor(np.asarray(a, dtype=ref.dtype))
    if tb is None:
        tb = Tensor(np.asarray(b, dtype=ref.dtype))
    if ta.shape != tb.shape and not (_scalar_like(ta) or _scalar_like(tb)):
        raise ShapeError(f"{op}: unsupported broadcast {ta.shape} with {tb.shape}")
    return ta, tb


def add(a, b) -> Tensor:
    ta, tb = _binary_operands(a, b, "add")
    return make_result(ta.data + tb.data, (ta, tb),
                       lambda g: (_reduce_to(g, ta), _reduce_to(g, tb)), "add")


def sub(a, b) -> Tensor:
    ta, tb = _binary_operands(a, b, "sub")
    return make_result(ta.data - tb.data, (ta, tb),
                       lambda g: (_reduce_to(g, ta), _reduce_to(-g, tb)), "sub")


def mul(a, b) -> Tensor:
    ta, tb = _binary_operands(a, b, "mul")
    return make_result(ta.data * tb.data, (ta, tb),
                       lambda g: (_reduce_to(g * tb.data, ta), _reduce_to(g * ta.data, tb)), "mul")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return make_result(out, (a,), lambda g: (g * (out > 0),), "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return make_result(t, (a,), lambda g: (g * (1 - t * t),), "tanh")


_ELEMENTWISE = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "add": add, "mul": mul, "sub": sub}


def elementwise(op: str, *operands) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# ------------------------------------------------------------ linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return make_result(a.data @ b.data, (a, b),
                       lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x`` [N, D], ``w`` [D, H] and a row bias ``b`` [H]."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: cannot apply {w.shape} to {x.shape}")
    out = x.data @ w.data
    if b is None:
        return make_result(out, (x, w), lambda g: (g @ w.data.T, x.data.T @ g), "linear")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} does not match {w.shape}")
    out = out + b.data
    return make_result(out, (x, w, b),
                       lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)), "linear")


# ------------------------------------------------------------ shape & reduce


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                       lambda g: (g.transpose(inverse),), "transpose")


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice ``[start, stop)`` along one axis."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def fn(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return make_result(np.ascontiguousarray(a.data[index]), (a,), fn, "narrow")


def select(a: Tensor, axis: int, i: int) -> Tensor:
    """Take index ``i`` along ``axis`` and drop that axis."""
    index = [slice(None)] * a.ndim
    index[axis] = i
    index = tuple(index)

    def fn(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return make_result(np.ascontiguousarray(a.data[index]), (a,), fn, "select")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    data = np.stack([t.data for t in tensors], axis=axis)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(data, tensors, fn, "stack")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def fn(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return make_result(data, tensors, fn, "concat")


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    axes = _norm_axes(axis, a.ndim)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def fn(g):
        return (np.broadcast_to(g.reshape(kept), a.shape).copy(),)

    return make_result(np.asarray(a.data.sum(axis=axes)), (a,), fn, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def fn(g):
        return (np.broadcast_to(g.reshape(kept) / count, a.shape).copy(),)

    return make_result(np.asarray(a.data.mean(axis=axes)), (a,), fn, "mean")
