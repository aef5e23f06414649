"""Tensor container and the reverse-mode tape that records operations on it."""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

_state = threading.local()

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class NonFiniteError(ValueError):
    """Raised when a tensor would hold NaN or Inf values."""


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float dtype (``"float32"`` or ``"float64"``)."""
    dtype = np.dtype(dtype)
    if dtype not in FLOAT_DTYPES:
        raise ValueError(f"unsupported precision {dtype}")
    previous = default_dtype()
    _state.dtype = dtype
    try:
        yield dtype
    finally:
        _state.dtype = previous


class Tensor:
    """N-dimensional float array that can take part in a gradient tape.

    ``data`` is always a C-contiguous float32/float64 ndarray. ``grad`` is
    ``None`` until a backward pass reaches the tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES else default_dtype()
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"tensor {name or ''} contains non-finite values".replace("  ", " "))
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        # op outputs skip validation; finiteness is checked at loss/optimizer boundaries
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t.is_leaf = not requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # arithmetic is delegated to ops; imported lazily to avoid a cycle
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return ops.scale(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()


BackwardFn = Callable[[np.ndarray, Sequence[bool]], Sequence["np.ndarray | None"]]


class Tape:
    """Wengert list of recorded operations.

    Use as a context manager; operations run inside the ``with`` block on
    tensors that require gradients are appended to the tape. ``backward``
    walks the records in reverse and deposits gradients on leaf tensors.
    The tape keeps references to every intermediate until :meth:`clear`.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.records.append((out, parents, backward))

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if loss.size != 1:
                raise ValueError(f"backward needs a scalar loss or an explicit seed, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        if not np.isfinite(loss.data).all():
            raise NonFiniteError("loss is not finite")
        if loss.is_leaf:
            _accumulate_leaf(loss, seed)
            return
        pending: dict[int, np.ndarray] = {id(loss): seed}
        for out, parents, fn in reversed(self.records):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            needs = [p.requires_grad for p in parents]
            grads = fn(g, needs)
            for p, pg, need in zip(parents, grads, needs):
                if not need or pg is None:
                    continue
                if p.is_leaf:
                    _accumulate_leaf(p, pg)
                else:
                    key = id(p)
                    prev = pending.get(key)
                    pending[key] = pg if prev is None else prev + pg

    def clear(self) -> None:
        self.records.clear()


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.shape:
        raise RuntimeError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_tape():
    """Suspend recording (e.g. for evaluation inside a training step)."""
    stack = _tape_stack()
    saved = stack[:]
    stack.clear()
    try:
        yield
    finally:
        stack[:] = saved


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def emit(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Create an op output and record it on the active tape when needed."""
    tape = active_tape()
    needs_grad = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, needs_grad)
    if needs_grad:
        tape.record(out, parents, backward)
    return out
