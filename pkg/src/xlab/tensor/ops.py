"""Differentiable tensor operations.

Each op computes its forward value with numpy or a fused kernel and, when a
tape is active and an input requires gradients, records a closure that maps
the output gradient to input gradients.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .core import Tensor, as_tensor, emit


class ShapeError(ValueError):
    """Operand extents are incompatible."""


def _coerce(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return emit(a.data + b.data, (a, b),
                lambda g, needs: (unbroadcast(g, sa) if needs[0] else None,
                                  unbroadcast(g, sb) if needs[1] else None))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return emit(a.data - b.data, (a, b),
                lambda g, needs: (unbroadcast(g, sa) if needs[0] else None,
                                  unbroadcast(-g, sb) if needs[1] else None))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data

    def backward(g, needs):
        return (unbroadcast(g * bd, ad.shape) if needs[0] else None,
                unbroadcast(g * ad, bd.shape) if needs[1] else None)

    return emit(ad * bd, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return emit(-a.data, (a,), lambda g, needs: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    f = np.asarray(factor, dtype=a.dtype)
    return emit(a.data * f, (a,), lambda g, needs: (g * f,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; ``b`` may be a shared 2-D weight."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        k, n = bd.shape
        lead = ad.shape[:-1]
        a2 = ad.reshape(-1, k)
        out = (a2 @ bd).reshape(*lead, n)

        def backward(g, needs):
            g2 = g.reshape(-1, n)
            ga = (g2 @ bd.T).reshape(ad.shape) if needs[0] else None
            gb = a2.T @ g2 if needs[1] else None
            return ga, gb

        return emit(out, (a, b), backward)

    if ad.shape[:-2] != bd.shape[:-2] and ad.ndim != 2 and bd.ndim != 2:
        try:
            np.broadcast_shapes(ad.shape[:-2], bd.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul batch mismatch: {a.shape} x {b.shape}") from None

    def backward(g, needs):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if needs[0] else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if needs[1] else None
        return ga, gb

    return emit(ad @ bd, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return emit(a.data.reshape(shape), (a,), lambda g, needs: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return emit(out, (a,), lambda g, needs: (np.transpose(g, inv),))


def sum(a: Tensor, axis=None) -> Tensor:
    src = a.shape

    def backward(g, needs):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return emit(np.asarray(a.data.sum(axis=axis)), (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis), 1.0 / n)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return emit(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g, needs: (g * pos,))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = np.ascontiguousarray(a.data).reshape(-1)
    y = kernels.gelu_forward(x).reshape(a.shape)
    return emit(y, (a,), lambda g, needs: (
        kernels.gelu_backward(x, np.ascontiguousarray(g).reshape(-1)).reshape(a.shape),))


def softmax(x: Tensor, axis: int = -1, mask=None, limits=None) -> Tensor:
    """Softmax along ``axis`` with max-subtraction.

    ``mask`` is a boolean array broadcastable to ``x`` (True = keep).
    ``limits`` (last axis only) gives, per leading index, how many leading
    entries are kept; it is the fast path used by attention.
    """
    axis = axis % x.ndim
    if axis != x.ndim - 1:
        if mask is not None or limits is not None:
            raise ValueError("masked softmax only supports the last axis")
        moved = transpose(x, _move_last(x.ndim, axis))
        return transpose(softmax(moved), tuple(np.argsort(_move_last(x.ndim, axis))))
    shape = x.shape
    n = shape[-1]
    x2 = np.ascontiguousarray(x.data).reshape(-1, n)
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), shape).reshape(-1, n)
        if not keep.any(axis=1).all():
            raise ValueError("softmax row is fully masked")
        y2 = kernels._npkernels.softmax_forward(np.where(keep, x2, -np.inf))
    else:
        lim = None
        if limits is not None:
            lim = np.array(np.broadcast_to(limits, shape[:-1]).reshape(-1), dtype=np.intc)  # writable copy
            if lim.size and (lim.min() < 1 or lim.max() > n):
                raise ValueError("softmax limits must lie in [1, n]")
        y2 = kernels.softmax_forward(x2, lim)
    y = y2.reshape(shape)

    def backward(g, needs):
        return (kernels.softmax_backward(y2, np.ascontiguousarray(g).reshape(-1, n)).reshape(shape),)

    return emit(y, (x,), backward)


def _move_last(ndim, axis):
    order = [i for i in range(ndim) if i != axis]
    return tuple(order + [axis])


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm expects gain/bias of shape ({d},), got {gain.shape}, {bias.shape}")
    shape = x.shape
    x2 = np.ascontiguousarray(x.data).reshape(-1, d)
    y2, xhat, rstd = kernels.layer_norm_forward(x2, gain.data, bias.data, eps)

    def backward(g, needs):
        dx, dg, db = kernels.layer_norm_backward(np.ascontiguousarray(g).reshape(-1, d), xhat, rstd, gain.data)
        return dx.reshape(shape), dg, db

    return emit(y2.reshape(shape), (x, gain, bias), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding index out of range [0, {n})")
    flat = np.ascontiguousarray(ids.reshape(-1))
    out = table.data[flat].reshape(*ids.shape, table.shape[1])

    def backward(g, needs):
        return (kernels.scatter_add_rows(n, flat, np.ascontiguousarray(g).reshape(-1, table.shape[1])),)

    return emit(out, (table,), backward)


def take_rows(x: Tensor, index) -> Tensor:
    """Select rows of a 2-D tensor: ``x[index]``."""
    index = np.ascontiguousarray(np.asarray(index, dtype=np.int64).reshape(-1))
    rows, d = x.shape

    def backward(g, needs):
        return (kernels.scatter_add_rows(rows, index, np.ascontiguousarray(g)),)

    return emit(x.data[index], (x,), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row-wise softmax."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N, C] logits, got {logits.shape}")
    targets = np.ascontiguousarray(np.asarray(targets, dtype=np.int64).reshape(-1))
    n, c = logits.shape
    if targets.shape[0] != n:
        raise ShapeError(f"{n} logit rows but {targets.shape[0]} targets")
    if n == 0:
        raise ValueError("cross_entropy over zero rows")
    if targets.min() < 0 or targets.max() >= c:
        raise IndexError(f"target out of range [0, {c})")
    losses, probs = kernels.cross_entropy_forward(np.ascontiguousarray(logits.data), targets)
    rows = np.arange(n)

    def backward(g, needs):
        d = probs.copy()
        d[rows, targets] -= 1
        return (d * (g / n),)

    return emit(np.asarray(losses.mean(), dtype=logits.dtype), (logits,), backward)
