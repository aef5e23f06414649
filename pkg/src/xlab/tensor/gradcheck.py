"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import NonFiniteError, Tape, Tensor, no_tape


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def numeric_grad(f: Callable[[], Tensor], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    g = out.reshape(-1)
    with no_tape():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            g[i] = (hi - lo) / (2 * eps)
    return out


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and central differences.

    ``x`` is promoted to float64; ``f`` must return a scalar tensor.
    """
    x = Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        y = f(x)
    if not np.isfinite(y.data).all():
        raise NonFiniteError("f(x) is not finite")
    tape.backward(y)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    tape.clear()
    numeric = numeric_grad(lambda: f(x), x.data, eps)
    return float(relative_error(analytic, numeric).max()) if analytic.size else 0.0


def grad_check_params(loss: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-5) -> dict[str, float]:
    """Per-parameter max relative error for a closure over float64 parameter tensors."""
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"parameter {name!r} must be float64 for gradient checking")
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        y = loss()
    if not np.isfinite(y.data).all():
        raise NonFiniteError("loss is not finite")
    tape.backward(y)
    tape.clear()
    errors = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_grad(loss, p.data, eps)
        errors[name] = float(relative_error(analytic, numeric).max())
    return errors
