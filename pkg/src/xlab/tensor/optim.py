"""Adam with bias correction, operating in place on named parameters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import NonFiniteError, Tensor


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor | np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update to every entry of ``params``.

    Only the parameters passed are touched, so frozen parameters are simply
    left out of ``params``. Raises :class:`NonFiniteError` naming the first
    parameter whose gradient is not finite; nothing is updated in that case.
    """
    for name in params:
        g = grads[name]
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        data = p.data if isinstance(p, Tensor) else p
        g = np.asarray(grads[name], dtype=data.dtype)
        if g.shape != data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {data.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(data)
            state.v[name] = np.zeros_like(data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(data.dtype, copy=False)
    return state


class Adam:
    """Stateful wrapper pairing named parameter tensors with an :class:`AdamState`."""

    def __init__(self, params: dict[str, Tensor], lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        grads = {}
        for name, p in self.params.items():
            grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
