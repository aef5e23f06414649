"""Numpy-backed tensors with a reverse-mode tape, Adam, and gradient checking."""
from . import kernels, ops
from .core import NonFiniteError, Tape, Tensor, active_tape, default_dtype, no_tape, precision
from .gradcheck import grad_check, grad_check_params, numeric_grad
from .ops import ShapeError, matmul, softmax, layer_norm
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam", "AdamState", "NonFiniteError", "ShapeError", "Tape", "Tensor", "active_tape",
    "adam_step", "default_dtype", "grad_check", "grad_check_params", "kernels", "layer_norm",
    "matmul", "no_tape", "numeric_grad", "ops", "precision", "softmax",
]
