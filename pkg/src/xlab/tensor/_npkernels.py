"""Pure numpy implementations of the fused kernels.

Selected automatically when the compiled extension is unavailable, or
explicitly with ``XLAB_KERNELS=numpy``. Inputs are 2-D C-contiguous arrays
(rows x features) unless noted.
"""
import numpy as np

NAME = "numpy"

_GELU_C = np.sqrt(2.0 / np.pi)


def softmax_forward(x, limits=None):
    if limits is not None:
        keep = np.arange(x.shape[1]) < limits[:, None]
        x = np.where(keep, x, -np.inf)
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(y, dy):
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def layer_norm_forward(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layer_norm_backward(dy, xhat, rstd, gain):
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    d = xhat.shape[1]
    dx = (dxhat - dxhat.sum(axis=1, keepdims=True) / d
          - xhat * (dxhat * xhat).sum(axis=1, keepdims=True) / d) * rstd[:, None]
    return dx, dgain, dbias


def gelu_forward(x):
    c = np.asarray(_GELU_C, dtype=x.dtype)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


def gelu_backward(x, dy):
    c = np.asarray(_GELU_C, dtype=x.dtype)
    u = c * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    du = c * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def cross_entropy_forward(logits, targets):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    rows = np.arange(logits.shape[0])
    losses = (np.log(s[:, 0]) + m[:, 0]) - logits[rows, targets]
    return losses, probs


def scatter_add_rows(n_rows, ids, src):
    out = np.zeros((n_rows, src.shape[1]), dtype=src.dtype)
    np.add.at(out, ids, src)
    return out
