# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused kernels; same contracts as ``_npkernels``.

Every reduction runs sequentially in row-major order so results are
bit-reproducible for a given build.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, expf, log, logf, sqrt, sqrtf

cnp.import_array()

NAME = "cython"


cdef inline floating _exp(floating v) noexcept nogil:
    if floating is float:
        return expf(v)
    else:
        return exp(v)


cdef inline floating _log(floating v) noexcept nogil:
    if floating is float:
        return logf(v)
    else:
        return log(v)


cdef inline floating _sqrt(floating v) noexcept nogil:
    if floating is float:
        return sqrtf(v)
    else:
        return sqrt(v)


cdef inline floating _tanh(floating v) noexcept nogil:
    # exp-based so the loop vectorizes; |v| > 20 is +-1 to working precision
    if v > 20:
        v = 20
    elif v < -20:
        v = -20
    return 1 - 2 / (_exp(2 * v) + 1)


cdef void _softmax_rows(const floating[:, ::1] x, floating[:, ::1] y,
                        const int[::1] limits, bint use_limits) noexcept nogil:
    cdef Py_ssize_t r, j, n = x.shape[1], lim
    cdef floating m, s, inv
    for r in range(x.shape[0]):
        lim = limits[r] if use_limits else n
        m = x[r, 0]
        for j in range(1, lim):
            if x[r, j] > m:
                m = x[r, j]
        s = 0
        for j in range(lim):
            y[r, j] = _exp(x[r, j] - m)
            s = s + y[r, j]
        inv = 1 / s
        for j in range(lim):
            y[r, j] = y[r, j] * inv
        for j in range(lim, n):
            y[r, j] = 0


def softmax_forward(floating[:, ::1] x, limits=None):
    cdef Py_ssize_t rows = x.shape[0]
    out = np.empty((rows, x.shape[1]), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] y = out
    cdef int[::1] lim
    cdef bint use = limits is not None
    if use:
        lim = np.ascontiguousarray(limits, dtype=np.intc)
    else:
        lim = np.zeros(1, dtype=np.intc)
    with nogil:
        _softmax_rows(x, y, lim, use)
    return out


def softmax_backward(floating[:, ::1] y, floating[:, ::1] dy):
    out = np.empty((y.shape[0], y.shape[1]), dtype=np.asarray(y).dtype)
    cdef floating[:, ::1] dx = out
    cdef Py_ssize_t r, j, n = y.shape[1]
    cdef floating dot
    with nogil:
        for r in range(y.shape[0]):
            dot = 0
            for j in range(n):
                dot = dot + dy[r, j] * y[r, j]
            for j in range(n):
                dx[r, j] = y[r, j] * (dy[r, j] - dot)
    return out


def layer_norm_forward(floating[:, ::1] x, floating[::1] gain, floating[::1] bias, double eps):
    cdef Py_ssize_t rows = x.shape[0], d = x.shape[1], r, j
    dt = np.asarray(x).dtype
    out = np.empty((rows, d), dtype=dt)
    xh = np.empty((rows, d), dtype=dt)
    rs = np.empty(rows, dtype=dt)
    cdef floating[:, ::1] y = out
    cdef floating[:, ::1] xhat = xh
    cdef floating[::1] rstd = rs
    cdef floating mean, var, c, inv
    cdef floating fd = <floating>d
    with nogil:
        for r in range(rows):
            mean = 0
            for j in range(d):
                mean = mean + x[r, j]
            mean = mean / fd
            var = 0
            for j in range(d):
                c = x[r, j] - mean
                var = var + c * c
            var = var / fd
            inv = 1 / _sqrt(var + <floating>eps)
            rstd[r] = inv
            for j in range(d):
                c = (x[r, j] - mean) * inv
                xhat[r, j] = c
                y[r, j] = c * gain[j] + bias[j]
    return out, xh, rs


def layer_norm_backward(floating[:, ::1] dy, floating[:, ::1] xhat, floating[::1] rstd, floating[::1] gain):
    cdef Py_ssize_t rows = dy.shape[0], d = dy.shape[1], r, j
    dt = np.asarray(dy).dtype
    out = np.empty((rows, d), dtype=dt)
    dg = np.zeros(d, dtype=dt)
    db = np.zeros(d, dtype=dt)
    cdef floating[:, ::1] dx = out
    cdef floating[::1] dgain = dg
    cdef floating[::1] dbias = db
    cdef floating s1, s2, g, fd = <floating>d
    with nogil:
        for r in range(rows):
            s1 = 0
            s2 = 0
            for j in range(d):
                g = dy[r, j] * gain[j]
                s1 = s1 + g
                s2 = s2 + g * xhat[r, j]
                dgain[j] = dgain[j] + dy[r, j] * xhat[r, j]
                dbias[j] = dbias[j] + dy[r, j]
            s1 = s1 / fd
            s2 = s2 / fd
            for j in range(d):
                dx[r, j] = (dy[r, j] * gain[j] - s1 - xhat[r, j] * s2) * rstd[r]
    return out, dg, db


cdef double _GELU_C = 0.7978845608028654


def gelu_forward(floating[::1] x):
    out = np.empty(x.shape[0], dtype=np.asarray(x).dtype)
    cdef floating[::1] y = out
    cdef Py_ssize_t i
    cdef floating v, c = <floating>_GELU_C, k = <floating>0.044715
    with nogil:
        for i in range(x.shape[0]):
            v = x[i]
            y[i] = <floating>0.5 * v * (1 + _tanh(c * (v + k * v * v * v)))
    return out


def gelu_backward(floating[::1] x, floating[::1] dy):
    out = np.empty(x.shape[0], dtype=np.asarray(x).dtype)
    cdef floating[::1] dx = out
    cdef Py_ssize_t i
    cdef floating v, t, c = <floating>_GELU_C, k = <floating>0.044715
    with nogil:
        for i in range(x.shape[0]):
            v = x[i]
            t = _tanh(c * (v + k * v * v * v))
            dx[i] = dy[i] * (<floating>0.5 * (1 + t)
                             + <floating>0.5 * v * (1 - t * t) * c * (1 + 3 * k * v * v))
    return out


def cross_entropy_forward(floating[:, ::1] logits, const long long[::1] targets):
    cdef Py_ssize_t rows = logits.shape[0], n = logits.shape[1], r, j
    dt = np.asarray(logits).dtype
    pr = np.empty((rows, n), dtype=dt)
    ls = np.empty(rows, dtype=dt)
    cdef floating[:, ::1] probs = pr
    cdef floating[::1] losses = ls
    cdef floating m, s, inv
    with nogil:
        for r in range(rows):
            m = logits[r, 0]
            for j in range(1, n):
                if logits[r, j] > m:
                    m = logits[r, j]
            s = 0
            for j in range(n):
                probs[r, j] = _exp(logits[r, j] - m)
                s = s + probs[r, j]
            inv = 1 / s
            for j in range(n):
                probs[r, j] = probs[r, j] * inv
            losses[r] = _log(s) + m - logits[r, targets[r]]
    return ls, pr


def scatter_add_rows(Py_ssize_t n_rows, const long long[::1] ids, floating[:, ::1] src):
    cdef Py_ssize_t d = src.shape[1], i, j, row
    out = np.zeros((n_rows, d), dtype=np.asarray(src).dtype)
    cdef floating[:, ::1] acc = out
    with nogil:
        for i in range(ids.shape[0]):
            row = ids[i]
            for j in range(d):
                acc[row, j] = acc[row, j] + src[i, j]
    return out
