"""Backend selection for the fused kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``XLAB_KERNELS=numpy`` forces the fallback, ``XLAB_KERNELS=cython``
makes a missing extension an error.
"""
import logging
import os

from . import _npkernels

log = logging.getLogger(__name__)


def _select():
    choice = os.environ.get("XLAB_KERNELS", "auto").lower()
    if choice == "numpy":
        return _npkernels
    try:
        from . import _ckernels
    except ImportError as exc:
        if choice == "cython":
            raise
        log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
        return _npkernels
    return _ckernels


impl = _select()
BACKEND = impl.NAME

softmax_forward = impl.softmax_forward
softmax_backward = impl.softmax_backward
layer_norm_forward = impl.layer_norm_forward
layer_norm_backward = impl.layer_norm_backward
gelu_forward = impl.gelu_forward
gelu_backward = impl.gelu_backward
cross_entropy_forward = impl.cross_entropy_forward
scatter_add_rows = impl.scatter_add_rows
