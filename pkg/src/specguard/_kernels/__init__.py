"""Kernel backend selection: compiled Cython core with a numpy fallback.

The compiled module is preferred when importable; set the environment
variable ``SPECGUARD_FORCE_PY_KERNELS=1`` to force the numpy fallback
(useful for benchmarking and for debugging the reference semantics).
"""

import os

from . import pyfallback

if os.environ.get("SPECGUARD_FORCE_PY_KERNELS", "") == "1":
    _impl = pyfallback
    BACKEND = "python"
else:
    try:
        from . import _cykernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = pyfallback
        BACKEND = "python"

conv_out_size = _impl.conv_out_size
conv2d_periodic = _impl.conv2d_periodic
conv2d_periodic_adjoint = _impl.conv2d_periodic_adjoint
conv_kernel_corr = _impl.conv_kernel_corr
gelu = _impl.gelu
gelu_grad = _impl.gelu_grad

__all__ = [
    "BACKEND",
    "conv_out_size",
    "conv2d_periodic",
    "conv2d_periodic_adjoint",
    "conv_kernel_corr",
    "gelu",
    "gelu_grad",
    "pyfallback",
]
