"""Convolution kernel backends.

At import time the compiled extension is preferred; the numpy fallback is
used when the extension was not built or when PNEUMOXAI_FORCE_NUMPY=1 is
set. Both backends implement the same three routines and agree to float
rounding; `BACKEND` records which one is active.
"""

import os

from . import _convnp

if os.environ.get("PNEUMOXAI_FORCE_NUMPY") == "1":
    _impl = _convnp
    BACKEND = "numpy"
else:
    try:
        from . import _convext as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _convnp
        BACKEND = "numpy"

numpy_backend = _convnp


def conv2d_forward(x, w, stride=1, padding=0, groups=1):
    return _impl.conv2d_forward(x, w, stride, padding, groups)


def conv2d_grad_kernel(gy, x, w_shape, stride=1, padding=0, groups=1):
    return _impl.conv2d_grad_kernel(gy, x, w_shape, stride, padding, groups)


def conv2d_grad_input(gy, w, x_shape, stride=1, padding=0, groups=1):
    return _impl.conv2d_grad_input(gy, w, x_shape, stride, padding, groups)
