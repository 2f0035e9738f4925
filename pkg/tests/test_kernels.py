"""Convolution backend selection and cross-backend agreement."""

import numpy as np
import pytest

from pneumoxai import kernels

CASES = [
    # (x shape, w shape, stride, padding, groups)
    ((2, 3, 8, 8), (4, 3, 3, 3), 1, 1, 1),
    ((2, 3, 8, 8), (4, 3, 4, 4), 2, 1, 1),
    ((1, 4, 6, 6), (4, 1, 3, 3), 1, 1, 4),  # depthwise
    ((3, 6, 7, 9), (4, 3, 3, 3), 1, 2, 2),
    ((2, 2, 5, 5), (3, 2, 1, 1), 1, 0, 1),
]


def _compiled_or_skip():
    try:
        from pneumoxai.kernels import _convext
    except ImportError:
        pytest.skip("compiled extension not built")
    return _convext


def test_backend_identifier_is_valid():
    assert kernels.BACKEND in ("compiled", "numpy")


@pytest.mark.parametrize("xs,ws,stride,padding,groups", CASES)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_agree(xs, ws, stride, padding, groups, dtype):
    ext = _compiled_or_skip()
    npk = kernels.numpy_backend
    rng = np.random.default_rng(0)
    x = rng.standard_normal(xs).astype(dtype)
    w = rng.standard_normal(ws).astype(dtype)
    tol = 1e-4 if dtype == np.float32 else 1e-10

    ya = npk.conv2d_forward(x, w, stride, padding, groups)
    yb = ext.conv2d_forward(x, w, stride, padding, groups)
    assert ya.shape == yb.shape
    np.testing.assert_allclose(ya, yb, atol=tol)

    gy = rng.standard_normal(ya.shape).astype(dtype)
    np.testing.assert_allclose(
        npk.conv2d_grad_input(gy, w, xs, stride, padding, groups),
        ext.conv2d_grad_input(gy, w, xs, stride, padding, groups),
        atol=tol,
    )
    np.testing.assert_allclose(
        npk.conv2d_grad_kernel(gy, x, ws, stride, padding, groups),
        ext.conv2d_grad_kernel(gy, x, ws, stride, padding, groups),
        atol=tol,
    )


def test_numpy_backend_one_hot_kernel_shifted_crop():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 1, 7, 7)).astype(np.float32)
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 2] = 1.0
    y = kernels.numpy_backend.conv2d_forward(x, w, 1, 0, 1)
    np.testing.assert_array_equal(y[0, 0], x[0, 0, 1:6, 2:7])


def test_force_numpy_env_var_selects_fallback():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "from pneumoxai import kernels; print(kernels.BACKEND)"],
        capture_output=True, text=True, env={"PNEUMOXAI_FORCE_NUMPY": "1", "PATH": "/usr/bin:/bin"},
    )
    assert out.stdout.strip() == "numpy"
