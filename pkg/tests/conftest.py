"""Shared fixtures and numeric oracles for the test suite."""

import numpy as np
import pytest

from pneumoxai import synthetic
from pneumoxai.tensor import Tensor


def rel_err(analytic, numeric):
    """Scale-normalized gradient error between two arrays."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - n) / (np.linalg.norm(n) + 1e-12))


def fd_gradients(fn, arrays, h=1e-4):
    """Central finite differences of a scalar-valued fn over float64 arrays.

    fn receives the arrays (mutated in place between calls) and returns a
    python float. Returns one gradient array per input.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn()
            flat[i] = orig - h
            fm = fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def check_grads(build_loss, arrays, tol=1e-4, h=1e-4):
    """Assert autodiff gradients of build_loss(tensors) match finite differences.

    arrays are float64 ndarrays; build_loss receives matching Tensors
    (requires_grad=True) and must return a scalar Tensor.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def value():
        ts = [Tensor(a.copy()) for a in arrays]
        return float(build_loss(*ts).data)

    numeric = fd_gradients(value, arrays, h=h)
    for name_i, (ga, gn) in enumerate(zip(analytic, numeric)):
        err = rel_err(ga, gn)
        assert err <= tol, f"input {name_i}: gradient relative error {err:.3g} > {tol}"


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A small planted-blob dataset tree for fast pipeline tests."""
    root = tmp_path_factory.mktemp("smalldata")
    spec = synthetic.SyntheticSpec(
        counts={"train": 32, "val": 8, "test": 8}, seed=0
    )
    synthetic.generate_dataset(spec, root)
    return root
