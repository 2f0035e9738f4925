"""Dense tensors with reverse-mode automatic differentiation.

The operator set is exactly what the CNN blocks, the loss, and the
saliency pass need: conv2d (with channel groups), pooling, dense layers,
batchnorm, relu/sigmoid, channel concat/scale, residual add, and binary
cross-entropy. Every op records a backward closure; `Tensor.backward()`
walks the recorded graph in decreasing creation order, so parents are
always visited after their children.

Arrays are float32 by default; float64 is used by the finite-difference
oracles in the test suite. All ops reject non-finite inputs.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import kernels
from .errors import NonFiniteError, ShapeMismatchError

DEFAULT_DTYPE = np.float32

_node_ids = itertools.count()


def _require_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite values in {name}")


class Tensor:
    """N-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        # note: not ascontiguousarray, which would promote 0-d scalars to 1-d
        self.data = np.asarray(arr, order="C")
        _require_finite("tensor data", self.data)
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate grad buffers of every tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ShapeMismatchError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        order = _toposort(self)
        self.accumulate_grad(np.ones_like(self.data))
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                _require_finite("gradients", *[p.grad for p in node._parents if p.grad is not None])

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={'set' if self.grad is not None else 'none'})"


def _toposort(root):
    seen = set()
    nodes = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t.node_id, reverse=True)
    return nodes


def _make(data, parents, backward_fn):
    out = Tensor(data)
    out._parents = tuple(parents)
    out._backward = backward_fn
    return out


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# operators


def conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """Cross-correlation of NCHW input with OIHW kernels."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects NCHW input and OIHW kernel, got {x.shape} and {w.shape}"
        )
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    if c != cg * groups or o % groups != 0:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input {c} channels, kernel {cg} per group, {groups} groups"
        )
    if (h + 2 * padding - kh) % stride or (wd + 2 * padding - kw) % stride:
        raise ShapeMismatchError(
            f"conv2d output extent is not an integer for input {h}x{wd}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeMismatchError("conv2d kernel larger than padded input")
    if b is not None and b.shape != (o,):
        raise ShapeMismatchError(f"conv2d bias shape {b.shape} != ({o},)")
    _require_finite("conv2d inputs", x.data, w.data)

    y = kernels.conv2d_forward(x.data, w.data, stride, padding, groups)
    if b is not None:
        y = y + b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(gy):
        if x.requires_grad or x._backward is not None:
            x.accumulate_grad(
                kernels.conv2d_grad_input(np.ascontiguousarray(gy), w.data, x.shape, stride, padding, groups)
            )
        w.accumulate_grad(
            kernels.conv2d_grad_kernel(np.ascontiguousarray(gy), x.data, w.shape, stride, padding, groups)
        )
        if b is not None:
            b.accumulate_grad(gy.sum(axis=(0, 2, 3)))

    return _make(y, parents, backward)


def pool2d(x, mode, window=2, stride=None):
    """Windowed max/avg pooling or global average pooling over NCHW."""
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"pool2d expects NCHW, got {x.shape}")
    _require_finite("pool2d input", x.data)
    n, c, h, wd = x.shape

    if mode == "global_avg":
        y = x.data.mean(axis=(2, 3), keepdims=True)

        def backward(gy):
            x.accumulate_grad(np.broadcast_to(gy / (h * wd), x.shape).astype(x.dtype))

        return _make(y, (x,), backward)

    if mode not in ("max", "avg"):
        raise ValueError(f"unknown pool mode {mode!r}")
    stride = window if stride is None else stride
    if window > h or window > wd:
        raise ShapeMismatchError(
            f"pool window {window} larger than input {h}x{wd}"
        )
    ho = (h - window) // stride + 1
    wo = (wd - window) // stride + 1
    pt = np.lib.stride_tricks.sliding_window_view(x.data, (window, window), axis=(2, 3))
    pt = pt[:, :, ::stride, ::stride].reshape(n, c, ho, wo, window * window)

    if mode == "max":
        idx = pt.argmax(axis=-1)
        y = np.take_along_axis(pt, idx[..., None], axis=-1)[..., 0]

        def backward(gy):
            gx = np.zeros_like(x.data)
            nn, cc, hh, ww = np.indices((n, c, ho, wo))
            hi = hh * stride + idx // window
            wi = ww * stride + idx % window
            np.add.at(gx, (nn, cc, hi, wi), gy)
            x.accumulate_grad(gx)

    else:
        y = pt.mean(axis=-1)

        def backward(gy):
            gx = np.zeros_like(x.data)
            share = gy / (window * window)
            for i in range(window):
                for j in range(window):
                    gx[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += share
            x.accumulate_grad(gx)

    return _make(np.ascontiguousarray(y), (x,), backward)


def dense(x, w, b):
    """Affine map: (N,F) @ (F,K) + (K,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatchError(
            f"dense extent mismatch: input {x.shape}, weight {w.shape}"
        )
    if b.shape != (w.shape[1],):
        raise ShapeMismatchError(f"dense bias shape {b.shape} != ({w.shape[1]},)")
    _require_finite("dense inputs", x.data, w.data, b.data)
    y = x.data @ w.data + b.data

    def backward(gy):
        x.accumulate_grad(gy @ w.data.T)
        w.accumulate_grad(x.data.T @ gy)
        b.accumulate_grad(gy.sum(axis=0))

    return _make(y, (x, w, b), backward)


def batchnorm2d(x, gamma, beta, running_mean, running_var, training,
                momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over NCHW.

    Train mode normalizes by batch statistics and updates the running
    buffers in place; eval mode uses the running buffers.
    """
    if x.data.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ShapeMismatchError(
            f"batchnorm2d channel mismatch: input {x.shape}, gamma {gamma.shape}"
        )
    _require_finite("batchnorm2d input", x.data)
    n, c, h, wd = x.shape
    m = n * h * wd
    gam = gamma.data[None, :, None, None]

    if training:
        if m <= 1:
            raise ShapeMismatchError(
                "batchnorm2d train mode needs more than one element per channel"
            )
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = gam * xhat + beta.data[None, :, None, None]

        def backward(gy):
            dxhat = gy * gam
            s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            dx = (dxhat - s1 / m - xhat * s2 / m) * inv_std[None, :, None, None]
            x.accumulate_grad(dx.astype(x.dtype))
            gamma.accumulate_grad((gy * xhat).sum(axis=(0, 2, 3)))
            beta.accumulate_grad(gy.sum(axis=(0, 2, 3)))

    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = gam * xhat + beta.data[None, :, None, None]

        def backward(gy):
            x.accumulate_grad((gy * gam * inv_std[None, :, None, None]).astype(x.dtype))
            gamma.accumulate_grad((gy * xhat).sum(axis=(0, 2, 3)))
            beta.accumulate_grad(gy.sum(axis=(0, 2, 3)))

    return _make(y.astype(x.dtype), (x, gamma, beta), backward)


def activation(x, kind):
    """Elementwise relu or sigmoid."""
    _require_finite("activation input", x.data)
    if kind == "relu":
        y = np.maximum(x.data, 0)

        def backward(gy):
            x.accumulate_grad(gy * (x.data > 0))

    elif kind == "sigmoid":
        y = 1.0 / (1.0 + np.exp(-x.data))

        def backward(gy):
            x.accumulate_grad(gy * y * (1.0 - y))

    else:
        raise ValueError(f"unknown activation {kind!r}")
    return _make(y, (x,), backward)


def relu(x):
    return activation(x, "relu")


def sigmoid(x):
    return activation(x, "sigmoid")


def concat_channels(inputs):
    """Concatenate NCHW tensors along the channel axis."""
    if not inputs:
        raise ShapeMismatchError("concat_channels needs at least one input")
    first = inputs[0]
    for t in inputs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (first.shape[0], first.shape[2], first.shape[3]):
            raise ShapeMismatchError(
                f"concat_channels spatial mismatch: {first.shape} vs {t.shape}"
            )
    for t in inputs:
        _require_finite("concat_channels input", t.data)
    y = np.concatenate([t.data for t in inputs], axis=1)
    splits = np.cumsum([t.shape[1] for t in inputs])[:-1]

    def backward(gy):
        for t, g in zip(inputs, np.split(gy, splits, axis=1)):
            t.accumulate_grad(np.ascontiguousarray(g))

    return _make(y, tuple(inputs), backward)


def scale_channels(x, gates):
    """Multiply each channel of NCHW x by a per-(sample, channel) gate."""
    if gates.shape != x.shape[:2]:
        raise ShapeMismatchError(
            f"scale_channels gate shape {gates.shape} != {x.shape[:2]}"
        )
    _require_finite("scale_channels inputs", x.data, gates.data)
    g4 = gates.data[:, :, None, None]
    y = x.data * g4

    def backward(gy):
        x.accumulate_grad(gy * g4)
        gates.accumulate_grad((gy * x.data).sum(axis=(2, 3)))

    return _make(y, (x, gates), backward)


def add(a, b):
    """Elementwise sum of same-shape tensors (residual connections)."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"add shape mismatch: {a.shape} vs {b.shape}")
    _require_finite("add inputs", a.data, b.data)
    y = a.data + b.data

    def backward(gy):
        a.accumulate_grad(gy)
        b.accumulate_grad(gy)

    return _make(y, (a, b), backward)


def scale(x, s):
    """Multiply by a python scalar."""
    _require_finite("scale input", x.data)
    y = x.data * s

    def backward(gy):
        x.accumulate_grad(gy * s)

    return _make(y, (x,), backward)


def reshape(x, shape):
    y = x.data.reshape(shape)

    def backward(gy):
        x.accumulate_grad(gy.reshape(x.shape))

    return _make(y, (x,), backward)


def tensor_sum(x):
    """Sum of all elements, as a scalar tensor."""
    _require_finite("sum input", x.data)
    y = x.data.sum(keepdims=False).reshape(())

    def backward(gy):
        x.accumulate_grad(np.broadcast_to(gy, x.shape).astype(x.dtype) * np.ones_like(x.data))

    return _make(y, (x,), backward)


def bce_loss(probs, labels, eps=1e-7):
    """Mean binary cross-entropy over post-sigmoid probabilities."""
    lab = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=probs.dtype)
    if lab.shape != probs.shape:
        raise ShapeMismatchError(
            f"bce_loss label shape {lab.shape} != {probs.shape}"
        )
    if not np.all((lab == 0) | (lab == 1)):
        raise ValueError("bce_loss labels must be 0 or 1")
    _require_finite("bce_loss probabilities", probs.data)
    p = np.clip(probs.data, eps, 1.0 - eps)
    n = p.size
    loss = -(lab * np.log(p) + (1.0 - lab) * np.log1p(-p)).mean()

    def backward(gy):
        inside = (probs.data > eps) & (probs.data < 1.0 - eps)
        dp = np.where(inside, (p - lab) / (p * (1.0 - p)) / n, 0.0)
        probs.accumulate_grad((gy * dp).astype(probs.dtype))

    return _make(np.asarray(loss, dtype=probs.dtype).reshape(()), (probs,), backward)
