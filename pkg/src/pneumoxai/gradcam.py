"""Gradient-weighted class activation maps and heatmap overlays.

The positive-class probability is backpropagated to the target layer's
feature maps; each channel is weighted by the spatial mean of its
gradient, the weighted sum is rectified, upsampled bilinearly to input
resolution, and rescaled so the maximum is 1 (an identically zero map
stays zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ImageBuffer, resize_bilinear_float
from .errors import NonFiniteError, ShapeMismatchError
from .tensor import Tensor, tensor_sum

# Blue -> red lookup table: value 0 maps to pure blue, 1 to pure red,
# passing through magenta; fixed so overlays are bit-exact everywhere.
COLORMAP = np.stack(
    [
        np.round(np.linspace(0, 255, 256)).astype(np.uint8),  # R
        np.zeros(256, dtype=np.uint8),  # G
        np.round(np.linspace(255, 0, 256)).astype(np.uint8),  # B
    ],
    axis=1,
)


@dataclass
class Heatmap:
    raw: np.ndarray  # feature-resolution, nonnegative
    normalized: np.ndarray  # input-resolution, values in [0, 1]
    target_layer: str
    class_score: float


def gradcam(network, image, target_layer=None):
    """Explain the positive-class score of one preprocessed image."""
    if target_layer is None:
        target_layer = network.spec.gradcam_target
    names = [n for n, _ in network.spec.blocks]
    if target_layer not in names:
        raise ShapeMismatchError(
            f"unknown layer {target_layer!r}; valid layers: {names}"
        )
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.data.ndim == 3:
        x = Tensor(x.data[None])
    if x.shape[0] != 1:
        raise ShapeMismatchError("gradcam explains a single image at a time")

    probs = network.forward(x, training=False)
    feats = network.activations[target_layer]
    network.zero_grad()
    score = tensor_sum(probs)  # N = 1, so this is the class probability
    score.backward()
    if feats.grad is None or not np.all(np.isfinite(feats.grad)):
        raise NonFiniteError("no finite gradient reached the target layer")

    grads = feats.grad[0]  # (C, Hf, Wf)
    acts = feats.data[0]
    alphas = grads.mean(axis=(1, 2))  # channel weights
    raw = np.maximum((alphas[:, None, None] * acts).sum(axis=0), 0.0)

    in_h, in_w = network.spec.input_shape[1:]
    up = resize_bilinear_float(raw[:, :, None].astype(np.float64), in_h, in_w)[:, :, 0]
    peak = up.max()
    normalized = up / peak if peak > 0 else np.zeros_like(up)
    network.zero_grad()
    return Heatmap(
        raw=raw,
        normalized=normalized,
        target_layer=target_layer,
        class_score=float(probs.data[0]),
    )


def heatmap_to_gray(heatmap):
    """Normalized map as an 8-bit grayscale buffer."""
    g = np.clip(np.rint(heatmap.normalized * 255.0), 0, 255).astype(np.uint8)
    return ImageBuffer(g[:, :, None])


def overlay(heatmap, original, alpha=0.5):
    """Alpha-blend the colormapped heatmap onto the grayscale original."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    hm = heatmap.normalized
    pix = original.pixels
    if pix.shape[:2] != hm.shape:
        raise ShapeMismatchError(
            f"overlay size mismatch: heatmap {hm.shape}, image {pix.shape[:2]}"
        )
    gray = pix.mean(axis=2) if pix.shape[2] == 3 else pix[:, :, 0].astype(np.float64)
    base = np.repeat(gray[:, :, None], 3, axis=2)
    colored = COLORMAP[np.clip(np.rint(hm * 255.0), 0, 255).astype(np.intp)]
    blended = (1.0 - alpha) * base + alpha * colored.astype(np.float64)
    return ImageBuffer(np.clip(np.rint(blended), 0, 255).astype(np.uint8))


def heatmap_csv(heatmap, path):
    np.savetxt(path, heatmap.normalized, delimiter=",", fmt="%.8f")
