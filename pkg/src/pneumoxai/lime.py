"""Local surrogate explanations over superpixel perturbations.

Pipeline: SLIC segmentation -> Bernoulli presence masks -> black-box
predictions on masked images -> proximity-kernel-weighted ridge fit ->
top-k segment attributions. Everything is deterministic given the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.ndimage

from .data import ImageBuffer
from .errors import ConfigError, ShapeMismatchError

# ---------------------------------------------------------------------------
# color conversion (sRGB -> CIELAB, D65 white point)

_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = np.array([0.95047, 1.0, 1.08883])


def rgb_to_lab(pixels):
    """(H, W, 3) uint8 -> (H, W, 3) float Lab."""
    srgb = pixels.astype(np.float64) / 255.0
    lin = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T / _WHITE
    f = np.where(xyz > (6 / 29) ** 3, np.cbrt(xyz), xyz / (3 * (6 / 29) ** 2) + 4 / 29)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116 * f[..., 1] - 16
    lab[..., 1] = 500 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200 * (f[..., 1] - f[..., 2])
    return lab


# ---------------------------------------------------------------------------
# SLIC segmentation


@dataclass(frozen=True)
class Superpixels:
    label_map: np.ndarray  # (H, W) int ids in [0, d)
    d: int


def slic_segments(image, n_segments=50, compactness=10.0, max_iters=10):
    """Grid-seeded k-means in (L, a, b, y, x) space with 4-connectivity cleanup."""
    if n_segments < 1:
        raise ConfigError("n_segments must be >= 1")
    pix = image.pixels
    h, w = pix.shape[:2]
    if n_segments > h * w:
        raise ConfigError("n_segments exceeds the pixel count")
    if pix.shape[2] == 1:
        pix = np.repeat(pix, 3, axis=2)
    lab = rgb_to_lab(pix)

    step = math.sqrt(h * w / n_segments)
    ny = max(1, round(h / step))
    nx = max(1, round(w / step))
    while ny * nx > n_segments and ny * nx > 1:
        if ny >= nx and ny > 1:
            ny -= 1
        else:
            nx -= 1
    cy = (np.arange(ny) + 0.5) * h / ny
    cx = (np.arange(nx) + 0.5) * w / nx
    centers_yx = np.array([(y, x) for y in cy for x in cx])
    ci = np.clip(np.rint(centers_yx).astype(int), 0, [h - 1, w - 1])
    centers_lab = lab[ci[:, 0], ci[:, 1]]
    k = len(centers_yx)

    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    labels = np.zeros((h, w), dtype=np.intp)
    ratio = (compactness / step) ** 2
    win = int(2 * step) + 1
    for _ in range(max_iters):
        best = np.full((h, w), np.inf)
        for c in range(k):
            y0 = max(0, int(centers_yx[c, 0]) - win)
            y1 = min(h, int(centers_yx[c, 0]) + win + 1)
            x0 = max(0, int(centers_yx[c, 1]) - win)
            x1 = min(w, int(centers_yx[c, 1]) + win + 1)
            dl = lab[y0:y1, x0:x1] - centers_lab[c]
            dc = np.einsum("ijk,ijk->ij", dl, dl)
            ds = (yy[y0:y1, x0:x1] - centers_yx[c, 0]) ** 2 + (
                xx[y0:y1, x0:x1] - centers_yx[c, 1]
            ) ** 2
            dist = dc + ds * ratio
            closer = dist < best[y0:y1, x0:x1]
            best[y0:y1, x0:x1][closer] = dist[closer]
            labels[y0:y1, x0:x1][closer] = c
        for c in range(k):
            mask = labels == c
            if mask.any():
                centers_yx[c] = (yy[mask].mean(), xx[mask].mean())
                centers_lab[c] = lab[mask].mean(axis=0)

    labels = _enforce_connectivity(labels)
    return Superpixels(labels, int(labels.max()) + 1)


def _enforce_connectivity(labels):
    """Absorb disconnected fragments into their dominant 4-neighbor segment."""
    h, w = labels.shape
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    out = labels.copy()
    for seg in np.unique(labels):
        comp, n = scipy.ndimage.label(out == seg, structure=structure)
        if n <= 1:
            continue
        sizes = scipy.ndimage.sum_labels(np.ones_like(comp), comp, range(1, n + 1))
        keep = int(np.argmax(sizes)) + 1
        for frag in range(1, n + 1):
            if frag == keep:
                continue
            mask = comp == frag
            border = scipy.ndimage.binary_dilation(mask, structure=structure) & ~mask
            neighbors = out[border]
            neighbors = neighbors[neighbors != seg]
            if neighbors.size == 0:
                continue
            vals, counts = np.unique(neighbors, return_counts=True)
            out[mask] = vals[np.argmax(counts)]
    # relabel to a contiguous 0..d-1 range, first-appearance order
    _, flat = np.unique(out, return_inverse=True)
    return flat.reshape(h, w).astype(np.intp)


# ---------------------------------------------------------------------------
# perturbation and surrogate


@dataclass
class LimeConfig:
    n_segments: int = 50
    compactness: float = 10.0
    max_iters: int = 10
    n_samples: int = 1000
    kernel_width: float | None = None  # defaults to 0.25 * sqrt(d)
    ridge_lambda: float = 1e-3
    fill: str = "mean"  # mean-color or flat gray occlusion
    top_k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be >= 0")
        if self.kernel_width is not None and self.kernel_width <= 0:
            raise ConfigError("kernel_width must be positive")
        if self.fill not in ("mean", "gray"):
            raise ConfigError("fill must be 'mean' or 'gray'")

    def to_json(self):
        return {k: getattr(self, k) for k in (
            "n_segments", "compactness", "max_iters", "n_samples",
            "kernel_width", "ridge_lambda", "fill", "top_k", "seed")}


@dataclass
class LimeExplanation:
    weights: np.ndarray
    intercept: float
    local_r2: float
    top_k: list  # (segment id, weight), descending |weight|
    seed: int
    config: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "weights": [float(v) for v in self.weights],
            "intercept": self.intercept,
            "local_r2": self.local_r2,
            "top_k": [[int(i), float(v)] for i, v in self.top_k],
            "seed": self.seed,
            "config": self.config,
        }


def sample_perturbations(d, n, rng):
    """Binary n x d presence matrix; row 0 keeps every segment."""
    if n < 1:
        raise ConfigError("need at least one perturbation sample")
    z = (rng.random((n, d)) < 0.5).astype(np.float64)
    z[0, :] = 1.0
    return z


def apply_mask(image, superpixels, z, fill="mean"):
    """Keep segments with z=1; replace z=0 segments by the fill color."""
    z = np.asarray(z)
    if z.shape != (superpixels.d,):
        raise ShapeMismatchError(
            f"mask length {z.shape} != segment count ({superpixels.d},)"
        )
    pix = image.pixels.copy()
    lm = superpixels.label_map
    for seg in np.nonzero(z == 0)[0]:
        mask = lm == seg
        if fill == "mean":
            value = np.rint(image.pixels[mask].mean(axis=0)).astype(np.uint8)
        else:
            value = np.full(pix.shape[2], 127, dtype=np.uint8)
        pix[mask] = value
    return ImageBuffer(pix)


def proximity_weights(Z, kernel_width):
    """exp(-D^2 / width^2) with D = cosine distance to the all-ones row."""
    d = Z.shape[1]
    frac = Z.sum(axis=1) / d
    dist = 1.0 - np.sqrt(frac)
    return np.exp(-(dist ** 2) / kernel_width ** 2)


def fit_surrogate(Z, preds, sample_weights, ridge_lambda):
    """Weighted ridge with an unpenalized intercept, via normal equations."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(preds, dtype=np.float64)
    sw = np.asarray(sample_weights, dtype=np.float64)
    n, d = Z.shape
    if n < d + 1:
        raise ConfigError(f"need at least d+1={d + 1} samples, got {n}")
    if np.any(sw < 0) or not np.any(sw > 0):
        raise ConfigError("sample weights must be nonnegative and not all zero")
    sw = sw * (n / sw.sum())  # rescaling all weights must not change the fit
    X = np.hstack([np.ones((n, 1)), Z])
    A = X.T @ (X * sw[:, None])
    A[1:, 1:] += ridge_lambda * np.eye(d)
    b = X.T @ (sw * y)
    try:
        factor = scipy.linalg.cho_factor(A)
        coef = scipy.linalg.cho_solve(factor, b)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise ConfigError(
            "singular surrogate system; use ridge_lambda > 0"
        ) from e
    # roundoff can let Cholesky "succeed" on a singular matrix with tiny
    # positive pivots; reject those explicitly
    pivots = np.abs(np.diag(factor[0]))
    if not np.all(np.isfinite(coef)) or pivots.min() <= 1e-6 * pivots.max():
        raise ConfigError("singular surrogate system; use ridge_lambda > 0")
    intercept, weights = float(coef[0]), coef[1:]
    resid = y - X @ coef
    ybar = np.sum(sw * y) / np.sum(sw)
    ss_tot = np.sum(sw * (y - ybar) ** 2)
    ss_res = np.sum(sw * resid ** 2)
    # a target with (numerically) zero variance has no explainable spread
    tiny = 1e-12 * max(1.0, float(np.sum(sw * y ** 2)))
    if ss_tot <= tiny:
        local_r2 = 1.0 if ss_res <= tiny else 0.0
    else:
        local_r2 = 1.0 - ss_res / ss_tot
    return weights, intercept, float(local_r2)


def explain(predict_fn, image, cfg):
    """Full LIME pass for one image and one black-box scoring function."""
    sp = slic_segments(image, cfg.n_segments, cfg.compactness, cfg.max_iters)
    d = sp.d
    if cfg.n_samples < d + 1:
        raise ConfigError(
            f"n_samples={cfg.n_samples} too small for {d} segments (need >= d+1)"
        )
    rng = np.random.default_rng(cfg.seed)
    Z = sample_perturbations(d, cfg.n_samples, rng)
    preds = np.empty(cfg.n_samples)
    for i in range(cfg.n_samples):
        masked = apply_mask(image, sp, Z[i], cfg.fill)
        try:
            preds[i] = float(predict_fn(masked))
        except Exception as e:
            raise RuntimeError(f"black-box prediction failed on sample {i}: {e}") from e
    width = cfg.kernel_width if cfg.kernel_width is not None else 0.25 * math.sqrt(d)
    sw = proximity_weights(Z, width)
    weights, intercept, r2 = fit_surrogate(Z, preds, sw, cfg.ridge_lambda)
    order = np.argsort(-np.abs(weights), kind="stable")
    top = [(int(i), float(weights[i])) for i in order[: min(cfg.top_k, d)]]
    return sp, LimeExplanation(
        weights=weights,
        intercept=intercept,
        local_r2=r2,
        top_k=top,
        seed=cfg.seed,
        config=cfg.to_json(),
    )


# ---------------------------------------------------------------------------
# rendering


def segment_boundaries(label_map):
    b = np.zeros(label_map.shape, dtype=bool)
    b[:-1, :] |= label_map[:-1, :] != label_map[1:, :]
    b[:, :-1] |= label_map[:, :-1] != label_map[:, 1:]
    return b


def lime_overlay(image, superpixels, explanation, k=None, tint_alpha=0.5):
    """Tint top positive segments red and top negative blue; outline all."""
    if k is None:
        k = len(explanation.top_k)
    if k > superpixels.d:
        raise ConfigError(f"k={k} exceeds segment count {superpixels.d}")
    pix = image.pixels
    if pix.shape[2] == 1:
        pix = np.repeat(pix, 3, axis=2)
    out = pix.astype(np.float64)
    lm = superpixels.label_map
    for seg, wgt in explanation.top_k[:k]:
        if wgt == 0.0:
            continue
        color = np.array([255.0, 0.0, 0.0]) if wgt > 0 else np.array([0.0, 0.0, 255.0])
        mask = lm == seg
        out[mask] = (1 - tint_alpha) * out[mask] + tint_alpha * color
    out[segment_boundaries(lm)] = (255.0, 255.0, 0.0)
    return ImageBuffer(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def explanation_to_json_file(explanation, path):
    with open(path, "w") as f:
        json.dump(explanation.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
