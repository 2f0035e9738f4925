"""Dataset discovery, image decoding, preprocessing, and augmentation.

The dataset layout is ``root/{train,val,test}/{NORMAL,PNEUMONIA}/*.{png,jpg,jpeg}``
with Normal = 0 and Pneumonia = 1. Validation/test images get resize +
normalize only; augmentation (flip, rotate, zoom, brightness, in that
fixed order) is applied to training images with a per-sample RNG derived
from (seed, sample index, epoch), so results do not depend on worker
scheduling.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DatasetError, DecodeError, UnsupportedImageFormat
from .tensor import Tensor

SPLIT_NAMES = ("train", "val", "test")
CLASS_LABELS = {"NORMAL": 0, "PNEUMONIA": 1}
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class Sample:
    path: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DatasetError(f"label {self.label} is not binary")


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    splits: dict  # split name -> list[Sample]

    def counts(self):
        out = {}
        for split, samples in self.splits.items():
            out[split] = {
                "NORMAL": sum(1 for s in samples if s.label == 0),
                "PNEUMONIA": sum(1 for s in samples if s.label == 1),
            }
        return out

    def total(self):
        return sum(len(s) for s in self.splits.values())


@dataclass
class PreprocessConfig:
    target_size: int = 224
    mean: tuple = (0.485, 0.456, 0.406)
    std: tuple = (0.229, 0.224, 0.225)
    flip_prob: float = 0.5
    rotation_deg: float = 15.0
    zoom_range: tuple = (0.9, 1.1)
    brightness_delta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError("flip_prob must lie in [0, 1]")
        if self.zoom_range[0] > self.zoom_range[1] or self.zoom_range[0] <= 0:
            raise ConfigError("zoom_range must satisfy 0 < low <= high")
        if any(s <= 0 for s in self.std):
            raise ConfigError("std entries must be positive")
        if self.rotation_deg < 0 or self.brightness_delta < 0:
            raise ConfigError("rotation_deg and brightness_delta must be nonnegative")


@dataclass
class ImageBuffer:
    pixels: np.ndarray  # (H, W, C) uint8

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise DecodeError(f"image buffer shape {self.pixels.shape} not HxWxC")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return self.pixels.shape[2]


# ---------------------------------------------------------------------------
# dataset scanning


def scan_dataset(root, required_splits=SPLIT_NAMES):
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    present = [s for s in SPLIT_NAMES if (root / s).is_dir()]
    if not present:
        raise DatasetError(f"no splits found under {root}")
    for s in required_splits:
        if s not in present:
            raise DatasetError(f"missing split directory: {s}")
    splits = {}
    for split in present:
        samples = []
        for cls_dir in sorted(p for p in (root / split).iterdir() if p.is_dir()):
            if cls_dir.name not in CLASS_LABELS:
                raise DatasetError(
                    f"unrecognized class directory {cls_dir.name!r} in split {split!r}"
                )
            label = CLASS_LABELS[cls_dir.name]
            files = sorted(
                p for p in cls_dir.iterdir()
                if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
            )
            samples.extend(Sample(str(p), label) for p in files)
        splits[split] = samples
    manifest = DatasetManifest(str(root), splits)
    if manifest.total() == 0:
        raise DatasetError(f"no images found under {root}")
    return manifest


def manifest_summary(manifest, list_files=False):
    doc = {"root": manifest.root, "counts": manifest.counts(), "total": manifest.total()}
    if list_files:
        doc["files"] = {
            split: [{"path": s.path, "label": s.label} for s in samples]
            for split, samples in manifest.splits.items()
        }
    return doc


# ---------------------------------------------------------------------------
# decoding


def decode_image(data):
    """Decode PNG or JPEG bytes to a 3-channel 8-bit buffer."""
    try:
        im = Image.open(io.BytesIO(data))
        fmt = im.format
        if fmt not in ("PNG", "JPEG"):
            raise UnsupportedImageFormat(f"unsupported image format {fmt!r}")
        im.load()
    except UnsupportedImageFormat:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DecodeError(f"could not decode image stream ({len(data)} bytes): {e}") from e
    arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return ImageBuffer(arr)


def encode_png(img):
    """Lossless PNG bytes for a buffer (1 or 3 channels)."""
    arr = img.pixels
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# geometry


def _sample_bilinear(pix, ys, xs):
    """Sample float image (H, W, C) at fractional coords with edge clamping."""
    h, w = pix.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = pix[y0, x0] * (1 - fx) + pix[y0, x1] * fx
    bot = pix[y1, x0] * (1 - fx) + pix[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear_float(pix, h, w):
    """Bilinear resize of a float (H, W, C) array using half-pixel centers."""
    if h < 1 or w < 1:
        raise ConfigError("resize extents must be >= 1")
    src_h, src_w = pix.shape[:2]
    ys = (np.arange(h) + 0.5) * (src_h / h) - 0.5
    xs = (np.arange(w) + 0.5) * (src_w / w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _sample_bilinear(pix, yy, xx)


def resize_bilinear(img, h, w):
    if (h, w) == (img.height, img.width):
        return ImageBuffer(img.pixels.copy())
    out = resize_bilinear_float(img.pixels.astype(np.float64), h, w)
    return ImageBuffer(np.clip(np.rint(out), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# normalization and augmentation


def normalize(img, cfg):
    """Byte buffer -> channel-first float array: v/255 then (v - mean)/std."""
    if img.channels != 3:
        raise DecodeError(f"normalize expects 3 channels, got {img.channels}")
    v = img.pixels.astype(np.float32) / 255.0
    mean = np.asarray(cfg.mean, dtype=np.float32)
    std = np.asarray(cfg.std, dtype=np.float32)
    out = (v - mean) / std
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def _affine_resample(pix, inv_map):
    h, w = pix.shape[:2]
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sy, sx = inv_map(yy, xx)
    out = _sample_bilinear(pix.astype(np.float64), sy, sx)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def augment(img, cfg, rng):
    """Seeded flip -> rotate -> zoom -> brightness, all with edge-clamp fill."""
    pix = img.pixels
    h, w = pix.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    do_flip = rng.random() < cfg.flip_prob
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    zoom = rng.uniform(cfg.zoom_range[0], cfg.zoom_range[1])
    bright = rng.uniform(1.0 - cfg.brightness_delta, 1.0 + cfg.brightness_delta)

    if do_flip:
        pix = pix[:, ::-1, :]
    if angle != 0.0:
        rad = np.deg2rad(angle)
        c, s = np.cos(rad), np.sin(rad)

        def rot(yy, xx):
            dy, dx = yy - cy, xx - cx
            return cy + c * dy - s * dx, cx + s * dy + c * dx

        pix = _affine_resample(pix, rot)
    if zoom != 1.0:
        def zm(yy, xx):
            return cy + (yy - cy) / zoom, cx + (xx - cx) / zoom

        pix = _affine_resample(pix, zm)
    if bright != 1.0:
        pix = np.clip(np.rint(pix.astype(np.float64) * bright), 0, 255).astype(np.uint8)
    return ImageBuffer(np.ascontiguousarray(pix))


def sample_rng(seed, sample_index, epoch):
    """Per-sample generator; independent of evaluation order."""
    return np.random.default_rng([seed, epoch, sample_index])


def load_sample(sample, cfg, train=False, epoch=0, sample_index=0):
    """Full per-file pipeline: decode -> resize -> (augment) -> normalize."""
    try:
        raw = Path(sample.path).read_bytes()
        img = decode_image(raw)
    except (OSError, DecodeError, UnsupportedImageFormat) as e:
        raise DatasetError(f"failed to load {sample.path}: {e}") from e
    img = resize_bilinear(img, cfg.target_size, cfg.target_size)
    if train:
        img = augment(img, cfg, sample_rng(cfg.seed, sample_index, epoch))
    return normalize(img, cfg)


def make_batches(manifest, split, cfg, batch_size=32, shuffle=False, train=False,
                 epoch=0, samples=None):
    """Materialize (images, labels) tensor batches for one split."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if samples is None:
        samples = manifest.splits[split]
    order = np.arange(len(samples))
    if shuffle:
        np.random.default_rng([cfg.seed, epoch]).shuffle(order)
    batches = []
    for start in range(0, len(samples), batch_size):
        idx = order[start : start + batch_size]
        imgs = np.stack(
            [load_sample(samples[i], cfg, train=train, epoch=epoch, sample_index=int(i))
             for i in idx]
        )
        labels = np.array([samples[i].label for i in idx], dtype=np.float32)
        batches.append((Tensor(imgs), Tensor(labels)))
    return batches


def write_manifest_json(manifest, path, list_files=False):
    with open(path, "w") as f:
        json.dump(manifest_summary(manifest, list_files), f, indent=2, sort_keys=True)
        f.write("\n")
