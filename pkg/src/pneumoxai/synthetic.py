"""Planted-signal synthetic dataset generator.

Positive images carry a bright Gaussian blob whose center is confined to
one declared quadrant; negatives are background noise only. The ground
truth file maps every positive image to its blob center, which gives
saliency methods a checkable localization target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ImageBuffer, encode_png
from .errors import ConfigError

QUADRANTS = ("top-left", "top-right", "bottom-left", "bottom-right")


@dataclass
class SyntheticSpec:
    image_size: int = 64
    counts: dict = field(default_factory=lambda: {"train": 600, "val": 64, "test": 80})
    quadrant: str = "top-left"
    amplitude_range: tuple = (150.0, 200.0)
    sigma_range: tuple = (6.0, 10.0)
    background_level: float = 30.0
    noise_level: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.quadrant not in QUADRANTS:
            raise ConfigError(f"quadrant must be one of {QUADRANTS}")
        if any(n < 2 or n % 2 for n in self.counts.values()):
            raise ConfigError("per-split counts must be even (balanced classes)")


def quadrant_bounds(spec):
    """(y0, y1, x0, x1) half-open pixel bounds of the declared quadrant."""
    s = spec.image_size
    half = s // 2
    y0 = 0 if "top" in spec.quadrant else half
    x0 = 0 if "left" in spec.quadrant else half
    return y0, y0 + half, x0, x0 + half


def _render(spec, rng, positive):
    s = spec.image_size
    img = spec.background_level + spec.noise_level * rng.standard_normal((s, s))
    center = None
    if positive:
        y0, y1, x0, x1 = quadrant_bounds(spec)
        margin = s // 8
        cy = rng.uniform(y0 + margin, y1 - margin)
        cx = rng.uniform(x0 + margin, x1 - margin)
        amp = rng.uniform(*spec.amplitude_range)
        sigma = rng.uniform(*spec.sigma_range)
        yy, xx = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        center = (float(cy), float(cx))
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)[:, :, None]
    return ImageBuffer(pixels), center


def generate_dataset(spec, out_dir):
    """Write the split/class PNG tree plus ground_truth.json; returns counts."""
    out = Path(out_dir)
    truth = {}
    written = {}
    for si, (split, count) in enumerate(sorted(spec.counts.items())):
        per_class = count // 2
        for label, cls in ((0, "NORMAL"), (1, "PNEUMONIA")):
            d = out / split / cls
            d.mkdir(parents=True, exist_ok=True)
            for i in range(per_class):
                rng = np.random.default_rng([spec.seed, si, label, i])
                img, center = _render(spec, rng, positive=label == 1)
                rel = f"{split}/{cls}/{cls.lower()}_{i:04d}.png"
                (out / rel).write_bytes(encode_png(img))
                if center is not None:
                    truth[rel] = {"center": list(center)}
        written[split] = count
    doc = {
        "quadrant": spec.quadrant,
        "image_size": spec.image_size,
        "positives": truth,
    }
    with open(out / "ground_truth.json", "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return written
