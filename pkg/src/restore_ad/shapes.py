"""Synthetic stand-in for radiograph datasets.

Every image shares one smooth "anatomy" (two dark lung-like fields on a
brighter body with a vertical gradient) plus mild per-image noise. Abnormal
images additionally carry one to three bright elliptical blobs.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import ImageRecord, denormalize, write_manifest

NOISE_STD = 0.03
BLOB_GAIN = (0.6, 0.9)


def background(size: int) -> np.ndarray:
    """The shared anatomy in normalized units, roughly within [-0.7, 0.2]."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    body = 0.15 - 0.25 * yy
    for cx in (0.3, 0.7):
        field_ = ((xx - cx) / 0.17) ** 2 + ((yy - 0.5) / 0.32) ** 2
        body = body - 0.55 * np.exp(-field_ ** 2)
    spine = np.exp(-((xx - 0.5) / 0.04) ** 2) * 0.1
    return (body + spine).astype(np.float64)


def _ellipse_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    ry, rx = rng.uniform(0.05, 0.12, size=2) * size
    cy, cx = rng.uniform(0.2, 0.8, size=2) * size
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def render_sample(size: int, abnormal: bool, rng: np.random.Generator):
    """Return ``(image, clean, blob_mask)``; ``clean`` is the image without blobs."""
    clean = background(size) + rng.normal(0.0, NOISE_STD, (size, size))
    img = clean.copy()
    mask = np.zeros((size, size), dtype=bool)
    if abnormal:
        for _ in range(int(rng.integers(1, 4))):
            m = _ellipse_mask(size, rng)
            img[m] += rng.uniform(*BLOB_GAIN)
            mask |= m
    return np.clip(img, -1, 1), np.clip(clean, -1, 1), mask


@dataclass(frozen=True)
class SyntheticSpec:
    n_normal: int = 400
    n_abnormal: int = 250
    size: int = 64
    seed: int = 0
    n_train_normal: int = 200
    n_test_normal: int = 100
    n_test_abnormal: int = 100

    def __post_init__(self):
        if self.n_train_normal + self.n_test_normal > self.n_normal:
            raise ValueError("n_train_normal + n_test_normal exceeds n_normal")
        if self.n_test_abnormal > self.n_abnormal:
            raise ValueError("n_test_abnormal exceeds n_abnormal")
        if self.size < 8:
            raise ValueError("size must be >= 8")


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(denormalize(img, 255.0)), 0, 255).astype(np.uint8)


def make_synthetic(spec: SyntheticSpec, out: str | Path) -> list[ImageRecord]:
    """Write images and ``manifest.csv`` under ``out``; returns the records."""
    out = Path(out)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    records = []
    for i in range(spec.n_normal):
        img, _, _ = render_sample(spec.size, False, rng)
        rid = f"n{i:05d}"
        Image.fromarray(_to_uint8(img), mode="L").save(img_dir / f"{rid}.png")
        if i < spec.n_train_normal:
            split = "normal_train"
        elif i < spec.n_train_normal + spec.n_test_normal:
            split = "test"
        else:
            split = "unlabeled_pool"
        records.append(ImageRecord(rid, f"images/{rid}.png", "normal", split))
    for i in range(spec.n_abnormal):
        img, _, _ = render_sample(spec.size, True, rng)
        rid = f"a{i:05d}"
        Image.fromarray(_to_uint8(img), mode="L").save(img_dir / f"{rid}.png")
        split = "test" if i < spec.n_test_abnormal else "unlabeled_pool"
        records.append(ImageRecord(rid, f"images/{rid}.png", "abnormal", split))
    write_manifest(records, out / "manifest.csv")
    return records
