"""Pseudo-anomalies by foreign patch interpolation.

A random axis-aligned rectangle of the source image is blended with the same
rectangle of a donor image: ``out = (1 - alpha) * source + alpha * donor``.
Everything outside the rectangle is copied from the source untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class SynthParams:
    patch_fraction_range: tuple[float, float] = (0.1, 0.4)
    alpha_range: tuple[float, float] = (0.2, 1.0)
    seed: int = 0

    def __post_init__(self):
        plo, phi = self.patch_fraction_range
        alo, ahi = self.alpha_range
        if not 0.0 < plo <= phi <= 1.0:
            raise ValueError(f"patch_fraction_range must satisfy 0 < lo <= hi <= 1, got {self.patch_fraction_range}")
        if not 0.0 <= alo <= ahi <= 1.0:
            raise ValueError(f"alpha_range must satisfy 0 <= lo <= hi <= 1, got {self.alpha_range}")


@dataclass
class PseudoAnomaly:
    image: torch.Tensor
    source_id: str
    mask: np.ndarray
    alpha: float


def _draw_rectangle(h: int, w: int, params: SynthParams, rng: np.random.Generator):
    lo, hi = params.patch_fraction_range
    while True:
        rh = int(round(rng.uniform(lo, hi) * h))
        rw = int(round(rng.uniform(lo, hi) * w))
        # degenerate after rounding: draw again
        if rh >= 1 and rw >= 1:
            break
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    return top, left, rh, rw


def synthesize_pseudo(source, donor, params: SynthParams, rng: np.random.Generator,
                      source_id: str = "", alpha: float | None = None) -> PseudoAnomaly:
    """Blend one random rectangle of ``donor`` into ``source`` (both ``(C, H, W)``)."""
    source = torch.as_tensor(source)
    donor = torch.as_tensor(donor, dtype=source.dtype)
    if source.shape != donor.shape:
        raise ValueError(f"source {tuple(source.shape)} and donor {tuple(donor.shape)} differ in shape")
    if source.dim() != 3:
        raise ValueError("expected a (C, H, W) image")
    _, h, w = source.shape
    top, left, rh, rw = _draw_rectangle(h, w, params, rng)
    a = float(rng.uniform(*params.alpha_range))
    if alpha is not None:
        a = float(alpha)
    out = source.clone()
    win = (slice(None), slice(top, top + rh), slice(left, left + rw))
    out[win] = (1.0 - a) * source[win] + a * donor[win]
    mask = np.zeros((h, w), dtype=bool)
    mask[top:top + rh, left:left + rw] = True
    return PseudoAnomaly(image=out, source_id=source_id, mask=mask, alpha=a)


def paired_batch(normals: torch.Tensor, params: SynthParams, rng: np.random.Generator):
    """Corrupt every image in a batch with a donor from the next index.

    Returns ``(pseudo, normals, masks)``; ``pseudo[i]`` derives from
    ``normals[i]``. A batch of one has no foreign donor, so alpha is forced to 0.
    """
    normals = torch.as_tensor(normals)
    b = normals.shape[0]
    if b == 0:
        raise ValueError("paired_batch needs a non-empty batch")
    pseudo, masks = [], []
    for i in range(b):
        j = (i + 1) % b
        p = synthesize_pseudo(normals[i], normals[j], params, rng,
                              alpha=0.0 if b == 1 else None)
        pseudo.append(p.image)
        masks.append(p.mask)
    return torch.stack(pseudo), normals, np.stack(masks)
