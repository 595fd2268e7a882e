"""Bridges between the Image type and torch batches.

Model code works on (B, C, H, W) float tensors in MODEL ([-1, 1]) range;
everything else in the package works on UNIT-range Images.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ShapeError
from .imagecore import Image, RangeTag


def images_to_batch(images, dtype=torch.float32) -> torch.Tensor:
    """Stack Images into a MODEL-range (B, C, H, W) tensor."""
    images = list(images)
    if not images:
        raise ShapeError("empty image list")
    shape = images[0].pixels.shape
    arrs = []
    for img in images:
        if img.pixels.shape != shape:
            raise ShapeError(f"inconsistent image shapes: {img.pixels.shape} vs {shape}")
        px = img.pixels.astype(np.float32)
        if img.range_tag is RangeTag.UNIT:
            px = px * np.float32(2.0) - np.float32(1.0)
        arrs.append(np.transpose(px, (2, 0, 1)))
    return torch.from_numpy(np.stack(arrs)).to(dtype)


def batch_to_unit_images(batch: torch.Tensor) -> list[Image]:
    """Convert a MODEL-range (B, C, H, W) tensor back to UNIT-range Images."""
    if batch.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W), got shape {tuple(batch.shape)}")
    arr = batch.detach().to(torch.float64).clamp(-1.0, 1.0).numpy()
    out = []
    for sample in arr:
        px = ((np.transpose(sample, (1, 2, 0)) + 1.0) * 0.5).astype(np.float32)
        out.append(Image(np.clip(px, 0.0, 1.0), RangeTag.UNIT))
    return out


def seeded_generator(seed: int) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(int(seed) & 0x7FFF_FFFF_FFFF_FFFF)
    return gen
