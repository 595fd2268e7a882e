"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from biasforge.dataset import (
    SyntheticFaceSpec,
    composite_glasses,
    generate_synthetic_face,
)
from biasforge.imagecore import Image, RangeTag, save_image


def make_face(index: int, size: int = 16, glasses: bool = False,
              noise: float = 0.02) -> Image:
    """Synthetic face with a skin tone that varies by index.

    Tones sweep a light-to-dark ramp over 8 steps so that tone histograms
    built from small fixtures are not degenerate.
    """
    step = (index % 8) / 7.0
    spec = SyntheticFaceSpec(
        skin_rgb=(0.5 + 0.35 * step, 0.42 + 0.2 * step, 0.35 + 0.15 * step),
        noise_sigma=noise,
        seed=index,
    )
    face = generate_synthetic_face(spec, size, size)
    if glasses:
        face = composite_glasses(face, seed=1000 + index)
    return face


def build_dataset(root: Path, n: int = 10, size: int = 16,
                  glasses_positive: int = 2, smiling_positive: int = 5,
                  manifest_name: str = "attrs.txt") -> Path:
    """Write n synthetic face PNGs plus a two-attribute manifest.

    The first glasses_positive images carry Eyeglasses = 1 (and are rendered
    with a glasses band); the first smiling_positive carry Smiling = 1.
    Returns the manifest path.
    """
    root.mkdir(parents=True, exist_ok=True)
    lines = [str(n), "Eyeglasses Smiling"]
    for i in range(n):
        name = f"face_{i:03d}.png"
        has_glasses = i < glasses_positive
        face = make_face(i, size=size, glasses=has_glasses)
        save_image(face, root / name)
        g = "1" if has_glasses else "-1"
        s = "1" if i < smiling_positive else "-1"
        lines.append(f"{name} {g} {s}")
    manifest = root / manifest_name
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def write_config(path: Path, **keys: object) -> Path:
    """Write a key = value config file from keyword arguments.

    Double underscores in keyword names become dots, so skin__z_dim=8
    produces the line "skin.z_dim = 8".
    """
    lines = []
    for key, value in keys.items():
        lines.append(f"{key.replace('__', '.')} = {value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def unit_image(arr: np.ndarray) -> Image:
    """Wrap a float array as a UNIT-range image."""
    return Image(np.asarray(arr, dtype=np.float32), RangeTag.UNIT)


def model_image(arr: np.ndarray) -> Image:
    """Wrap a float array as a MODEL-range image."""
    return Image(np.asarray(arr, dtype=np.float32), RangeTag.MODEL)
