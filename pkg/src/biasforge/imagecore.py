"""Canonical image representation and geometric/range transforms.

Images are dense float32 rasters of shape (H, W, C) with C in {1, 3} and an
explicit value-range tag: UNIT for [0, 1] storage space (file I/O, metrics)
and MODEL for [-1, 1] model space (GAN inputs/outputs). All interpolation is
bilinear with half-pixel-center alignment and runs in float64 internally.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import (
    CorruptImageData,
    ImageFileMissing,
    RangeTagError,
    ShapeError,
    UnsupportedImageFormat,
)

_GRAY_WEIGHTS = (0.299, 0.587, 0.114)  # Rec.601 luma


class RangeTag(enum.Enum):
    UNIT = "unit"    # values in [0, 1]
    MODEL = "model"  # values in [-1, 1]

    @property
    def interval(self) -> tuple[float, float]:
        return (0.0, 1.0) if self is RangeTag.UNIT else (-1.0, 1.0)


@dataclass(frozen=True)
class Image:
    """An (H, W, C) float32 raster whose values live in range_tag.interval."""

    pixels: np.ndarray
    range_tag: RangeTag

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3:
            raise ShapeError(f"pixels must be (H, W, C), got shape {px.shape}")
        if px.shape[2] not in (1, 3):
            raise ShapeError(f"channels must be 1 or 3, got {px.shape[2]}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError(f"empty image: shape {px.shape}")
        if px.dtype != np.float32:
            object.__setattr__(self, "pixels", px.astype(np.float32))
            px = self.pixels
        lo, hi = self.range_tag.interval
        if not np.all(np.isfinite(px)):
            raise RangeTagError("pixel values must be finite")
        if px.min() < lo or px.max() > hi:
            raise RangeTagError(
                f"pixel values [{px.min()}, {px.max()}] outside "
                f"{self.range_tag.name} range [{lo}, {hi}]"
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def from_array(arr: np.ndarray, range_tag: RangeTag = RangeTag.UNIT) -> Image:
    """Wrap a (H, W), (H, W, 1), or (H, W, 3) array as an Image."""
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim == 2:
        a = a[:, :, None]
    return Image(a, range_tag)


def constant(h: int, w: int, rgb, range_tag: RangeTag = RangeTag.UNIT) -> Image:
    """Constant-color image; rgb is a scalar (1 channel) or length-3 sequence."""
    vals = np.atleast_1d(np.asarray(rgb, dtype=np.float32))
    px = np.broadcast_to(vals, (h, w, vals.shape[0])).copy()
    return Image(px, range_tag)


def load_image(path) -> Image:
    """Load an 8-bit PNG or JPEG into a UNIT-range image (values / 255)."""
    p = Path(path)
    if not p.is_file():
        raise ImageFileMissing(str(p))
    try:
        with PILImage.open(p) as im:
            if im.format not in ("PNG", "JPEG"):
                raise UnsupportedImageFormat(f"{p}: format {im.format}")
            if im.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise UnsupportedImageFormat(f"{p}: 16-bit/{im.mode} not supported")
            try:
                if im.mode != "L":
                    im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float32)
            except (OSError, SyntaxError) as exc:
                raise CorruptImageData(f"{p}: {exc}") from exc
    except UnidentifiedImageError as exc:
        raise UnsupportedImageFormat(f"{p}: not a PNG or JPEG") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return Image(arr / np.float32(255.0), RangeTag.UNIT)


def save_image(img: Image, path) -> None:
    """Write a UNIT-range image as an 8-bit PNG (round(x * 255))."""
    if img.range_tag is not RangeTag.UNIT:
        raise RangeTagError("save_image requires a UNIT-range image")
    arr = np.rint(img.pixels.astype(np.float64) * 255.0).astype(np.uint8)
    mode = "L" if img.channels == 1 else "RGB"
    pil = PILImage.fromarray(arr[:, :, 0] if mode == "L" else arr, mode=mode)
    pil.save(Path(path), format="PNG")


def to_model_range(img: Image) -> Image:
    """[0,1] -> [-1,1] via y = 2x - 1."""
    if img.range_tag is not RangeTag.UNIT:
        raise RangeTagError("to_model_range requires a UNIT-range image")
    return Image(img.pixels * np.float32(2.0) - np.float32(1.0), RangeTag.MODEL)


def from_model_range(img: Image) -> Image:
    """[-1,1] -> [0,1] via x = (y + 1) / 2."""
    if img.range_tag is not RangeTag.MODEL:
        raise RangeTagError("from_model_range requires a MODEL-range image")
    return Image((img.pixels + np.float32(1.0)) * np.float32(0.5), RangeTag.UNIT)


def _axis_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-center source coordinates: lower index, upper index, weight."""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    """Bilinear resize with half-pixel-center alignment; preserves range_tag."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be >= 1, got {out_h}x{out_w}")
    if (out_h, out_w) == (img.height, img.width):
        return Image(img.pixels.copy(), img.range_tag)
    px = img.pixels.astype(np.float64)
    r0, r1, tr = _axis_coords(out_h, img.height)
    c0, c1, tc = _axis_coords(out_w, img.width)
    top = px[r0][:, c0] * (1 - tc)[None, :, None] + px[r0][:, c1] * tc[None, :, None]
    bot = px[r1][:, c0] * (1 - tc)[None, :, None] + px[r1][:, c1] * tc[None, :, None]
    out = top * (1 - tr)[:, None, None] + bot * tr[:, None, None]
    return Image(out.astype(np.float32), img.range_tag)


def to_grayscale(img: Image) -> Image:
    """Rec.601 luma: y = 0.299 R + 0.587 G + 0.114 B."""
    if img.channels != 3:
        raise ShapeError(f"to_grayscale requires 3 channels, got {img.channels}")
    px = img.pixels.astype(np.float64)
    y = px[:, :, 0] * _GRAY_WEIGHTS[0] + px[:, :, 1] * _GRAY_WEIGHTS[1] + px[:, :, 2] * _GRAY_WEIGHTS[2]
    lo, hi = img.range_tag.interval
    return Image(np.clip(y, lo, hi).astype(np.float32)[:, :, None], img.range_tag)


def horizontal_flip(img: Image) -> Image:
    """Reverse column order."""
    return Image(np.ascontiguousarray(img.pixels[:, ::-1, :]), img.range_tag)


def _sample_bilinear_clamped(px: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) float64 px at fractional coords; out-of-bounds clamp to edge."""
    h, w = px.shape[:2]
    rows = np.clip(rows, 0.0, h - 1.0)
    cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    tr = (rows - r0)[..., None]
    tc = (cols - c0)[..., None]
    top = px[r0, c0] * (1 - tc) + px[r0, c1] * tc
    bot = px[r1, c0] * (1 - tc) + px[r1, c1] * tc
    return top * (1 - tr) + bot * tr


def rotate(img: Image, angle_deg: float) -> Image:
    """Rotate about the image center by |angle| <= 45 degrees.

    Bilinear sampling; samples falling outside the source take the nearest
    edge value. Output has the same dimensions as the input.
    """
    if abs(angle_deg) > 45.0:
        raise ValueError(f"|angle| must be <= 45 degrees, got {angle_deg}")
    if angle_deg == 0.0:
        return Image(img.pixels.copy(), img.range_tag)
    h, w = img.height, img.width
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    a = math.radians(angle_deg)
    cos_a, sin_a = math.cos(a), math.sin(a)
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dr, dc = rr - cy, cc - cx
    src_r = cy + cos_a * dr - sin_a * dc
    src_c = cx + sin_a * dr + cos_a * dc
    out = _sample_bilinear_clamped(img.pixels.astype(np.float64), src_r, src_c)
    return Image(out.astype(np.float32), img.range_tag)
