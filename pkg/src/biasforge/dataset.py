"""CelebA-format ingestion, deterministic splitting, augmentation, and
desk-scale synthetic fixtures.

The synthetic faces are geometric primitives (background, skin disc, eye
discs, optional glasses rectangles): enough to exercise skin-color change,
glasses occlusion, and identity checks without real data. All randomness is
driven by explicit seeds through PCG64, so every output is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ManifestFormatError, RangeTagError, ShapeError
from .imagecore import Image, RangeTag, horizontal_flip, rotate

EYE_GRAY = 0.10
GLASS_GRAY = 0.07


@dataclass
class AttributeManifest:
    """Ordered per-image +/-1 labels over named binary attributes."""

    attribute_names: list[str]
    ids: list[str]
    values: np.ndarray  # (N, A) int8, entries in {-1, +1}

    def __len__(self) -> int:
        return len(self.ids)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.attribute_names.index(name)]


def parse_attribute_manifest(text) -> AttributeManifest:
    """Parse CelebA `list_attr` text: count line, names line, one line per image.

    Accepts str or UTF-8 bytes. Raises ManifestFormatError with the offending
    line number on count mismatch, wrong column count, or non-+/-1 values.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ManifestFormatError("empty manifest", line=1)
    try:
        declared = int(lines[0].strip())
    except ValueError:
        raise ManifestFormatError(f"record count expected, got {lines[0]!r}", line=1) from None
    if declared < 0:
        raise ManifestFormatError(f"negative record count {declared}", line=1)
    if len(lines) < 2:
        raise ManifestFormatError("missing attribute-name line", line=2)
    names = lines[1].split()
    if not names:
        raise ManifestFormatError("no attribute names", line=2)
    if len(set(names)) != len(names):
        raise ManifestFormatError("duplicate attribute names", line=2)
    record_lines = lines[2:]
    if len(record_lines) != declared:
        raise ManifestFormatError(
            f"declared {declared} records but found {len(record_lines)}", line=1
        )
    ids: list[str] = []
    values = np.empty((declared, len(names)), dtype=np.int8)
    for i, raw in enumerate(record_lines):
        lineno = i + 3
        fields = raw.split()
        if len(fields) != len(names) + 1:
            raise ManifestFormatError(
                f"expected id + {len(names)} values, got {len(fields)} fields", line=lineno
            )
        ids.append(fields[0])
        for j, tok in enumerate(fields[1:]):
            if tok == "1":
                values[i, j] = 1
            elif tok == "-1":
                values[i, j] = -1
            else:
                raise ManifestFormatError(f"value {tok!r} is not +1 or -1", line=lineno)
    return AttributeManifest(names, ids, values)


def serialize_attribute_manifest(m: AttributeManifest) -> str:
    """Inverse of parse_attribute_manifest (canonical single-space separators)."""
    lines = [str(len(m.ids)), " ".join(m.attribute_names)]
    for i, image_id in enumerate(m.ids):
        lines.append(image_id + " " + " ".join(str(int(v)) for v in m.values[i]))
    return "\n".join(lines) + "\n"


@dataclass
class SplitSpec:
    train_ids: list[str]
    eval_ids: list[str]
    test_ids: list[str]
    seed: int


def split_dataset(m: AttributeManifest, seed: int) -> SplitSpec:
    """Seeded shuffle, then partition into floor(0.7 N) / floor(0.1 N) / rest."""
    n = len(m)
    if n < 1:
        raise DataError("cannot split an empty manifest")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    shuffled = [m.ids[i] for i in order]
    n_train = (7 * n) // 10
    n_eval = n // 10
    return SplitSpec(
        train_ids=shuffled[:n_train],
        eval_ids=shuffled[n_train : n_train + n_eval],
        test_ids=shuffled[n_train + n_eval :],
        seed=seed,
    )


@dataclass
class AugmentConfig:
    p_flip: float = 0.5
    max_angle_deg: float = 10.0


def augment(img: Image, seed: int, policy: AugmentConfig | None = None) -> Image:
    """Random horizontal flip then random rotation, deterministic per seed."""
    if img.range_tag is not RangeTag.UNIT:
        raise RangeTagError("augment expects a UNIT-range image")
    policy = policy or AugmentConfig()
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random()
    angle = rng.uniform(-policy.max_angle_deg, policy.max_angle_deg)
    out = horizontal_flip(img) if u < policy.p_flip else img
    if policy.max_angle_deg > 0.0:
        out = rotate(out, angle)
    elif out is img:
        out = Image(img.pixels.copy(), img.range_tag)
    return out


@dataclass
class SyntheticFaceSpec:
    skin_rgb: tuple[float, float, float] = (0.85, 0.65, 0.55)
    has_glasses: bool = False
    face_radius_frac: float = 0.4
    eye_offset_frac: float = 0.35
    background_rgb: tuple[float, float, float] = (0.92, 0.93, 0.95)
    noise_sigma: float = 0.0
    seed: int = 0


def _validate_face_spec(spec: SyntheticFaceSpec) -> None:
    if not (0.0 < spec.face_radius_frac <= 0.5):
        raise ValueError(f"face_radius_frac must be in (0, 0.5], got {spec.face_radius_frac}")
    if not (0.0 < spec.eye_offset_frac < 1.0):
        raise ValueError(f"eye_offset_frac must be in (0, 1), got {spec.eye_offset_frac}")
    for name, rgb in ("skin_rgb", spec.skin_rgb), ("background_rgb", spec.background_rgb):
        if min(rgb) < 0.0 or max(rgb) > 1.0:
            raise ValueError(f"{name} must be within [0, 1], got {rgb}")
    if spec.noise_sigma < 0.0:
        raise ValueError(f"noise_sigma must be >= 0, got {spec.noise_sigma}")


def _face_geometry(spec: SyntheticFaceSpec, h: int, w: int):
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    radius = spec.face_radius_frac * min(h, w)
    eye_dy = spec.eye_offset_frac * radius
    eye_r = 0.15 * radius
    eyes = [(cy - eye_dy, cx - eye_dy, eye_r), (cy - eye_dy, cx + eye_dy, eye_r)]
    return cy, cx, radius, eyes


def glasses_boxes(spec: SyntheticFaceSpec, h: int, w: int) -> list[tuple[int, int, int, int]]:
    """Half-open (r0, r1, c0, c1) pixel boxes for the two lenses and the bridge."""
    cy, cx, radius, eyes = _face_geometry(spec, h, w)
    boxes = []
    hh, hw = 0.22 * radius, 0.28 * radius
    for ey, ex, _ in eyes:
        boxes.append((
            max(0, int(np.floor(ey - hh))), min(h, int(np.ceil(ey + hh))),
            max(0, int(np.floor(ex - hw))), min(w, int(np.ceil(ex + hw))),
        ))
    ey = eyes[0][0]
    boxes.append((
        max(0, int(np.floor(ey - 0.06 * radius))), min(h, int(np.ceil(ey + 0.06 * radius))),
        max(0, int(np.floor(eyes[0][1]))), min(w, int(np.ceil(eyes[1][1]))),
    ))
    return boxes


def generate_synthetic_face(spec: SyntheticFaceSpec, h: int, w: int) -> Image:
    """Deterministic cartoon face: background, skin disc, eyes, optional glasses."""
    if h < 16 or w < 16:
        raise DataError(f"{h}x{w} too small to place face features (minimum 16x16)")
    _validate_face_spec(spec)
    cy, cx, radius, eyes = _face_geometry(spec, h, w)
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    px = np.empty((h, w, 3), dtype=np.float64)
    px[:] = np.asarray(spec.background_rgb, dtype=np.float64)
    face = (rr - cy) ** 2 + (cc - cx) ** 2 <= radius**2
    px[face] = np.asarray(spec.skin_rgb, dtype=np.float64)
    for ey, ex, er in eyes:
        px[(rr - ey) ** 2 + (cc - ex) ** 2 <= er**2] = EYE_GRAY
    if spec.has_glasses:
        for r0, r1, c0, c1 in glasses_boxes(spec, h, w):
            px[r0:r1, c0:c1] = GLASS_GRAY
    if spec.noise_sigma > 0.0:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        px = np.clip(px + rng.normal(0.0, spec.noise_sigma, size=px.shape), 0.0, 1.0)
    return Image(px.astype(np.float32), RangeTag.UNIT)


def eye_band_rows(h: int) -> tuple[int, int]:
    """Half-open row interval [0.30 H, 0.55 H) used by composite_glasses."""
    return int(np.floor(0.30 * h)), int(np.floor(0.55 * h))


def composite_glasses(img: Image, seed: int, alpha: float = 0.85) -> Image:
    """Alpha-blend a dark glasses overlay into the upper-center eye band.

    The (output, input) pair serves as (with-glasses, without-glasses)
    supervision for the eyeglasses-removal model. All modified pixels lie in
    rows [0.30 H, 0.55 H); alpha = 0 is the identity.
    """
    if img.range_tag is not RangeTag.UNIT:
        raise RangeTagError("composite_glasses expects a UNIT-range image")
    if img.channels != 3:
        raise ShapeError("composite_glasses expects a 3-channel image")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 0.0:
        return Image(img.pixels.copy(), img.range_tag)
    h, w = img.height, img.width
    r_lo, r_hi = eye_band_rows(h)
    if r_hi - r_lo < 1:
        return Image(img.pixels.copy(), img.range_tag)
    rng = np.random.Generator(np.random.PCG64(seed))
    gray = 0.04 + 0.06 * rng.random()
    band_c = (r_lo + r_hi) / 2.0
    band_h = r_hi - r_lo
    cx = (w - 1) / 2.0
    shapes = []
    lens_hh = max(0.5, 0.30 * band_h)
    for side in (-1.0, 1.0):
        ex = cx + side * 0.18 * w
        shapes.append((band_c - lens_hh, band_c + lens_hh, ex - 0.12 * w, ex + 0.12 * w))
    shapes.append((band_c - max(0.5, 0.06 * band_h), band_c + max(0.5, 0.06 * band_h),
                   cx - 0.18 * w, cx + 0.18 * w))
    out = img.pixels.astype(np.float64)
    for sr0, sr1, sc0, sc1 in shapes:
        r0 = max(r_lo, int(np.floor(sr0)))
        r1 = min(r_hi, int(np.ceil(sr1)))
        c0 = max(0, int(np.floor(sc0)))
        c1 = min(w, int(np.ceil(sc1)))
        if r1 > r0 and c1 > c0:
            out[r0:r1, c0:c1] = (1.0 - alpha) * out[r0:r1, c0:c1] + alpha * gray
    return Image(out.astype(np.float32), img.range_tag)
