"""Dataset bias detection: attribute frequencies, skin-tone histogram, and the
combined report that drives the synthesis stages.

Skin tone is proxied by the mean Rec.601 lightness of each image's central
crop, binned into 8 equal bins over [0, 1]. Feature embedding is an interface
with a deterministic stub (mean RGB of four quadrants); pretrained networks
are an extension point, not a dependency.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ImageFileMissing, ShapeError
from .imagecore import Image, load_image, to_grayscale

TONE_BINS = 8
DEFAULT_THRESHOLD = 0.2


@dataclass
class AttributeStats:
    attribute_names: list[str]
    positive_counts: np.ndarray  # (A,) int64
    total: int

    @property
    def positive_rates(self) -> np.ndarray:
        return self.positive_counts / float(self.total)

    def rate(self, name: str) -> float:
        return float(self.positive_rates[self.attribute_names.index(name)])


def attribute_frequencies(manifest) -> AttributeStats:
    """Exact positive counts per attribute; errors on an empty manifest."""
    if len(manifest) < 1:
        raise DataError("manifest has no records")
    counts = np.sum(manifest.values == 1, axis=0).astype(np.int64)
    return AttributeStats(list(manifest.attribute_names), counts, len(manifest))


def flag_underrepresented(stats: AttributeStats, threshold: float) -> list[str]:
    """Attribute names with positive rate strictly below threshold,
    sorted ascending by (rate, name)."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    rates = stats.positive_rates
    flagged = [(float(rates[i]), n) for i, n in enumerate(stats.attribute_names) if rates[i] < threshold]
    flagged.sort()
    return [name for _, name in flagged]


def _center_lightness(img: Image, face_region: float) -> float:
    h, w = img.height, img.width
    ch = max(1, int(round(face_region * h)))
    cw = max(1, int(round(face_region * w)))
    top, left = (h - ch) // 2, (w - cw) // 2
    crop = Image(img.pixels[top : top + ch, left : left + cw], img.range_tag)
    return float(np.mean(to_grayscale(crop).pixels))


def tone_histogram(images, face_region: float = 0.5) -> np.ndarray:
    """Histogram (8 equal bins over [0,1]) of central-crop mean lightness."""
    images = list(images)
    if not images:
        raise DataError("tone_histogram requires at least one image")
    hist = np.zeros(TONE_BINS, dtype=np.float64)
    for img in images:
        if img.channels != 3:
            raise ShapeError("tone_histogram expects 3-channel images")
        lightness = _center_lightness(img, face_region)
        hist[min(int(lightness * TONE_BINS), TONE_BINS - 1)] += 1.0
    return hist / hist.sum()


class FeatureExtractor(abc.ABC):
    """Fixed-dimension image embedding; implementations must be deterministic."""

    @property
    @abc.abstractmethod
    def dim(self) -> int: ...

    @abc.abstractmethod
    def embed(self, img: Image) -> np.ndarray: ...


class QuadrantMeanExtractor(FeatureExtractor):
    """d=12 embedding: mean RGB of the four image quadrants, order
    [top-left, top-right, bottom-left, bottom-right] x (R, G, B)."""

    @property
    def dim(self) -> int:
        return 12

    def embed(self, img: Image) -> np.ndarray:
        if img.channels != 3:
            raise ShapeError("QuadrantMeanExtractor expects 3-channel images")
        px = img.pixels.astype(np.float64)
        h, w = img.height, img.width
        rows = ((0, (h + 1) // 2), (h // 2, h))
        cols = ((0, (w + 1) // 2), (w // 2, w))
        parts = []
        for r0, r1 in rows:
            for c0, c1 in cols:
                parts.append(px[r0:r1, c0:c1].mean(axis=(0, 1)))
        return np.concatenate(parts)


def stub_extractor() -> FeatureExtractor:
    """Deterministic stand-in for a pretrained embedding network."""
    return QuadrantMeanExtractor()


@dataclass
class BiasReport:
    stats: AttributeStats
    flagged_attributes: list[tuple[str, float]]
    tone_hist: np.ndarray  # (8,) masses summing to 1
    flagged_tone_bins: list[int]
    threshold: float


def analyze_dataset(manifest, image_root, threshold: float = DEFAULT_THRESHOLD) -> BiasReport:
    """Combine attribute-frequency flags and tone-bin flags into one report."""
    stats = attribute_frequencies(manifest)
    flagged_names = flag_underrepresented(stats, threshold)
    flagged = [(n, stats.rate(n)) for n in flagged_names]
    root = Path(image_root)
    images = []
    for image_id in manifest.ids:
        path = root / image_id
        try:
            img = load_image(path)
        except ImageFileMissing:
            raise DataError(f"cannot resolve image id {image_id!r} under {root}") from None
        if img.channels == 1:
            img = Image(np.repeat(img.pixels, 3, axis=2), img.range_tag)
        images.append(img)
    hist = tone_histogram(images)
    flagged_bins = [i for i in range(TONE_BINS) if hist[i] < threshold]
    return BiasReport(stats, flagged, hist, flagged_bins, threshold)


def write_bias_report_text(report: BiasReport, path) -> None:
    """Line-oriented `key = value` serialization of a BiasReport."""
    lines = [
        f"threshold = {report.threshold:.6f}",
        f"total_records = {report.stats.total}",
        "flagged_attributes = " + ",".join(n for n, _ in report.flagged_attributes),
    ]
    for i, mass in enumerate(report.tone_hist):
        lines.append(f"tone_bin_{i} = {mass:.6f}")
    lines.append("flagged_tone_bins = " + ",".join(str(i) for i in report.flagged_tone_bins))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_bias_report_flags(path) -> list[str]:
    """Flagged attribute names from a report written by write_bias_report_text."""
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("flagged_attributes = "):
            value = line[len("flagged_attributes = "):].strip()
            return [n for n in value.split(",") if n]
    raise DataError(f"{path}: no flagged_attributes line")


def write_attribute_csv(stats: AttributeStats, path) -> None:
    """Per-attribute rate CSV: attribute,positive_count,total,rate."""
    lines = ["attribute,positive_count,total,rate"]
    rates = stats.positive_rates
    for i, name in enumerate(stats.attribute_names):
        lines.append(f"{name},{int(stats.positive_counts[i])},{stats.total},{rates[i]:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
