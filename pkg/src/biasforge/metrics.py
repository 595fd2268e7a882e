"""PSNR and SSIM in UNIT ([0,1], L=1) space, with per-category aggregation.

SSIM follows the standard recipe: grayscale-first, 11x11 Gaussian window with
sigma 1.5, C1 = (0.01 L)^2, C2 = (0.03 L)^2, and valid-region windowing (the
SSIM map has size (H-w+1) x (W-w+1); no padding). Aggregation reports
population mean/std per (category, metric), excluding infinite PSNR values
with an explicit count.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, RangeTagError, ShapeError
from .imagecore import Image, RangeTag, to_grayscale

CATEGORIES = ("skin", "eyeglasses", "enhanced")

C1 = (0.01 * 1.0) ** 2
C2 = (0.03 * 1.0) ** 2


def _check_pair(a: Image, b: Image) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    if a.range_tag is not RangeTag.UNIT or b.range_tag is not RangeTag.UNIT:
        raise RangeTagError("metrics are defined on UNIT-range images")


def mse(a: Image, b: Image) -> float:
    """Mean squared error over all pixels and channels."""
    _check_pair(a, b)
    d = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    return float(np.mean(d * d))


def psnr(a: Image, b: Image) -> float:
    """10 log10(1 / MSE) in dB; math.inf for identical images."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / m)


def gaussian_window(window: int = 11, sigma: float = 1.5) -> np.ndarray:
    """1-D Gaussian kernel of given length, normalized to sum 1."""
    x = np.arange(window, dtype=np.float64) - (window - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _valid_corr_sep(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Valid-mode correlation with the separable kernel outer(g, g)."""
    w = g.shape[0]
    x = np.einsum("ijk,k->ij", sliding_window_view(x, w, axis=1), g)
    return np.einsum("ijk,k->ij", sliding_window_view(x, w, axis=0), g)


def ssim(a: Image, b: Image, window: int = 11, sigma: float = 1.5) -> float:
    """Mean of the Gaussian-weighted SSIM map over valid windows."""
    _check_pair(a, b)
    if a.channels == 3:
        a, b = to_grayscale(a), to_grayscale(b)
    if a.height < window or a.width < window:
        raise ShapeError(
            f"image {a.height}x{a.width} smaller than SSIM window {window}"
        )
    g = gaussian_window(window, sigma)
    x = a.pixels[:, :, 0].astype(np.float64)
    y = b.pixels[:, :, 0].astype(np.float64)
    mu_x = _valid_corr_sep(x, g)
    mu_y = _valid_corr_sep(y, g)
    var_x = _valid_corr_sep(x * x, g) - mu_x * mu_x
    var_y = _valid_corr_sep(y * y, g) - mu_y * mu_y
    cov = _valid_corr_sep(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + C1) * (2.0 * cov + C2)
    den = (mu_x * mu_x + mu_y * mu_y + C1) * (var_x + var_y + C2)
    return float(np.mean(num / den))


@dataclass
class CategoryStats:
    category: str
    metric: str  # "psnr" or "ssim"
    mean: float
    std: float  # population standard deviation
    count: int
    excluded_infinite: int


@dataclass
class MetricsReport:
    entries: list[CategoryStats] = field(default_factory=list)

    def lookup(self, category: str, metric: str) -> CategoryStats:
        for e in self.entries:
            if e.category == category and e.metric == metric:
                return e
        raise KeyError((category, metric))


def aggregate(pairs) -> MetricsReport:
    """Per-category mean/std of PSNR and SSIM over (generated, reference) pairs.

    pairs: iterable of (generated: Image, reference: Image, category: str).
    Infinite PSNR values (identical images) are excluded from the statistics
    and counted in excluded_infinite.
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("aggregate requires at least one image pair")
    by_cat: dict[str, dict[str, list[float]]] = {}
    infinite: dict[str, int] = {}
    for gen, ref, category in pairs:
        bucket = by_cat.setdefault(category, {"psnr": [], "ssim": []})
        p = psnr(gen, ref)
        if math.isfinite(p):
            bucket["psnr"].append(p)
        else:
            infinite[category] = infinite.get(category, 0) + 1
        bucket["ssim"].append(ssim(gen, ref))
    entries = []
    for category in sorted(by_cat):
        for metric in ("psnr", "ssim"):
            vals = by_cat[category][metric]
            excl = infinite.get(category, 0) if metric == "psnr" else 0
            if vals:
                mean, std = float(np.mean(vals)), float(np.std(vals))
            else:
                mean, std = math.nan, math.nan
            entries.append(CategoryStats(category, metric, mean, std, len(vals), excl))
    entries.sort(key=lambda e: (e.metric, e.category))
    return MetricsReport(entries)


CSV_HEADER = "category,metric,mean,std,count,excluded_infinite"


def write_report_csv(report: MetricsReport, path) -> None:
    """Serialize a report; rows sorted by (metric, category), 6-decimal fixed.

    Empty-category means/stds (count 0) serialize as "nan".
    """
    rows = sorted(report.entries, key=lambda e: (e.metric, e.category))
    lines = [CSV_HEADER]
    for e in rows:
        lines.append(
            f"{e.category},{e.metric},{e.mean:.6f},{e.std:.6f},{e.count},{e.excluded_infinite}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report_csv(path) -> MetricsReport:
    """Parse a CSV produced by write_report_csv."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header is None or ",".join(header) != CSV_HEADER:
        raise DataError(f"{path}: bad metrics CSV header")
    entries = []
    for row in reader:
        if len(row) != 6:
            raise DataError(f"{path}: expected 6 columns, got {len(row)}")
        entries.append(
            CategoryStats(row[0], row[1], float(row[2]), float(row[3]), int(row[4]), int(row[5]))
        )
    return MetricsReport(entries)
