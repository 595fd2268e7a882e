"""Image enhancement: preprocessing, double-tail generator, dual critics.

Preprocessing resizes to a square working size, smooths detected edges, and
simplifies color with SLIC-style superpixels. The generator has two tails: a
narrow support tail emits a coarse full-resolution image, and the main tail
refines the concatenation of that coarse output with the input. Every conv
is stride-1 with replicate padding, and normalization is LADE, whose
denormalizing affine parameters are linear in the feature map's own global
statistics. Two least-squares patch discriminators supervise training: D1 on
grayscale texture, D2 on the color frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from scipy.spatial.distance import cdist
from torch import nn

from .ergan import PatchDiscriminator
from .errors import NumericError, RangeTagError, ShapeError
from .imagecore import Image, RangeTag, resize_bilinear, to_grayscale, to_model_range
from .optim import AdamState, adam_update
from .tensorutil import batch_to_unit_images, images_to_batch, seeded_generator

_SAMPLER_SEED_SALT = 0x165667B19E3779F9
_SOBEL_NORM = 4.0 * math.sqrt(2.0)  # max response of the kernel pair on [0,1] data
_LUMA = (0.299, 0.587, 0.114)


@dataclass
class EnhanceConfig:
    work_size: int = 256
    superpixels: int = 256
    edge_threshold: float = 0.3
    blur_sigma: float = 1.0
    w_d1: float = 1.0
    w_d2: float = 1.0
    w_content: float = 10.0
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.superpixels < 1:
            raise ValueError("superpixels must be >= 1")
        if not (0.0 < self.edge_threshold < 1.0):
            raise ValueError("edge_threshold must lie in (0, 1)")
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be > 0")
        if self.work_size % 4 != 0 or self.work_size < 4:
            raise ValueError("work_size must be a positive multiple of 4")
        if min(self.w_d1, self.w_d2, self.w_content) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ValueError("learning rates must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def sobel_edges(img: Image) -> np.ndarray:
    """Gradient magnitude of a grayscale image, normalized to [0, 1].

    3x3 Sobel pair, replicate borders; sqrt(Gx^2 + Gy^2) / (4 sqrt 2).
    """
    if img.channels != 1:
        raise ShapeError(f"sobel_edges expects 1 channel, got {img.channels}")
    x = img.pixels[:, :, 0].astype(np.float64)
    p = np.pad(x, 1, mode="edge")
    kx = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    h, w = x.shape
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    for i in range(3):
        for j in range(3):
            win = p[i:i + h, j:j + w]
            gx += kx[i, j] * win
            gy += kx[j, i] * win
    mag = np.sqrt(gx**2 + gy**2) / _SOBEL_NORM
    return np.clip(mag, 0.0, 1.0).astype(np.float32)


def _gaussian_blur(px: np.ndarray, sigma: float) -> np.ndarray:
    """Separable 5x5 Gaussian with replicate borders; float64 in, float64 out."""
    d = np.arange(5, dtype=np.float64) - 2.0
    k = np.exp(-(d**2) / (2.0 * sigma**2))
    k /= k.sum()
    h, w = px.shape[:2]
    p = np.pad(px, ((2, 2), (0, 0), (0, 0)), mode="edge")
    rows = np.zeros_like(px)
    for i in range(5):
        rows += k[i] * p[i:i + h]
    p = np.pad(rows, ((0, 0), (2, 2), (0, 0)), mode="edge")
    out = np.zeros_like(px)
    for j in range(5):
        out += k[j] * p[:, j:j + w]
    return out


def edge_smooth(img: Image, t: float = 0.3, sigma: float = 1.0) -> Image:
    """Blur only around detected edges.

    Pixels whose grayscale Sobel magnitude exceeds t (strictly), dilated by a
    3x3 element, are replaced by a 5x5 Gaussian blur of the original; every
    other pixel is copied through bit-exactly.
    """
    if img.range_tag is not RangeTag.UNIT:
        raise RangeTagError("edge_smooth expects a UNIT-range image")
    gray = img if img.channels == 1 else to_grayscale(img)
    mask = sobel_edges(gray) > t
    if not mask.any():
        return Image(img.pixels.copy(), RangeTag.UNIT)
    dil = np.zeros_like(mask)
    h, w = mask.shape
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r0, r1 = max(dr, 0), min(h + dr, h)
            c0, c1 = max(dc, 0), min(w + dc, w)
            dil[r0:r1, c0:c1] |= mask[r0 - dr:r1 - dr, c0 - dc:c1 - dc]
    blurred = _gaussian_blur(img.pixels.astype(np.float64), sigma)
    blurred = np.clip(blurred, 0.0, 1.0).astype(np.float32)
    out = img.pixels.copy()
    out[dil] = blurred[dil]
    return Image(out, RangeTag.UNIT)


def _seed_grid(h: int, w: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """First k points of a near-square pixel grid, row-major. Rows and columns
    are distinct whenever the grid fits the image, so seeds never collide."""
    gr = min(h, max(1, int(round(math.sqrt(k * h / w)))))
    gc = math.ceil(k / gr)
    if gc > w:
        gc = w
        gr = math.ceil(k / gc)
    rows = np.floor((np.arange(gr) + 0.5) * h / gr).astype(np.int64)
    cols = np.floor((np.arange(gc) + 0.5) * w / gc).astype(np.int64)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return rr.ravel()[:k], cc.ravel()[:k]


def slic_superpixels(img: Image, k: int, iters: int = 10) -> tuple[np.ndarray, Image]:
    """Superpixel partition by k-means in (r, g, b, ax, ay) feature space.

    a scales pixel coordinates so color and space are balanced:
    a = sqrt(k / (h*w)) * 10/255. Seeds sit on a regular grid; the iteration
    count is fixed (no convergence test). Returns the (h, w) label map and
    the image recolored to per-superpixel mean colors.
    """
    if img.channels != 3:
        raise ShapeError(f"slic_superpixels expects 3 channels, got {img.channels}")
    if img.range_tag is not RangeTag.UNIT:
        raise RangeTagError("slic_superpixels expects a UNIT-range image")
    h, w = img.height, img.width
    n = h * w
    if not (1 <= k <= n):
        raise ValueError(f"superpixel count {k} must lie in [1, {n}]")
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    alpha = math.sqrt(k / n) * (10.0 / 255.0)
    feats = np.concatenate(
        [img.pixels.reshape(n, 3).astype(np.float64),
         (alpha * rr).reshape(n, 1), (alpha * cc).reshape(n, 1)],
        axis=1,
    )
    sr, sc = _seed_grid(h, w, k)
    centers = feats[sr * w + sc].copy()
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        labels = np.argmin(cdist(feats, centers, "sqeuclidean"), axis=1)
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        occupied = counts > 0
        for d in range(5):
            sums = np.bincount(labels, weights=feats[:, d], minlength=k)
            centers[occupied, d] = sums[occupied] / counts[occupied]
    mean_rgb = np.zeros((k, 3), dtype=np.float64)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    occupied = counts > 0
    for d in range(3):
        sums = np.bincount(labels, weights=feats[:, d], minlength=k)
        mean_rgb[occupied, d] = sums[occupied] / counts[occupied]
    recolored = mean_rgb[labels].reshape(h, w, 3)
    recolored = np.clip(recolored, 0.0, 1.0).astype(np.float32)
    return labels.reshape(h, w), Image(recolored, RangeTag.UNIT)


class Lade(nn.Module):
    """Linearly adaptive denormalization.

    The incoming map is instance-normalized, then rescaled by gamma and
    reshifted by beta, each a linear function of the map's own global
    per-channel statistics s = [mu; sigma]:

        out = gamma(s) * (f - mu) / sigma + beta(s)
        gamma(s) = W_g s + b_g,  beta(s) = W_b s + b_b

    Initialized to W = 0, b_g = 1, b_b = 0, i.e. plain instance norm.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.weight_gamma = nn.Parameter(torch.zeros(channels, 2 * channels))
        self.bias_gamma = nn.Parameter(torch.ones(channels))
        self.weight_beta = nn.Parameter(torch.zeros(channels, 2 * channels))
        self.bias_beta = nn.Parameter(torch.zeros(channels))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.ndim != 4 or f.shape[1] != self.channels:
            raise ShapeError(f"expected (B, {self.channels}, H, W), got {tuple(f.shape)}")
        mu = f.mean(dim=(2, 3))
        var = f.var(dim=(2, 3), unbiased=False)
        sigma = (var + 1e-5).sqrt()
        s = torch.cat([mu, sigma], dim=1)
        gamma = s @ self.weight_gamma.T + self.bias_gamma
        beta = s @ self.weight_beta.T + self.bias_beta
        norm = (f - mu[:, :, None, None]) / sigma[:, :, None, None]
        return gamma[:, :, None, None] * norm + beta[:, :, None, None]


def lade_forward(lade: Lade, f: torch.Tensor) -> torch.Tensor:
    return lade(f)


class _ConvBlock(nn.Module):
    """3x3 stride-1 conv with replicate padding + LADE + ReLU. Replicate
    padding keeps spatially constant inputs spatially constant."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=1, padding=1, padding_mode="replicate")
        self.lade = Lade(out_ch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.lade(self.conv(x)))


class EnhanceGenerator(nn.Module):
    """Double-tail generator. The support tail (3 blocks, reduced width)
    emits a coarse stylized image; the main tail (4 blocks) consumes
    [coarse || input] and emits the refined image. Both heads end in tanh."""

    def __init__(self, channels: int = 3, support_width: int = 32, main_width: int = 64):
        super().__init__()
        self.channels = channels
        self.support = nn.Sequential(
            _ConvBlock(channels, support_width),
            _ConvBlock(support_width, support_width),
            _ConvBlock(support_width, support_width),
        )
        self.coarse_head = nn.Conv2d(support_width, channels, 3, stride=1,
                                     padding=1, padding_mode="replicate")
        self.main = nn.Sequential(
            _ConvBlock(2 * channels, main_width),
            _ConvBlock(main_width, main_width),
            _ConvBlock(main_width, main_width),
            _ConvBlock(main_width, main_width),
        )
        self.refine_head = nn.Conv2d(main_width, channels, 3, stride=1,
                                     padding=1, padding_mode="replicate")

    def forward(self, x: torch.Tensor, zero_coarse: bool = False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"expected (B, {self.channels}, H, W), got {tuple(x.shape)}")
        if x.shape[2] % 4 != 0 or x.shape[3] % 4 != 0 or min(x.shape[2:]) < 4:
            raise ShapeError(f"spatial size must be a positive multiple of 4, got {tuple(x.shape[2:])}")
        coarse = torch.tanh(self.coarse_head(self.support(x)))
        c_in = torch.zeros_like(coarse) if zero_coarse else coarse
        refined = torch.tanh(self.refine_head(self.main(torch.cat([c_in, x], dim=1))))
        return coarse, refined


def enhance_forward(tails: EnhanceGenerator, img: Image) -> dict:
    """Single-image forward: MODEL-range Image in, {coarse, refined} out."""
    if img.range_tag is not RangeTag.MODEL:
        raise RangeTagError("enhance_forward expects a MODEL-range image")
    x = torch.from_numpy(np.ascontiguousarray(img.pixels.transpose(2, 0, 1)))[None]
    with torch.no_grad():
        coarse, refined = tails(x)
    def back(t: torch.Tensor) -> Image:
        arr = t[0].numpy().transpose(1, 2, 0).astype(np.float32)
        return Image(arr, RangeTag.MODEL)
    return {"coarse": back(coarse), "refined": back(refined)}


def model_luma(batch: torch.Tensor) -> torch.Tensor:
    """Rec.601 luma of a MODEL-range color batch -> (B, 1, H, W). The weights
    sum to 1, so the projection commutes with the affine range maps."""
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ShapeError(f"expected (B, 3, H, W), got {tuple(batch.shape)}")
    w = torch.tensor(_LUMA, dtype=batch.dtype, device=batch.device)
    return (batch * w.view(1, 3, 1, 1)).sum(dim=1, keepdim=True)


def d1_texture_scores(d1, batch: torch.Tensor) -> torch.Tensor:
    """Grayscale-texture patch scores: D1 sees only the luma channel."""
    return d1(model_luma(batch))


def d2_clarity_scores(d2, batch: torch.Tensor) -> torch.Tensor:
    """Frame-clarity patch scores on the color image."""
    return d2(batch)


def preprocess_image(cfg: EnhanceConfig, img: Image) -> Image:
    """Resize to the working square, smooth edges, simplify with superpixels."""
    work = resize_bilinear(img, cfg.work_size, cfg.work_size)
    work = edge_smooth(work, cfg.edge_threshold, cfg.blur_sigma)
    _, work = slic_superpixels(work, min(cfg.superpixels, cfg.work_size**2))
    return work


def enhance_image(cfg: EnhanceConfig, tails: EnhanceGenerator, img: Image) -> Image:
    """Pipeline entry: preprocess, run the tails, return the refined output
    resized back to the input dimensions in UNIT range."""
    if tails is None:
        raise ValueError("enhance_image requires generator parameters")
    if img.range_tag is not RangeTag.UNIT:
        raise RangeTagError("enhance_image expects a UNIT-range image")
    if img.channels != 3:
        raise ShapeError(f"enhance_image expects 3 channels, got {img.channels}")
    work = preprocess_image(cfg, img)
    x = images_to_batch([to_model_range(work)])
    with torch.no_grad():
        _, refined = tails(x)
    out = batch_to_unit_images(refined)[0]
    return resize_bilinear(out, img.height, img.width)


@dataclass
class EnhanceTrainState:
    cfg: EnhanceConfig
    tails: EnhanceGenerator
    d1: PatchDiscriminator
    d2: PatchDiscriminator
    adam_g: AdamState
    adam_d1: AdamState
    adam_d2: AdamState
    rng: torch.Generator
    sample_batch: Callable[[int, torch.Generator], torch.Tensor]
    steps: int = 0
    history: list[dict] = field(default_factory=list)


def init_enhance_state(
    cfg: EnhanceConfig,
    sample_batch: Callable[[int, torch.Generator], torch.Tensor],
    support_width: int = 32,
    main_width: int = 64,
) -> EnhanceTrainState:
    cfg.validate()
    torch.manual_seed(cfg.seed & 0x7FFF_FFFF_FFFF_FFFF)
    tails = EnhanceGenerator(support_width=support_width, main_width=main_width)
    d1 = PatchDiscriminator(in_channels=1)
    d2 = PatchDiscriminator(in_channels=3)
    return EnhanceTrainState(
        cfg=cfg,
        tails=tails,
        d1=d1,
        d2=d2,
        adam_g=AdamState.for_params(tails.parameters()),
        adam_d1=AdamState.for_params(d1.parameters()),
        adam_d2=AdamState.for_params(d2.parameters()),
        rng=seeded_generator(cfg.seed ^ _SAMPLER_SEED_SALT),
        sample_batch=sample_batch,
    )


def enhance_train_step(state: EnhanceTrainState) -> dict:
    """One update of each discriminator (skipped when its weight is zero)
    followed by one generator update on the weighted objective. A weight of
    zero removes its term entirely, so with all weights zero no parameter
    moves."""
    cfg = state.cfg
    x = state.sample_batch(cfg.batch_size, state.rng)
    coarse, refined = state.tails(x)
    loss_d1_val = 0.0
    loss_d2_val = 0.0
    if cfg.w_d1 > 0:
        fake = refined.detach()
        loss_d1 = (((d1_texture_scores(state.d1, x) - 1.0) ** 2).mean()
                   + (d1_texture_scores(state.d1, fake) ** 2).mean())
        if not torch.isfinite(loss_d1):
            raise NumericError(f"non-finite D1 loss at step {state.steps}")
        grads = torch.autograd.grad(loss_d1, list(state.d1.parameters()))
        adam_update(state.d1.parameters(), grads, state.adam_d1,
                    cfg.lr_discriminator, cfg.adam_beta1, cfg.adam_beta2)
        loss_d1_val = float(loss_d1.detach())
    if cfg.w_d2 > 0:
        fake = refined.detach()
        loss_d2 = (((d2_clarity_scores(state.d2, x) - 1.0) ** 2).mean()
                   + (d2_clarity_scores(state.d2, fake) ** 2).mean())
        if not torch.isfinite(loss_d2):
            raise NumericError(f"non-finite D2 loss at step {state.steps}")
        grads = torch.autograd.grad(loss_d2, list(state.d2.parameters()))
        adam_update(state.d2.parameters(), grads, state.adam_d2,
                    cfg.lr_discriminator, cfg.adam_beta1, cfg.adam_beta2)
        loss_d2_val = float(loss_d2.detach())
    content = (refined - x).abs().mean()
    terms = []
    if cfg.w_d1 > 0:
        terms.append(cfg.w_d1 * ((d1_texture_scores(state.d1, refined) - 1.0) ** 2).mean())
    if cfg.w_d2 > 0:
        terms.append(cfg.w_d2 * ((d2_clarity_scores(state.d2, refined) - 1.0) ** 2).mean())
    if cfg.w_content > 0:
        terms.append(cfg.w_content * content)
    loss_g_val = 0.0
    if terms:
        loss_g = sum(terms)
        if not torch.isfinite(loss_g):
            raise NumericError(f"non-finite generator loss at step {state.steps}")
        grads = torch.autograd.grad(loss_g, list(state.tails.parameters()))
        adam_update(state.tails.parameters(), grads, state.adam_g,
                    cfg.lr_generator, cfg.adam_beta1, cfg.adam_beta2)
        loss_g_val = float(loss_g.detach())
    state.steps += 1
    diag = {
        "loss_d1": loss_d1_val,
        "loss_d2": loss_d2_val,
        "loss_g": loss_g_val,
        "content_l1": float(content.detach()),
    }
    if not all(math.isfinite(v) for v in diag.values()):
        raise NumericError(f"non-finite diagnostics at step {state.steps - 1}")
    state.history.append(diag)
    return diag
