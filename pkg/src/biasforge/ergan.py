"""Eyeglasses removal GAN.

Encoder-decoder generator with skip connections and a learned eye-region
attention mask, trained against a least-squares PatchGAN discriminator with
identity and L1 reconstruction terms. Supervision is paired: clean faces plus
their glasses composites from the dataset module. The attention blend
y = mask * raw + (1 - mask) * x means an all-zero mask passes the input
through untouched, which anchors the reconstruction loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from .bias import FeatureExtractor
from .errors import NumericError, ShapeError
from .imagecore import Image
from .optim import AdamState, adam_update
from .tensorutil import seeded_generator

_SAMPLER_SEED_SALT = 0xC2B2AE3D27D4EB4F


@dataclass
class ErganConfig:
    image_size: int = 128
    w_adv: float = 1.0
    w_id: float = 1.0
    w_rec: float = 10.0
    w_mask: float = 0.0   # optional supervision of the mask toward the eye band
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    batch_size: int = 64
    seed: int = 0
    embedder: FeatureExtractor | None = None  # None -> quadrant-mean embedder

    def validate(self) -> None:
        if min(self.w_adv, self.w_id, self.w_rec, self.w_mask) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ValueError("learning rates must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.image_size % 16 != 0:
            raise ValueError("image_size must be divisible by 16")


class ErganGenerator(nn.Module):
    """U-shaped generator: 4 stride-2 conv stages down, 4 transposed-conv
    stages up with channel-concatenation skips, then two heads on the finest
    decoder features: a 3x3 conv + tanh for the raw reconstruction and a 1x1
    conv + sigmoid for the attention mask. Output is the attention blend.

    Test hooks: mask_override substitutes a fixed mask value, drop_skips
    zeroes selected encoder skip tensors (stages 1..3).
    """

    def __init__(self, channels: int = 3, widths: tuple[int, int, int, int] = (32, 64, 128, 256)):
        super().__init__()
        w1, w2, w3, w4 = widths
        self.channels = channels
        self.enc1 = nn.Conv2d(channels, w1, 4, stride=2, padding=1)
        self.enc2 = nn.Conv2d(w1, w2, 4, stride=2, padding=1)
        self.enc3 = nn.Conv2d(w2, w3, 4, stride=2, padding=1)
        self.enc4 = nn.Conv2d(w3, w4, 4, stride=2, padding=1)
        self.dec1 = nn.ConvTranspose2d(w4, w3, 4, stride=2, padding=1)
        self.dec2 = nn.ConvTranspose2d(2 * w3, w2, 4, stride=2, padding=1)
        self.dec3 = nn.ConvTranspose2d(2 * w2, w1, 4, stride=2, padding=1)
        self.dec4 = nn.ConvTranspose2d(2 * w1, w1, 4, stride=2, padding=1)
        self.raw_head = nn.Conv2d(w1, channels, 3, stride=1, padding=1)
        self.mask_head = nn.Conv2d(w1, 1, 1, stride=1, padding=0)

    def forward(
        self,
        x: torch.Tensor,
        mask_override: float | torch.Tensor | None = None,
        drop_skips: tuple[int, ...] = (),
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"expected (B, {self.channels}, H, W), got {tuple(x.shape)}")
        if x.shape[2] % 16 != 0 or x.shape[3] % 16 != 0:
            raise ShapeError(f"spatial size must be divisible by 16, got {tuple(x.shape[2:])}")
        e1 = torch.relu(self.enc1(x))
        e2 = torch.relu(self.enc2(e1))
        e3 = torch.relu(self.enc3(e2))
        e4 = torch.relu(self.enc4(e3))
        s1 = torch.zeros_like(e1) if 1 in drop_skips else e1
        s2 = torch.zeros_like(e2) if 2 in drop_skips else e2
        s3 = torch.zeros_like(e3) if 3 in drop_skips else e3
        d1 = torch.relu(self.dec1(e4))
        d2 = torch.relu(self.dec2(torch.cat([d1, s3], dim=1)))
        d3 = torch.relu(self.dec3(torch.cat([d2, s2], dim=1)))
        d4 = torch.relu(self.dec4(torch.cat([d3, s1], dim=1)))
        raw = torch.tanh(self.raw_head(d4))
        if mask_override is None:
            mask = torch.sigmoid(self.mask_head(d4))
        elif isinstance(mask_override, torch.Tensor):
            mask = mask_override
        else:
            mask = torch.full_like(raw[:, :1], float(mask_override))
        y = mask * raw + (1.0 - mask) * x
        return y, mask, raw


def ergan_forward(generator: ErganGenerator, x_glasses: torch.Tensor, **kwargs):
    """(blended output, attention mask) for a MODEL-range batch."""
    y, mask, _ = generator(x_glasses, **kwargs)
    return y, mask


class PatchDiscriminator(nn.Module):
    """Least-squares PatchGAN: three stride-2 convs then a stride-1 conv to a
    1-channel score map. No pooling; each map cell scores one receptive
    field. 128x128 input gives a 15x15 map, 32x32 gives 3x3."""

    def __init__(self, in_channels: int = 3, widths: tuple[int, int, int] = (32, 64, 128)):
        super().__init__()
        self.in_channels = in_channels
        w1, w2, w3 = widths
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, w1, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w1, w2, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w2, w3, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w3, 1, 4, stride=1, padding=1),
        )

    @staticmethod
    def map_size(side: int) -> int:
        for _ in range(3):
            side = (side + 2 * 1 - 4) // 2 + 1
        return side + 2 * 1 - 4 + 1

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"expected (B, {self.in_channels}, H, W), got {tuple(x.shape)}")
        if self.map_size(x.shape[2]) < 1 or self.map_size(x.shape[3]) < 1:
            raise ShapeError(f"input {tuple(x.shape[2:])} too small for one patch")
        return self.net(x).squeeze(1)


def patch_scores(discriminator: PatchDiscriminator, batch: torch.Tensor) -> torch.Tensor:
    """(B, N, M) patch-score map batch."""
    return discriminator(batch)


def _unit_normalize(e: torch.Tensor) -> torch.Tensor:
    # clamp keeps zero-norm embeddings at the zero vector instead of NaN
    return e / e.norm(dim=-1, keepdim=True).clamp_min(1e-12)


class TorchQuadrantEmbedder(nn.Module):
    """Differentiable twin of bias.QuadrantMeanExtractor: mean RGB of the
    four quadrants in UNIT space, order [TL, TR, BL, BR] x (R, G, B).
    Consumes MODEL-range batches. No trainable parameters."""

    dim = 12

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W), got {tuple(x.shape)}")
        u = (x + 1.0) / 2.0
        h, w = u.shape[2], u.shape[3]
        rows = ((0, (h + 1) // 2), (h // 2, h))
        cols = ((0, (w + 1) // 2), (w // 2, w))
        parts = [
            u[:, :, r0:r1, c0:c1].mean(dim=(2, 3))
            for r0, r1 in rows for c0, c1 in cols
        ]
        # interleave to quadrant-major order: (B, 4, 3) -> (B, 12)
        return torch.stack(parts, dim=1).reshape(x.shape[0], 12)


def identity_loss(embedder: FeatureExtractor, a: Image, b: Image) -> float:
    """Euclidean distance between unit-normalized embeddings, in [0, 2]."""
    ea = np.asarray(embedder.embed(a), dtype=np.float64)
    eb = np.asarray(embedder.embed(b), dtype=np.float64)
    na, nb = np.linalg.norm(ea), np.linalg.norm(eb)
    ea = ea / max(na, 1e-12)
    eb = eb / max(nb, 1e-12)
    return float(np.linalg.norm(ea - eb))


def identity_loss_batch(embedder: TorchQuadrantEmbedder, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Batch-mean identity loss on MODEL-range tensors (differentiable)."""
    ea = _unit_normalize(embedder(a))
    eb = _unit_normalize(embedder(b))
    return (ea - eb).norm(dim=1).mean()


def _mask_supervision(mask: torch.Tensor, band: tuple[int, int]) -> torch.Tensor:
    """Push the mask toward 1 inside the eye band and toward 0 outside."""
    r0, r1 = band
    inside = mask[:, :, r0:r1, :]
    outside_top = mask[:, :, :r0, :]
    outside_bot = mask[:, :, r1:, :]
    terms = [(1.0 - inside).mean()]
    if outside_top.numel():
        terms.append(outside_top.mean())
    if outside_bot.numel():
        terms.append(outside_bot.mean())
    return sum(terms) / len(terms)


def ergan_losses(
    generator: ErganGenerator,
    discriminator: PatchDiscriminator,
    cfg: ErganConfig,
    x_glasses: torch.Tensor,
    x_clean: torch.Tensor,
    embedder: TorchQuadrantEmbedder | None = None,
    eye_band: tuple[int, int] | None = None,
) -> dict:
    """Least-squares adversarial + identity + L1 reconstruction.

    L_D = mean[(D(clean) - 1)^2] + mean[D(y_detached)^2]
    L_G = w_adv * mean[(D(y) - 1)^2] + w_id * id(y, clean) + w_rec * mean|y - clean|
    """
    if x_glasses.shape[0] == 0:
        raise ShapeError("empty batch")
    if x_glasses.shape != x_clean.shape:
        raise ShapeError(f"unpaired batch: {tuple(x_glasses.shape)} vs {tuple(x_clean.shape)}")
    if embedder is None:
        embedder = TorchQuadrantEmbedder()
    y, mask, _ = generator(x_glasses)
    d_real = discriminator(x_clean)
    d_fake = discriminator(y.detach())
    loss_d = ((d_real - 1.0) ** 2).mean() + (d_fake**2).mean()
    adv = ((discriminator(y) - 1.0) ** 2).mean()
    ident = identity_loss_batch(embedder, y, x_clean)
    rec = (y - x_clean).abs().mean()
    loss_g = cfg.w_adv * adv + cfg.w_id * ident + cfg.w_rec * rec
    components = {"adv": adv, "id": ident, "rec": rec}
    if cfg.w_mask > 0:
        if eye_band is None:
            raise ValueError("w_mask > 0 requires an eye_band")
        msup = _mask_supervision(mask, eye_band)
        loss_g = loss_g + cfg.w_mask * msup
        components["mask"] = msup
    return {"L_G_total": loss_g, "L_D": loss_d, "components": components, "y": y, "mask": mask}


@dataclass
class ErganTrainState:
    cfg: ErganConfig
    generator: ErganGenerator
    discriminator: PatchDiscriminator
    embedder: TorchQuadrantEmbedder
    adam_g: AdamState
    adam_d: AdamState
    rng: torch.Generator
    sample_pairs: Callable[[int, torch.Generator], tuple[torch.Tensor, torch.Tensor]]
    eye_band: tuple[int, int] | None = None
    steps: int = 0
    history: list[dict] = field(default_factory=list)


def init_ergan_state(
    cfg: ErganConfig,
    sample_pairs: Callable[[int, torch.Generator], tuple[torch.Tensor, torch.Tensor]],
    widths: tuple[int, int, int, int] = (32, 64, 128, 256),
    eye_band: tuple[int, int] | None = None,
) -> ErganTrainState:
    cfg.validate()
    torch.manual_seed(cfg.seed & 0x7FFF_FFFF_FFFF_FFFF)
    generator = ErganGenerator(widths=widths)
    discriminator = PatchDiscriminator(in_channels=3)
    return ErganTrainState(
        cfg=cfg,
        generator=generator,
        discriminator=discriminator,
        embedder=TorchQuadrantEmbedder(),
        adam_g=AdamState.for_params(generator.parameters()),
        adam_d=AdamState.for_params(discriminator.parameters()),
        rng=seeded_generator(cfg.seed ^ _SAMPLER_SEED_SALT),
        sample_pairs=sample_pairs,
        eye_band=eye_band,
    )


def ergan_train_step(state: ErganTrainState) -> dict:
    """One discriminator update then one generator update on a fresh pair batch."""
    cfg = state.cfg
    x_glasses, x_clean = state.sample_pairs(cfg.batch_size, state.rng)
    losses = ergan_losses(state.generator, state.discriminator, cfg,
                          x_glasses, x_clean, state.embedder, state.eye_band)
    loss_d = losses["L_D"]
    if not torch.isfinite(loss_d):
        raise NumericError(f"non-finite discriminator loss at step {state.steps}")
    grads = torch.autograd.grad(loss_d, list(state.discriminator.parameters()))
    adam_update(state.discriminator.parameters(), grads, state.adam_d,
                cfg.lr_discriminator, cfg.adam_beta1, cfg.adam_beta2)
    # rebuild generator losses against the updated discriminator
    losses = ergan_losses(state.generator, state.discriminator, cfg,
                          x_glasses, x_clean, state.embedder, state.eye_band)
    loss_g = losses["L_G_total"]
    if not torch.isfinite(loss_g):
        raise NumericError(f"non-finite generator loss at step {state.steps}")
    grads = torch.autograd.grad(loss_g, list(state.generator.parameters()))
    adam_update(state.generator.parameters(), grads, state.adam_g,
                cfg.lr_generator, cfg.adam_beta1, cfg.adam_beta2)
    state.steps += 1
    mask = losses["mask"]
    diag = {
        "loss_d": float(loss_d.detach()),
        "loss_g": float(loss_g.detach()),
        "rec_l1": float(losses["components"]["rec"].detach()),
        "mask_min": float(mask.detach().min()),
        "mask_max": float(mask.detach().max()),
    }
    if not all(math.isfinite(v) for v in diag.values()):
        raise NumericError(f"non-finite diagnostics at step {state.steps - 1}")
    state.history.append(diag)
    return diag
