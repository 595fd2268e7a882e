"""Skin-tone modification model: a Wasserstein GAN with gradient penalty.

The generator consumes a face image and a noise vector and emits a recolored
face in (-1, 1); the critic scores images with an unbounded real value whose
input-gradient norm is pushed toward 1 by the gradient penalty. Training
performs n_critic critic updates per generator update with bias-corrected
Adam. Every sample drawn during training comes from one explicit
torch.Generator held in the train state, so runs are bit-reproducible and
resumable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from .errors import NumericError, ShapeError
from .imagecore import Image, RangeTag, resize_bilinear, to_model_range
from .optim import AdamState, adam_update
from .tensorutil import batch_to_unit_images, images_to_batch, seeded_generator

_SAMPLER_SEED_SALT = 0x9E3779B97F4A7C15  # decorrelates init and sampling streams


@dataclass
class SkinGanConfig:
    image_size: int = 128
    z_dim: int = 64
    lambda_gp: float = 10.0
    n_critic: int = 5
    lr_critic: float = 1e-4
    lr_generator: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    batch_size: int = 64
    seed: int = 0
    cond_dim: int = 64       # width of the conv-encoded conditioning vector
    literal_concat: bool = False  # flatten x directly into the FC input (small sizes)

    def validate(self) -> None:
        if self.lambda_gp < 0:
            raise ValueError("lambda_gp must be >= 0")
        if self.lr_critic <= 0 or self.lr_generator <= 0:
            raise ValueError("learning rates must be > 0")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (interpolation needs pairs)")
        if self.image_size % 4 != 0:
            raise ValueError("image_size must be divisible by 4")


class SkinGenerator(nn.Module):
    """Image + noise -> recolored image in (-1, 1).

    The conditioning image passes through a small stride-2 conv encoder whose
    pooled features are concatenated with z before the fully connected layer;
    with literal_concat the raw flattened image is concatenated instead. The
    decode trunk is FC -> ConvT(widths[0], 4x4, s2) -> ConvT(widths[1], 4x4, s2)
    -> 3x3 conv to the output channels -> tanh.
    """

    def __init__(
        self,
        image_size: int,
        z_dim: int = 64,
        cond_dim: int = 64,
        channels: int = 3,
        widths: tuple[int, int] = (64, 32),
        literal_concat: bool = False,
    ):
        super().__init__()
        if image_size % 4 != 0:
            raise ShapeError(f"image_size must be divisible by 4, got {image_size}")
        self.image_size = image_size
        self.z_dim = z_dim
        self.channels = channels
        self.literal_concat = literal_concat
        w1, w2 = widths
        self.base_channels = 2 * w1
        self.base_size = image_size // 4
        if literal_concat:
            fc_in = channels * image_size * image_size + z_dim
            self.encoder = None
            self.encoder_fc = None
        else:
            e1, e2 = w2, w1
            self.encoder = nn.Sequential(
                nn.Conv2d(channels, e1, 4, stride=2, padding=1),
                nn.LeakyReLU(0.2),
                nn.Conv2d(e1, e2, 4, stride=2, padding=1),
                nn.LeakyReLU(0.2),
            )
            self.encoder_fc = nn.Linear(e2, cond_dim)
            fc_in = cond_dim + z_dim
        self.fc = nn.Linear(fc_in, self.base_channels * self.base_size**2)
        self.deconv1 = nn.ConvTranspose2d(self.base_channels, w1, 4, stride=2, padding=1)
        self.deconv2 = nn.ConvTranspose2d(w1, w2, 4, stride=2, padding=1)
        self.out_conv = nn.Conv2d(w2, channels, 3, stride=1, padding=1)

    def forward(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[2] != self.image_size or x.shape[3] != self.image_size:
            raise ShapeError(f"expected (B, {self.channels}, {self.image_size}, "
                             f"{self.image_size}), got {tuple(x.shape)}")
        if z.ndim != 2 or z.shape[1] != self.z_dim or z.shape[0] != x.shape[0]:
            raise ShapeError(f"expected z of shape ({x.shape[0]}, {self.z_dim}), "
                             f"got {tuple(z.shape)}")
        if self.literal_concat:
            cond = x.flatten(1)
        else:
            cond = self.encoder_fc(self.encoder(x).mean(dim=(2, 3)))
        h = self.fc(torch.cat([cond, z], dim=1))
        h = torch.relu(h.view(-1, self.base_channels, self.base_size, self.base_size))
        h = torch.relu(self.deconv1(h))
        h = torch.relu(self.deconv2(h))
        return torch.tanh(self.out_conv(h))


class Critic(nn.Module):
    """Unbounded per-sample score; no normalization layers (the gradient
    penalty replaces them). 1x1 "images" (the 1-D Wasserstein harness) use a
    small MLP instead of the stride-2 conv stack."""

    def __init__(
        self,
        image_size: int,
        channels: int = 3,
        widths: tuple[int, int] = (32, 64),
        mlp_hidden: int = 64,
    ):
        super().__init__()
        self.image_size = image_size
        self.channels = channels
        if image_size == 1:
            self.net = nn.Sequential(
                nn.Flatten(),
                nn.Linear(channels, mlp_hidden),
                nn.LeakyReLU(0.2),
                nn.Linear(mlp_hidden, mlp_hidden),
                nn.LeakyReLU(0.2),
                nn.Linear(mlp_hidden, 1),
            )
        else:
            if image_size % 4 != 0:
                raise ShapeError(f"image_size must be divisible by 4, got {image_size}")
            w1, w2 = widths
            self.net = nn.Sequential(
                nn.Conv2d(channels, w1, 4, stride=2, padding=1),
                nn.LeakyReLU(0.2),
                nn.Conv2d(w1, w2, 4, stride=2, padding=1),
                nn.LeakyReLU(0.2),
                nn.Flatten(),
                nn.Linear(w2 * (image_size // 4) ** 2, 1),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels or x.shape[2] != self.image_size:
            raise ShapeError(f"expected (B, {self.channels}, {self.image_size}, "
                             f"{self.image_size}), got {tuple(x.shape)}")
        return self.net(x).squeeze(1)


def generator_forward(generator: SkinGenerator, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    return generator(x, z)


def critic_forward(critic: Critic, x: torch.Tensor) -> torch.Tensor:
    return critic(x)


def interpolate(x: torch.Tensor, x_fake: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Per-sample convex combination eps*x + (1-eps)*x_fake."""
    if x.shape != x_fake.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_fake.shape)}")
    if eps.ndim != 1 or eps.shape[0] != x.shape[0]:
        raise ShapeError(f"eps must have one entry per sample, got {tuple(eps.shape)}")
    if eps.min() < 0 or eps.max() > 1:
        raise ValueError("eps entries must lie in [0, 1]")
    e = eps.to(x.dtype).view(-1, *([1] * (x.ndim - 1)))
    return e * x + (1.0 - e) * x_fake


def gradient_penalty(critic: Critic, x_hat: torch.Tensor, lambda_gp: float, return_norms: bool = False):
    """lambda * E[(||grad_xhat D(x_hat)||_2 - 1)^2].

    The returned scalar carries a graph back to the critic parameters
    (second-order), so it can appear inside the critic loss.
    """
    x_hat = x_hat.detach().requires_grad_(True)
    scores = critic(x_hat)
    grads = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)[0]
    if not torch.isfinite(grads).all():
        raise NumericError("non-finite critic input gradient in gradient_penalty")
    norms = grads.flatten(1).norm(2, dim=1)
    penalty = lambda_gp * ((norms - 1.0) ** 2).mean()
    if return_norms:
        return penalty, norms
    return penalty


def critic_loss(
    critic: Critic,
    x_real: torch.Tensor,
    x_fake: torch.Tensor,
    lambda_gp: float,
    eps: torch.Tensor | None = None,
) -> torch.Tensor:
    """E[D(fake)] - E[D(real)] + gradient penalty on eps-interpolated samples."""
    if x_real.shape[0] == 0 or x_fake.shape[0] == 0:
        raise ShapeError("empty batch")
    if x_real.shape[0] != x_fake.shape[0]:
        raise ShapeError(f"batch sizes differ: {x_real.shape[0]} vs {x_fake.shape[0]}")
    loss = critic(x_fake).mean() - critic(x_real).mean()
    if lambda_gp != 0.0:
        if eps is None:
            raise ValueError("eps is required when lambda_gp > 0")
        loss = loss + gradient_penalty(critic, interpolate(x_real, x_fake, eps), lambda_gp)
    return loss


def generator_loss(critic: Critic, x_fake: torch.Tensor) -> torch.Tensor:
    """-E[D(fake)]: the generator maximizes the critic's score."""
    if x_fake.shape[0] == 0:
        raise ShapeError("empty batch")
    return -critic(x_fake).mean()


@dataclass
class SkinTrainState:
    cfg: SkinGanConfig
    generator: SkinGenerator
    critic: Critic
    adam_g: AdamState
    adam_d: AdamState
    rng: torch.Generator
    sample_real: Callable[[int, torch.Generator], torch.Tensor]
    critic_steps: int = 0
    gen_steps: int = 0
    history: list[dict] = field(default_factory=list)


def init_train_state(
    cfg: SkinGanConfig,
    sample_real: Callable[[int, torch.Generator], torch.Tensor],
    channels: int = 3,
) -> SkinTrainState:
    """Build seeded generator/critic and a fresh training state."""
    cfg.validate()
    torch.manual_seed(cfg.seed & 0x7FFF_FFFF_FFFF_FFFF)
    generator = SkinGenerator(
        cfg.image_size, z_dim=cfg.z_dim, cond_dim=cfg.cond_dim,
        channels=channels, literal_concat=cfg.literal_concat,
    )
    critic = Critic(cfg.image_size, channels=channels)
    return SkinTrainState(
        cfg=cfg,
        generator=generator,
        critic=critic,
        adam_g=AdamState.for_params(generator.parameters()),
        adam_d=AdamState.for_params(critic.parameters()),
        rng=seeded_generator(cfg.seed ^ _SAMPLER_SEED_SALT),
        sample_real=sample_real,
    )


def train_step(state: SkinTrainState) -> dict:
    """n_critic critic updates followed by one generator update.

    Returns diagnostics: loss_critic (last critic update), loss_generator,
    and grad_norm_mean (mean ||grad_xhat D|| across the critic updates).
    """
    cfg = state.cfg
    norm_means = []
    loss_d_val = math.nan
    for _ in range(cfg.n_critic):
        x_real = state.sample_real(cfg.batch_size, state.rng)
        z = torch.randn(x_real.shape[0], cfg.z_dim, generator=state.rng, dtype=x_real.dtype)
        with torch.no_grad():
            x_fake = state.generator(x_real, z)
        eps = torch.rand(x_real.shape[0], generator=state.rng, dtype=x_real.dtype)
        gp, norms = gradient_penalty(
            state.critic, interpolate(x_real, x_fake, eps), cfg.lambda_gp, return_norms=True
        )
        loss_d = state.critic(x_fake).mean() - state.critic(x_real).mean() + gp
        if not torch.isfinite(loss_d):
            raise NumericError(f"non-finite critic loss at critic step {state.critic_steps}")
        grads = torch.autograd.grad(loss_d, list(state.critic.parameters()))
        adam_update(state.critic.parameters(), grads, state.adam_d,
                    cfg.lr_critic, cfg.adam_beta1, cfg.adam_beta2)
        state.critic_steps += 1
        loss_d_val = float(loss_d.detach())
        norm_means.append(float(norms.detach().mean()))
    x_real = state.sample_real(cfg.batch_size, state.rng)
    z = torch.randn(x_real.shape[0], cfg.z_dim, generator=state.rng, dtype=x_real.dtype)
    x_fake = state.generator(x_real, z)
    loss_g = generator_loss(state.critic, x_fake)
    if not torch.isfinite(loss_g):
        raise NumericError(f"non-finite generator loss at generator step {state.gen_steps}")
    grads = torch.autograd.grad(loss_g, list(state.generator.parameters()))
    adam_update(state.generator.parameters(), grads, state.adam_g,
                cfg.lr_generator, cfg.adam_beta1, cfg.adam_beta2)
    state.gen_steps += 1
    diag = {
        "loss_critic": loss_d_val,
        "loss_generator": float(loss_g.detach()),
        "grad_norm_mean": float(np.mean(norm_means)),
    }
    state.history.append(diag)
    return diag


def recolor(generator: SkinGenerator, img: Image, seed: int) -> Image:
    """Inference entry point: UNIT image in, UNIT image out (same dimensions)."""
    if img.range_tag is not RangeTag.UNIT:
        raise ValueError("recolor expects a UNIT-range image")
    orig_h, orig_w = img.height, img.width
    work = img
    if (orig_h, orig_w) != (generator.image_size, generator.image_size):
        work = resize_bilinear(img, generator.image_size, generator.image_size)
    x = images_to_batch([to_model_range(work)])
    z = torch.randn(1, generator.z_dim, generator=seeded_generator(seed))
    with torch.no_grad():
        y = generator(x, z)
    out = batch_to_unit_images(y)[0]
    if (orig_h, orig_w) != (generator.image_size, generator.image_size):
        out = resize_bilinear(out, orig_h, orig_w)
    return out


def quantile_w1_1d(samples_a, samples_b) -> float:
    """Exact 1-D Wasserstein-1 between equal-size empirical samples:
    mean |a_(i) - b_(i)| over matched order statistics."""
    a = np.sort(np.asarray(samples_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(samples_b, dtype=np.float64).ravel())
    if a.shape != b.shape:
        raise ValueError(f"sample counts differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] == 0:
        raise ValueError("empty samples")
    return float(np.mean(np.abs(a - b)))
