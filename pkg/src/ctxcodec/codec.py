"""Toy contextual frame codec: conv encoder/decoder, hyperprior, temporal prior.

Latents live at 1/4 resolution with `latent_channels` channels; the hyper
latent sits one stride-2 level below that and is coded under a learned
per-channel factorized Gaussian. The temporal prior turns the previous
quantized latent into conditioning features used by both the codec and the
entropy model; with a zeroed previous latent (I-frames) it degenerates to a
learned constant.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .coder import discretized_gaussian_pmf, quantize_pmf

log = logging.getLogger(__name__)


def ste_round(x: torch.Tensor) -> torch.Tensor:
    """Round-to-nearest-even forward, identity gradient backward."""
    return x + (torch.round(x) - x).detach()


def quantize_latents(x: torch.Tensor, lo: int, hi: int) -> torch.Tensor:
    """STE rounding clamped to the coder's symbol range (clamps are logged)."""
    rounded = torch.round(x)
    clamped = rounded.clamp(lo, hi)
    n_clamped = int((rounded != clamped).sum())
    if n_clamped:
        log.warning("clamped %d latent values outside [%d, %d]", n_clamped, lo, hi)
    return x + (clamped - x).detach()


class FrameEncoder(nn.Module):
    """(B,3,H,W) frame + latent-resolution context features -> (B,C,h,w) latent."""

    def __init__(self, latent_channels=32, ctx_channels=64, width=64):
        super().__init__()
        self.down1 = nn.Conv2d(3, width, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(width, width, 3, stride=2, padding=1)
        self.fuse = nn.Conv2d(width + ctx_channels, width, 3, padding=1)
        self.out = nn.Conv2d(width, latent_channels, 3, padding=1)
        # (kernel, stride, padding) per conv on the input-pixel path, for
        # receptive-field accounting
        self.layer_specs = [(3, 2, 1), (3, 2, 1), (3, 1, 1), (3, 1, 1)]

    def forward(self, x, ctx_feat):
        h = F.relu(self.down1(x))
        h = F.relu(self.down2(h))
        if ctx_feat.shape[-2:] != h.shape[-2:]:
            raise ValueError(f"context {tuple(ctx_feat.shape[-2:])} does not match "
                             f"latent grid {tuple(h.shape[-2:])}")
        h = F.relu(self.fuse(torch.cat([h, ctx_feat], dim=1)))
        return self.out(h)


class FrameDecoder(nn.Module):
    """(B,C,h,w) quantized latent + context features -> (B,3,H,W) reconstruction."""

    def __init__(self, latent_channels=32, ctx_channels=64, width=64):
        super().__init__()
        self.fuse = nn.Conv2d(latent_channels + ctx_channels, width, 3, padding=1)
        self.up1 = nn.ConvTranspose2d(width, width, 4, stride=2, padding=1)
        self.up2 = nn.ConvTranspose2d(width, width, 4, stride=2, padding=1)
        self.out = nn.Conv2d(width, 3, 3, padding=1)

    def forward(self, y_hat, ctx_feat):
        if ctx_feat.shape[-2:] != y_hat.shape[-2:]:
            raise ValueError("context does not match latent grid")
        h = F.relu(self.fuse(torch.cat([y_hat, ctx_feat], dim=1)))
        h = F.relu(self.up1(h))
        h = F.relu(self.up2(h))
        return self.out(h)


class HyperEncoder(nn.Module):
    def __init__(self, latent_channels=32, hyper_channels=32, width=48):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(latent_channels, width, 3, padding=1), nn.ReLU(),
            nn.Conv2d(width, hyper_channels, 3, stride=2, padding=1),
        )

    def forward(self, y):
        return self.net(y)


class HyperDecoder(nn.Module):
    """Quantized hyper latent -> context features at latent resolution."""

    def __init__(self, hyper_channels=32, ctx_channels=64, width=64):
        super().__init__()
        self.up = nn.ConvTranspose2d(hyper_channels, width, 4, stride=2, padding=1)
        self.out = nn.Conv2d(width, ctx_channels, 3, padding=1)

    def forward(self, z_hat):
        return self.out(F.relu(self.up(z_hat)))


class TemporalPrior(nn.Module):
    """Conv features of the previous quantized latent.

    Replicate padding keeps the zero-input response spatially constant, so the
    I-frame path (zeroed previous latent) conditions on a learned constant.
    """

    def __init__(self, latent_channels=32, ctx_channels=64, width=64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(latent_channels, width, 3, padding=1, padding_mode="replicate"),
            nn.ReLU(),
            nn.Conv2d(width, width, 3, padding=1, padding_mode="replicate"),
            nn.ReLU(),
            nn.Conv2d(width, ctx_channels, 3, padding=1, padding_mode="replicate"),
        )

    def forward(self, y_prev_hat):
        return self.net(y_prev_hat)


class FactorizedPrior(nn.Module):
    """Per-channel Gaussian prior for the hyper latent (learned mean and scale)."""

    def __init__(self, channels=32, sigma_min=0.01):
        super().__init__()
        self.channels = channels
        self.sigma_min = sigma_min
        self.mean = nn.Parameter(torch.zeros(channels))
        self.scale_raw = nn.Parameter(torch.full((channels,), _softplus_inv(2.0)))

    def scales(self) -> torch.Tensor:
        return self.sigma_min + F.softplus(self.scale_raw)

    def likelihood(self, z_hat: torch.Tensor) -> torch.Tensor:
        """Discretized Gaussian mass at integer z_hat, clamped away from zero."""
        mean = self.mean.view(1, -1, 1, 1)
        scale = self.scales().view(1, -1, 1, 1)
        return gaussian_likelihood(z_hat, mean, scale)

    def cdf_tables(self, lo: int, hi: int) -> np.ndarray:
        """One quantized CDF row per channel (escape-bucketed support)."""
        with torch.no_grad():
            mean = self.mean.double().cpu().numpy()
            scale = self.scales().double().cpu().numpy()
        return quantize_pmf(discretized_gaussian_pmf(mean, scale, lo, hi))


def _softplus_inv(y: float) -> float:
    return math.log(math.expm1(y))


_SQRT2 = math.sqrt(2.0)


def gaussian_likelihood(values, mean, scale, min_likelihood=2 ** -30):
    """P(values) under the discretized Gaussian: CDF mass of (v-1/2, v+1/2]."""
    upper = 0.5 * (1 + torch.erf((values + 0.5 - mean) / (scale * _SQRT2)))
    lower = 0.5 * (1 + torch.erf((values - 0.5 - mean) / (scale * _SQRT2)))
    return (upper - lower).clamp_min(min_likelihood)


class FrameCodec(nn.Module):
    """Bundle of the conv codec pieces plus the stage-1 entropy head.

    The stage-1 head predicts per-latent Gaussian parameters from hyper
    features alone; it is the scaffold for codec-only training and is not used
    once the transformer entropy model takes over.
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        c, ch, ctx = cfg.latent_channels, cfg.hyper_channels, cfg.ctx_channels
        self.encoder = FrameEncoder(c, ctx)
        self.decoder = FrameDecoder(c, ctx)
        self.hyper_encoder = HyperEncoder(c, ch)
        self.hyper_decoder = HyperDecoder(ch, ctx)
        self.temporal_prior = TemporalPrior(c, ctx)
        self.factorized = FactorizedPrior(ch, cfg.sigma_min)
        self.stage1_head = nn.Conv2d(ctx, 2 * c, 1)

    def encode(self, x, ctx_feat):
        return self.encoder(x, ctx_feat)

    def decode(self, y_hat, ctx_feat):
        return self.decoder(y_hat, ctx_feat)

    def hyper_encode(self, y):
        return self.hyper_encoder(y)

    def hyper_decode(self, z_hat):
        return self.hyper_decoder(z_hat)

    def temporal_features(self, y_prev_hat):
        return self.temporal_prior(y_prev_hat)

    def quantize(self, values):
        return quantize_latents(values, self.cfg.symbol_min, self.cfg.symbol_max)

    def stage1_params(self, y_hp):
        raw = self.stage1_head(y_hp)
        mean, scale_raw = raw.chunk(2, dim=1)
        return mean, self.cfg.sigma_min + F.softplus(scale_raw)
