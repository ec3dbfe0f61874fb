"""Pixel-space goal models: the long-term-goal CVAE and the short-term-goal U-net."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, StateError, TrainingFault

LG_ENCODER = (32, 32, 64, 64, 64)
LG_DECODER = (64, 64, 64, 32, 32)
LG_PRIOR_CONVS = (32, 32)
LATENT_DIM = 10
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
_CLAMP = 1e-7


@dataclass
class DiagonalGaussian:
    mean: torch.Tensor
    std: torch.Tensor

    def sample(self, generator: torch.Generator | None = None, std_scale: float = 1.0) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator, dtype=self.mean.dtype, device=self.mean.device)
        return self.mean + std_scale * self.std * eps

    @classmethod
    def from_raw(cls, raw: torch.Tensor) -> "DiagonalGaussian":
        """Split ``(..., 2D)`` into mean and a softplus-positive std."""
        mean, s = raw.chunk(2, dim=-1)
        return cls(mean, F.softplus(s) + 1e-5)

    def check_finite(self, stage: str, batch_index: int | None = None) -> None:
        if not (torch.isfinite(self.mean).all() and torch.isfinite(self.std).all()):
            raise TrainingFault("non-finite latent parameters", stage=stage, batch_index=batch_index)


def gaussian_kl(q: DiagonalGaussian, p: DiagonalGaussian) -> torch.Tensor:
    """Per-dimension KL(q || p) between diagonal Gaussians."""
    return (torch.log(p.std / q.std)
            + (q.std ** 2 + (q.mean - p.mean) ** 2) / (2.0 * p.std ** 2) - 0.5)


def focal_loss(pred: torch.Tensor, target: torch.Tensor, alpha: float = FOCAL_ALPHA,
               gamma: float = FOCAL_GAMMA) -> torch.Tensor:
    """Binary focal loss summed over every element.

    ``pred`` is clamped to ``[1e-7, 1 - 1e-7]`` before the logs.
    """
    p_hat = pred.clamp(_CLAMP, 1.0 - _CLAMP)
    pos = alpha * (1.0 - p_hat) ** gamma * target * torch.log(p_hat)
    neg = (1.0 - alpha) * p_hat ** gamma * (1.0 - target) * torch.log(1.0 - p_hat)
    return -(pos + neg).sum()


def lg_loss(recon, target, posterior: DiagonalGaussian, prior: DiagonalGaussian,
            fb: float, anneal: float) -> tuple[torch.Tensor, dict]:
    """Focal reconstruction plus annealed, free-bits-clamped KL.

    ``fb`` is the per-dimension floor; the KL of each latent dimension is
    batch-averaged before clamping. Reconstruction is summed per sample and
    batch-averaged.
    """
    if not 0.0 <= anneal <= 1.0 or fb < 0:
        raise ConfigError("anneal must lie in [0, 1] and fb must be >= 0")
    batch = recon.shape[0]
    recon_term = focal_loss(recon, target) / batch
    kl_dims = gaussian_kl(posterior, prior).reshape(batch, -1).mean(dim=0)
    kl_clamped = torch.clamp(kl_dims, min=fb).sum()
    loss = recon_term + anneal * kl_clamped
    return loss, {"recon": recon_term.item(), "kl": kl_dims.sum().item(),
                  "kl_clamped": kl_clamped.item(), "anneal": anneal, "total": loss.item()}


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True),
                         nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(inplace=True))


@dataclass(frozen=True)
class UNetSpec:
    encoder_channels: tuple[int, ...]
    decoder_channels: tuple[int, ...]
    in_channels: int
    out_channels: int

    def __post_init__(self):
        if len(self.encoder_channels) != len(self.decoder_channels):
            raise ConfigError("encoder and decoder need the same number of blocks")

    @classmethod
    def lg(cls, encoder=LG_ENCODER, decoder=LG_DECODER) -> "UNetSpec":
        return cls(tuple(encoder), tuple(decoder), 2, 1)

    @classmethod
    def sg(cls, n_sg: int, encoder=LG_ENCODER, decoder=LG_DECODER) -> "UNetSpec":
        extra = 2 * encoder[-1]
        return cls(tuple(encoder) + (extra,), (extra,) + tuple(decoder), 3, n_sg + 1)

    @property
    def min_divisor(self) -> int:
        return 2 ** (len(self.encoder_channels) - 1)


class UNet(nn.Module):
    """U-net whose bottleneck can take a spatially broadcast latent vector."""

    def __init__(self, spec: UNetSpec, latent_dim: int = 0):
        super().__init__()
        self.spec = spec
        self.latent_dim = latent_dim
        enc = spec.encoder_channels
        dec = spec.decoder_channels
        self.encoders = nn.ModuleList()
        cin = spec.in_channels
        for c in enc:
            self.encoders.append(_conv_block(cin, c))
            cin = c
        self.decoders = nn.ModuleList([_conv_block(enc[-1] + latent_dim, dec[0])])
        for i in range(1, len(dec)):
            self.decoders.append(_conv_block(dec[i - 1] + enc[-1 - i], dec[i]))
        self.head = nn.Conv2d(dec[-1], spec.out_channels, 1)

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.shape[1] != self.spec.in_channels:
            raise ConfigError(f"expected {self.spec.in_channels} input channels, got {x.shape[1]}")
        if x.shape[-1] % self.spec.min_divisor or x.shape[-2] % self.spec.min_divisor:
            raise ConfigError(f"raster side must be divisible by {self.spec.min_divisor}")
        feats = []
        for i, block in enumerate(self.encoders):
            if i:
                x = F.max_pool2d(x, 2)
            x = block(x)
            feats.append(x)
        return feats

    def decode(self, feats: list[torch.Tensor], latent: torch.Tensor | None = None) -> torch.Tensor:
        x = feats[-1]
        if self.latent_dim:
            if latent is None:
                latent = x.new_zeros(x.shape[0], self.latent_dim)
            x = torch.cat([x, latent[:, :, None, None].expand(-1, -1, x.shape[2], x.shape[3])], dim=1)
        x = self.decoders[0](x)
        for i in range(1, len(self.decoders)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self.decoders[i](torch.cat([x, feats[-1 - i]], dim=1))
        return self.head(x)

    def forward(self, x, latent=None):
        return torch.sigmoid(self.decode(self.encode(x), latent))


class LGCVAE(nn.Module):
    """Long-term goal CVAE on a U-net backbone.

    The conditioning input is ``(I_M, I_x)``; the posterior additionally sees
    the ground-truth goal heatmap. The latent ``w`` is broadcast over the
    bottleneck before decoding.
    """

    def __init__(self, encoder=LG_ENCODER, decoder=LG_DECODER, prior_convs=LG_PRIOR_CONVS,
                 latent_dim: int = LATENT_DIM):
        super().__init__()
        self.latent_dim = latent_dim
        self.unet = UNet(UNetSpec.lg(encoder, decoder), latent_dim)
        layers, cin = [], encoder[-1]
        for c in prior_convs:
            layers += [nn.Conv2d(cin, c, 3, padding=1), nn.ReLU(inplace=True)]
            cin = c
        self.prior_convs = nn.Sequential(*layers)
        self.prior_head = nn.Conv2d(cin, 2 * latent_dim, 1)
        post, cin = [], 3
        for i, c in enumerate(encoder):
            if i:
                post.append(nn.MaxPool2d(2))
            post += [nn.Conv2d(cin, c, 3, padding=1), nn.ReLU(inplace=True)]
            cin = c
        self.posterior_convs = nn.Sequential(*post)
        self.posterior_head = nn.Conv2d(cin, 2 * latent_dim, 1)
        self.prior_std_override: float | None = None

    @property
    def feature_dim(self) -> int:
        return self.unet.spec.encoder_channels[-1]

    def prior(self, feats) -> DiagonalGaussian:
        h = self.prior_convs(feats[-1]).mean(dim=(2, 3), keepdim=True)
        g = DiagonalGaussian.from_raw(self.prior_head(h).flatten(1))
        if self.prior_std_override is not None:
            g = DiagonalGaussian(g.mean, torch.full_like(g.std, self.prior_std_override))
        return g

    def posterior(self, i_m, i_x, i_lg) -> DiagonalGaussian:
        h = self.posterior_convs(torch.cat([i_lg, i_x, i_m], dim=1)).mean(dim=(2, 3), keepdim=True)
        return DiagonalGaussian.from_raw(self.posterior_head(h).flatten(1))

    def map_feature(self, i_m, i_x) -> torch.Tensor:
        """Spatially average-pooled bottleneck features, one C-vector per sample."""
        return self.unet.encode(torch.cat([i_m, i_x], dim=1))[-1].mean(dim=(2, 3))

    def forward_train(self, i_m, i_x, i_lg, generator=None, batch_index=None):
        feats = self.unet.encode(torch.cat([i_m, i_x], dim=1))
        post = self.posterior(i_m, i_x, i_lg)
        prior = self.prior(feats)
        post.check_finite("lg", batch_index)
        prior.check_finite("lg", batch_index)
        w = post.sample(generator)
        recon = torch.sigmoid(self.unet.decode(feats, w))
        return recon, post, prior

    @torch.no_grad()
    def sample(self, i_m, i_x, k: int, generator=None) -> torch.Tensor:
        """``k`` long-goal heatmaps per input from prior draws: ``(B, k, H, W)``."""
        feats = self.unet.encode(torch.cat([i_m, i_x], dim=1))
        prior = self.prior(feats)
        b = i_m.shape[0]
        rep = [f.repeat_interleave(k, dim=0) for f in feats]
        mean = prior.mean.repeat_interleave(k, dim=0)
        std = prior.std.repeat_interleave(k, dim=0)
        w = DiagonalGaussian(mean, std).sample(generator)
        out = torch.sigmoid(self.unet.decode(rep, w))
        return out.reshape(b, k, *out.shape[-2:])

    def autoencode(self, i_m, i_x):
        """Deterministic pass with ``w = 0`` used for pretraining."""
        return torch.sigmoid(self.unet.decode(self.unet.encode(torch.cat([i_m, i_x], dim=1))))


class SGNet(nn.Module):
    """Deterministic U-net: ``(I_M, I_x, I_LG)`` -> ``N_SG`` short-goal maps plus a refined long goal."""

    def __init__(self, n_sg: int = 2, encoder=LG_ENCODER, decoder=LG_DECODER):
        super().__init__()
        self.n_sg = n_sg
        self.unet = UNet(UNetSpec.sg(n_sg, encoder, decoder))

    def forward(self, i_m, i_x, i_lg):
        for t in (i_x, i_lg):
            if t.shape[-2:] != i_m.shape[-2:]:
                raise ConfigError("input rasters are not aligned")
        return self.unet(torch.cat([i_m, i_x, i_lg], dim=1))


def sg_forward(model: SGNet, i_m, i_x, i_lg_hat):
    return model(i_m, i_x, i_lg_hat)


def require_trained(model, name: str) -> None:
    if model is None or not getattr(model, "trained", False):
        raise StateError(f"{name} has no trained parameters loaded")


@dataclass
class EpochLog:
    """Per-epoch mean loss components."""

    rows: list[dict] = field(default_factory=list)

    def add(self, epoch: int, parts: list[dict]) -> dict:
        keys = parts[0].keys() if parts else []
        row = {"epoch": epoch, **{k: float(np.mean([p[k] for p in parts])) for k in keys}}
        self.rows.append(row)
        return row

    def column(self, key: str) -> list[float]:
        return [r[key] for r in self.rows]


def _check(loss: torch.Tensor, stage: str, batch_index: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingFault("loss is not finite", stage=stage, batch_index=batch_index)


def pretrain_lg_encoder(model: LGCVAE, batches, epochs: int = 10, lr: float = 1e-3,
                        seed: int = 0) -> tuple[dict, EpochLog]:
    """Train the U-net as a deterministic autoencoder (no KL term, ``w = 0``).

    ``batches(epoch, rng)`` yields ``(i_m, i_x, i_lg)`` tensors. Returns the
    U-net state dict and the loss log.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.unet.parameters(), lr=lr)
    history = EpochLog()
    model.train()
    for epoch in range(epochs):
        parts = []
        for bi, (i_m, i_x, i_lg) in enumerate(batches(epoch, rng)):
            loss = focal_loss(model.autoencode(i_m, i_x), i_lg) / i_m.shape[0]
            _check(loss, "pretrain", bi)
            opt.zero_grad()
            loss.backward()
            opt.step()
            parts.append({"ae": loss.item()})
        history.add(epoch, parts)
    return {k: v.detach().clone() for k, v in model.unet.state_dict().items()}, history


def anneal_weight(step: int, steps_per_epoch: int, anneal_epochs: int) -> float:
    """Linear KL ramp from 0 to 1 over the first ``anneal_epochs`` epochs."""
    if anneal_epochs <= 0:
        return 1.0
    return min(1.0, step / float(anneal_epochs * steps_per_epoch))


def train_lg_cvae(model: LGCVAE, batches, epochs: int, lr: float, fb_per_dim: float,
                  anneal_epochs: int = 10, steps_per_epoch: int = 1, seed: int = 0,
                  optimizer: torch.optim.Optimizer | None = None) -> tuple[EpochLog, torch.optim.Optimizer]:
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    opt = optimizer or torch.optim.Adam(model.parameters(), lr=lr)
    history = EpochLog()
    model.train()
    step = 0
    for epoch in range(epochs):
        parts = []
        for bi, (i_m, i_x, i_lg) in enumerate(batches(epoch, rng)):
            recon, post, prior = model.forward_train(i_m, i_x, i_lg, gen, batch_index=bi)
            loss, comp = lg_loss(recon, i_lg, post, prior, fb_per_dim,
                                 anneal_weight(step, steps_per_epoch, anneal_epochs))
            _check(loss, "lg", bi)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            parts.append(comp)
        history.add(epoch, parts)
    model.trained = True
    return history, opt


def train_sg_net(model: SGNet, batches, epochs: int, lr: float, seed: int = 0,
                 optimizer: torch.optim.Optimizer | None = None) -> tuple[EpochLog, torch.optim.Optimizer]:
    """``batches`` yields ``(i_m, i_x, i_lg_in, i_sg_target)``."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = optimizer or torch.optim.Adam(model.parameters(), lr=lr)
    history = EpochLog()
    model.train()
    for epoch in range(epochs):
        parts = []
        for bi, (i_m, i_x, i_lg, i_sg) in enumerate(batches(epoch, rng)):
            loss = focal_loss(model(i_m, i_x, i_lg), i_sg) / i_m.shape[0]
            _check(loss, "sg", bi)
            opt.zero_grad()
            loss.backward()
            opt.step()
            parts.append({"focal": loss.item()})
        history.add(epoch, parts)
    model.trained = True
    return history, opt

