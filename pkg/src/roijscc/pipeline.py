"""End-to-end link: encode, allocate, normalise, AWGN, zero-pad, decode.

Packing and unpacking are realised as a keep-mask over the ``(N, B, C_m)``
feature matrix. This is the same map as ``bandwidth.pack`` followed by
``bandwidth.unpack_zero_pad`` but stays batched when every sample has its own
ROI position.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from roijscc.bandwidth import LinkConfig
from roijscc.channel import channel_noise, power_normalize
from roijscc.model.codec import feature_shape, gamma_batch


@dataclass(frozen=True)
class LinkSettings:
    k: int
    tau: float = 0.1
    adaptive: bool = True
    power: float = 1.0


@dataclass
class Transmission:
    x_hat: torch.Tensor
    k_used: torch.Tensor  # (N,) transmitted complex symbols per image


def link_config(model, link: LinkSettings, height: int, width: int) -> LinkConfig:
    fh, fw = feature_shape(model.cfg, height, width)
    return LinkConfig(model.cfg.grid, fh, fw, link.k, model.cfg.c_m, link.tau, link.adaptive)


def transmit(model, x: torch.Tensor, gammas, link: LinkSettings, snr_db: float,
             generator: torch.Generator | None = None,
             noise: torch.Tensor | None = None) -> Transmission:
    """Run one batch through the link. ``noise`` overrides the generator (for paired comparisons)."""
    n, _, height, width = x.shape
    g = gamma_batch(gammas, n)
    cfg = link_config(model, link, height, width)
    z = model.encode(x, g)
    keep = torch.from_numpy(cfg.keep_mask(g)).to(x.device)
    k_used = keep.sum(dim=(1, 2))
    z_bar = power_normalize(z * keep, link.power, dim=(1, 2), k=k_used)
    if noise is None:
        noise = channel_noise(z.shape, snr_db, generator, dtype=z.dtype, device=z.device)
    z_hat = (z_bar + noise) * keep
    return Transmission(model.decode(z_hat, g, (height, width)), k_used)
