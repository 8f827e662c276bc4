"""Plain convolutional deepJSCC autoencoder, used as the non-attention baseline."""
from __future__ import annotations

import torch
import torch.nn as nn

from roijscc.errors import ConfigError
from roijscc.model.codec import ModelConfig, _decode_grid, feature_shape, from_complex, to_complex


def _down(cin, cout):
    return nn.Sequential(nn.Conv2d(cin, cout, 5, stride=2, padding=2), nn.PReLU(cout),
                         nn.Conv2d(cout, cout, 3, padding=1), nn.PReLU(cout))


def _up(cin, cout, last=False):
    layers = [nn.ConvTranspose2d(cin, cout, 5, stride=2, padding=2, output_padding=1)]
    if not last:
        layers += [nn.PReLU(cout), nn.Conv2d(cout, cout, 3, padding=1), nn.PReLU(cout)]
    return nn.Sequential(*layers)


class ConvJSCC(nn.Module):
    """Same encode/decode contract as :class:`ROIJSCC`; ROI positions are accepted and ignored."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.arch != "conv":
            raise ConfigError("ConvJSCC needs arch='conv'")
        self.cfg = cfg
        ch = cfg.channels
        self.encoder = nn.Sequential(
            *[_down(3 if i == 0 else ch[i - 1], ch[i]) for i in range(cfg.stages)],
            nn.Conv2d(ch[-1], 2 * cfg.c_m, 1),
        )
        rev = ch[::-1]
        outs = list(rev[1:]) + [3]
        self.decoder = nn.Sequential(
            nn.Conv2d(2 * cfg.c_m, rev[0], 1), nn.PReLU(rev[0]),
            *[_up(rev[i], outs[i], last=i == cfg.stages - 1) for i in range(cfg.stages)],
        )

    def encode(self, x: torch.Tensor, gammas=None) -> torch.Tensor:
        feature_shape(self.cfg, x.shape[-2], x.shape[-1])
        return to_complex(self.encoder(x).permute(0, 2, 3, 1))

    def decode(self, z: torch.Tensor, gammas=None, size=None) -> torch.Tensor:
        fh, fw = _decode_grid(self.cfg, z, size)
        return torch.sigmoid(self.decoder(from_complex(z, fh, fw).permute(0, 3, 1, 2)))

    def forward(self, x, gammas=None):
        return self.decode(self.encode(x), None, x.shape[-2:])
