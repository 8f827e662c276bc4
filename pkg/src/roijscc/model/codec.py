from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from roijscc import geometry
from roijscc.errors import ConfigError, DomainError
from roijscc.geometry import DEFAULT_ROUTE_THRESHOLD, GridSpec
from roijscc.model.blocks import (
    PatchDivision,
    PatchEmbed,
    PatchMerging,
    ROIGroup,
    StageContext,
    stage_context,
)


@dataclass
class ModelConfig:
    arch: str = "roi"  # "roi" (swin/ROI blocks) or "conv"
    channels: tuple[int, ...] = (32, 64)
    blocks: tuple[int, ...] = (1, 2)
    c_m: int = 16
    heads: int = 2
    window: int = 4
    n_h: int = 4
    n_w: int = 4
    mask_injection: bool = True
    split_processing: bool = True
    route_threshold: int = DEFAULT_ROUTE_THRESHOLD
    ffn_expansion: float = 2.0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.blocks = tuple(int(b) for b in self.blocks)
        if self.arch not in ("roi", "conv"):
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if not self.channels or len(self.channels) != len(self.blocks):
            raise ConfigError("channels and blocks must be non-empty and the same length")
        if min(self.channels) < 1 or self.c_m < 1 or min(self.blocks) < 0:
            raise ConfigError("widths must be positive")
        GridSpec(self.n_h, self.n_w)

    @property
    def stages(self) -> int:
        return len(self.channels)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.n_h, self.n_w)

    @classmethod
    def full_scale(cls, **kw) -> "ModelConfig":
        base = dict(channels=(64, 96, 128, 192), blocks=(2, 2, 4, 2), heads=4, window=8, c_m=32)
        base.update(kw)
        return cls(**base)

    @classmethod
    def desk_scale(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["blocks"] = list(self.blocks)
        return d


def feature_shape(cfg: ModelConfig, height: int, width: int) -> tuple[int, int]:
    """Spatial size of the transmitted feature grid, after checking every stage divides."""
    scale = 2 ** cfg.stages
    if height % scale or width % scale:
        raise DomainError(f"image {height}x{width} not divisible by 2^L = {scale}")
    for i in range(1, cfg.stages + 1):
        cfg.grid.block_shape(height >> i, width >> i)
    return height // scale, width // scale


def gamma_batch(gammas, n: int) -> np.ndarray:
    g = geometry.as_gamma_array(gammas)
    if g.shape[0] == 1 and n > 1:
        g = np.repeat(g, n, axis=0)
    if g.shape[0] != n:
        raise DomainError(f"{g.shape[0]} ROI positions for a batch of {n}")
    return g


def to_complex(feat: torch.Tensor) -> torch.Tensor:
    """(N, h, w, 2C) real -> (N, h*w, C) complex; channels are interleaved (re, im) pairs."""
    n, h, w, c2 = feat.shape
    return torch.view_as_complex(feat.reshape(n, h * w, c2 // 2, 2).contiguous())


def from_complex(z: torch.Tensor, h: int, w: int) -> torch.Tensor:
    n, b, c = z.shape
    return torch.view_as_real(z).reshape(n, h, w, 2 * c)


class ROIEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        self.embed = PatchEmbed(ch[0])
        self.down = nn.ModuleList([nn.Identity()] + [PatchMerging(ch[i - 1], ch[i]) for i in range(1, cfg.stages)])
        self.groups = nn.ModuleList(
            ROIGroup(cfg.blocks[i], ch[i], cfg.heads, cfg.window,
                     mask_injection=cfg.mask_injection, split_processing=cfg.split_processing,
                     ffn_expansion=cfg.ffn_expansion)
            for i in range(cfg.stages)
        )
        self.head = nn.Linear(ch[-1], 2 * cfg.c_m)

    def forward(self, x: torch.Tensor, gammas: np.ndarray) -> torch.Tensor:
        cfg = self.cfg
        x = self.embed(x)
        for i in range(cfg.stages):
            x = self.down[i](x)
            ctx = _context(cfg, gammas, x)
            x = self.groups[i](x, ctx)
        return to_complex(self.head(x))


class ROIDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels[::-1]
        self.head = nn.Linear(2 * cfg.c_m, ch[0])
        self.groups = nn.ModuleList(
            ROIGroup(cfg.blocks[::-1][i], ch[i], cfg.heads, cfg.window,
                     mask_injection=cfg.mask_injection, split_processing=cfg.split_processing,
                     ffn_expansion=cfg.ffn_expansion)
            for i in range(cfg.stages)
        )
        outs = list(ch[1:]) + [3]
        self.up = nn.ModuleList(
            PatchDivision(ch[i], outs[i], norm=i < cfg.stages - 1) for i in range(cfg.stages)
        )

    def forward(self, feat: torch.Tensor, gammas: np.ndarray) -> torch.Tensor:
        x = self.head(feat)
        for i in range(self.cfg.stages):
            ctx = _context(self.cfg, gammas, x)
            x = self.up[i](self.groups[i](x, ctx))
        return torch.sigmoid(x.permute(0, 3, 1, 2))


def _context(cfg: ModelConfig, gammas: np.ndarray, x: torch.Tensor) -> StageContext:
    h, w = x.shape[1:3]
    return stage_context(gammas, cfg.grid, h, w, cfg.window, cfg.split_processing,
                         cfg.route_threshold, device=x.device, dtype=x.dtype)


class ROIJSCC(nn.Module):
    """ROI-conditioned encoder f and decoder g.

    ``encode`` maps images ``(N, 3, H, W)`` in [0, 1] to complex feature
    matrices ``(N, B, C_m)``; ``decode`` maps (zero-padded) received matrices
    back to images. Both take the ROI positions, one per sample or one shared.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.arch != "roi":
            raise ConfigError("ROIJSCC needs arch='roi'")
        self.cfg = cfg
        self.encoder = ROIEncoder(cfg)
        self.decoder = ROIDecoder(cfg)

    def encode(self, x: torch.Tensor, gammas) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise DomainError(f"expected images of shape (N, 3, H, W), got {tuple(x.shape)}")
        feature_shape(self.cfg, x.shape[-2], x.shape[-1])
        return self.encoder(x, gamma_batch(gammas, x.shape[0]))

    def decode(self, z: torch.Tensor, gammas, size: tuple[int, int] | None = None) -> torch.Tensor:
        fh, fw = _decode_grid(self.cfg, z, size)
        return self.decoder(from_complex(z, fh, fw), gamma_batch(gammas, z.shape[0]))

    def forward(self, x, gammas):
        return self.decode(self.encode(x, gammas), gammas, x.shape[-2:])


def _decode_grid(cfg: ModelConfig, z: torch.Tensor, size) -> tuple[int, int]:
    if z.dim() != 3 or z.shape[-1] != cfg.c_m:
        raise DomainError(f"expected feature matrix (N, B, {cfg.c_m}), got {tuple(z.shape)}")
    b = z.shape[1]
    if size is None:
        side = math.isqrt(b)
        if side * side != b:
            raise DomainError(f"cannot infer a square feature grid from B={b}; pass size")
        size = (side << cfg.stages, side << cfg.stages)
    fh, fw = feature_shape(cfg, *size)
    if fh * fw != b:
        raise DomainError(f"feature matrix has {b} rows, image size {tuple(size)} needs {fh * fw}")
    return fh, fw


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
