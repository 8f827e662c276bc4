"""Building blocks of the ROI-guided encoder/decoder.

Feature maps inside the network are channels-last, ``(N, h, w, C)``, so that
norms and projections are plain ``LayerNorm``/``Linear``; depthwise
convolutions permute to NCHW views.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from roijscc import geometry
from roijscc.errors import DomainError
from roijscc.geometry import GridSpec


def effective_window(window: int, grid: GridSpec, h: int, w: int) -> int:
    """Attention window side at a stage: the configured window, capped at the patch side."""
    ph, pw = grid.block_shape(h, w)
    ws = min(window, ph, pw)
    if ph % ws or pw % ws:
        raise DomainError(f"window {ws} does not tile the {ph}x{pw} feature block of each patch")
    return ws


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """(N, h, w, C) -> (N * nW, ws*ws, C), windows in row-major order per sample."""
    n, h, w, c = x.shape
    x = x.view(n, h // ws, ws, w // ws, ws, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, c)


def window_reverse(t: torch.Tensor, ws: int, n: int, h: int, w: int) -> torch.Tensor:
    c = t.shape[-1]
    t = t.view(n, h // ws, w // ws, ws, ws, c)
    return t.permute(0, 1, 3, 2, 4, 5).reshape(n, h, w, c)


def _nchw(fn, x):
    return fn(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)


@dataclass
class StageContext:
    """Per-stage ROI information shared by every block of a stage."""

    mask: torch.Tensor  # (N, h, w, 1) importance mask
    heavy: torch.Tensor | None  # (N, h, w, 1) bool; None when every position is heavy
    heavy_windows: torch.Tensor | None  # flat indices of windows on the heavy path
    light_positions: torch.Tensor | None  # flat indices of (n, y, x) positions on the light path
    window: int

    @property
    def all_heavy(self) -> bool:
        return self.heavy is None


def stage_context(gammas: np.ndarray, grid: GridSpec, h: int, w: int, window: int,
                  split: bool, threshold: int, device=None, dtype=torch.float32) -> StageContext:
    ws = effective_window(window, grid, h, w)
    labels = geometry.region_labels(gammas, grid)
    mask = geometry.upsample_nearest(geometry.EMBEDDING[labels], grid, h, w)
    mask_t = torch.from_numpy(np.ascontiguousarray(mask[..., None])).to(device=device, dtype=dtype)
    if not split:
        return StageContext(mask_t, None, None, None, ws)
    heavy = geometry.upsample_nearest(geometry.heavy_patches(labels, threshold), grid, h, w)
    # windows never straddle patches, so a window's top-left feature decides its path
    win_heavy = heavy[:, ::ws, ::ws].reshape(-1)
    return StageContext(
        mask_t,
        torch.from_numpy(np.ascontiguousarray(heavy[..., None])).to(device),
        torch.from_numpy(np.flatnonzero(win_heavy)).to(device),
        torch.from_numpy(np.flatnonzero(~heavy)).to(device),
        ws,
    )


def _relative_index(ws: int, table_window: int) -> torch.Tensor:
    coords = torch.stack(torch.meshgrid(torch.arange(ws), torch.arange(ws), indexing="ij")).flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (table_window - 1)
    return rel[..., 0] * (2 * table_window - 1) + rel[..., 1]


class WindowAttention(nn.Module):
    """Multi-head self-attention inside non-overlapping windows, with relative position bias."""

    def __init__(self, dim: int, heads: int, window: int):
        super().__init__()
        if dim % heads:
            raise DomainError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.window = window
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.bias_table = nn.Parameter(torch.zeros((2 * window - 1) ** 2, heads))
        nn.init.trunc_normal_(self.bias_table, std=0.02)
        self.register_buffer("rel_index", _relative_index(window, window), persistent=False)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        b, n, c = t.shape
        ws = int(round(n ** 0.5))
        qkv = self.qkv(t).view(b, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1) + self._bias(ws)
        out = attn.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(b, n, c))

    def _bias(self, ws: int) -> torch.Tensor:
        # a coarse stage may use a smaller window; it reads the central offsets of the table
        idx = self.rel_index if ws == self.window else _relative_index(ws, self.window).to(self.rel_index.device)
        n = ws * ws
        return self.bias_table[idx.reshape(-1)].view(n, n, -1).permute(2, 0, 1)


class SpatialGate(nn.Module):
    """Spatial attention: channel mean/max map -> k x k conv -> sigmoid gate."""

    def __init__(self, kernel: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2)

    def forward(self, t: torch.Tensor, keep: torch.Tensor | None = None) -> torch.Tensor:
        pooled = torch.cat([t.mean(dim=-1, keepdim=True), t.amax(dim=-1, keepdim=True)], dim=-1)
        if keep is not None:
            # positions on the other path must not feed the gate
            pooled = pooled * keep
        return t * torch.sigmoid(_nchw(self.conv, pooled))


class ChannelAttention(nn.Module):
    """Squeeze-and-excitation channel gate."""

    def __init__(self, dim: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, dim // reduction)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        s = x.mean(dim=(1, 2), keepdim=True)
        return x * torch.sigmoid(self.fc2(F.relu(self.fc1(s))))


class GatedDConvFFN(nn.Module):
    """Gated depthwise-conv feed-forward network."""

    def __init__(self, dim: int, expansion: float = 2.0):
        super().__init__()
        hidden = int(dim * expansion)
        self.project_in = nn.Linear(dim, 2 * hidden)
        self.dwconv = nn.Conv2d(2 * hidden, 2 * hidden, 3, padding=1, groups=2 * hidden)
        self.project_out = nn.Linear(hidden, dim)

    def forward(self, x):
        a, b = _nchw(self.dwconv, self.project_in(x)).chunk(2, dim=-1)
        return self.project_out(F.gelu(a) * b)


class ROIBlock(nn.Module):
    """One ROI block.

    Order: add the importance feature map, route windows of heavy patches
    through self-attention and the rest through the spatial gate, then a
    joint depthwise-conv + channel-attention mixer and the gated FFN, each
    as a residual branch.
    """

    def __init__(self, dim: int, heads: int, window: int, *, mask_injection: bool = True,
                 split_processing: bool = True, joint_tail: bool = True,
                 ffn_expansion: float = 2.0, gate_kernel: int = 7):
        super().__init__()
        self.dim = dim
        self.mask_proj = nn.Linear(1, dim) if mask_injection else None
        if self.mask_proj is not None:
            nn.init.zeros_(self.mask_proj.weight)
            nn.init.zeros_(self.mask_proj.bias)
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window)
        if split_processing:
            self.gate = SpatialGate(gate_kernel)
            self.gate_proj = nn.Linear(dim, dim)
        else:
            self.gate = self.gate_proj = None
        self.joint_tail = joint_tail
        self.norm_mix = nn.LayerNorm(dim)
        self.dwconv = nn.Conv2d(dim, dim, 3, padding=1, groups=dim)
        self.ca = ChannelAttention(dim)
        self.mix_proj = nn.Linear(dim, dim)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = GatedDConvFFN(dim, ffn_expansion)

    def output_projections(self) -> list[nn.Module]:
        mods = [self.mask_proj, self.attn.proj, self.gate_proj, self.mix_proj, self.ffn.project_out]
        return [m for m in mods if m is not None]

    def importance_feature(self, mask: torch.Tensor) -> torch.Tensor:
        """Learned map from the (N, h, w, 1) importance mask to an (N, h, w, C) additive feature."""
        if mask.shape[-1] != 1:
            raise DomainError(f"importance mask must have one channel, got {mask.shape[-1]}")
        return self.mask_proj(mask)

    def forward(self, x: torch.Tensor, ctx: StageContext) -> torch.Tensor:
        n, h, w, c = x.shape
        if ctx.mask.shape[1:3] != (h, w):
            raise DomainError(f"importance mask {tuple(ctx.mask.shape[1:3])} does not match features {(h, w)}")
        if self.mask_proj is not None:
            x = x + self.importance_feature(ctx.mask)

        t = self.norm_attn(x)
        ws = ctx.window
        windows = window_partition(t, ws)
        if ctx.all_heavy or self.gate is None:
            x = x + window_reverse(self.attn(windows), ws, n, h, w)
        else:
            idx = ctx.heavy_windows
            attended = windows.new_zeros(windows.shape).index_copy(0, idx, self.attn(windows[idx]))
            delta = window_reverse(attended, ws, n, h, w).reshape(-1, c)
            light = ctx.light_positions
            gated = self.gate(t, (~ctx.heavy).to(t.dtype)).reshape(-1, c)
            delta = delta.index_copy(0, light, self.gate_proj(gated[light]))
            x = x + delta.view(n, h, w, c)

        if self.joint_tail:
            t = _nchw(self.dwconv, self.norm_mix(x))
            x = x + self.mix_proj(self.ca(t))
            x = x + self.ffn(self.norm_ffn(x))
        return x


def zero_output_projections(module: nn.Module) -> None:
    """Zero every residual-branch output projection, making each ROI block an identity map."""
    with torch.no_grad():
        for blk in module.modules():
            if isinstance(blk, ROIBlock):
                for proj in blk.output_projections():
                    proj.weight.zero_()
                    if proj.bias is not None:
                        proj.bias.zero_()


class ROIGroup(nn.Module):
    def __init__(self, depth: int, dim: int, heads: int, window: int, **block_kw):
        super().__init__()
        self.blocks = nn.ModuleList(ROIBlock(dim, heads, window, **block_kw) for _ in range(depth))

    def forward(self, x, ctx: StageContext):
        for blk in self.blocks:
            x = blk(x, ctx)
        return x


class PatchEmbed(nn.Module):
    """Image (N, 3, H, W) -> non-overlapping 2x2 patch tokens (N, H/2, W/2, C)."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Conv2d(3, dim, 2, stride=2)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        return self.norm(self.proj(x).permute(0, 2, 3, 1))


class PatchMerging(nn.Module):
    """2x downsampling: concatenate each 2x2 neighbourhood, norm, linear to the next width."""

    def __init__(self, dim_in: int, dim_out: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim_in)
        self.reduction = nn.Linear(4 * dim_in, dim_out, bias=False)

    def forward(self, x):
        n, h, w, c = x.shape
        x = x.view(n, h // 2, 2, w // 2, 2, c).permute(0, 1, 3, 2, 4, 5).reshape(n, h // 2, w // 2, 4 * c)
        return self.reduction(self.norm(x))


class PatchDivision(nn.Module):
    """2x upsampling: linear to four times the next width, then depth-to-space."""

    def __init__(self, dim_in: int, dim_out: int, norm: bool = True):
        super().__init__()
        self.dim_out = dim_out
        self.expand = nn.Linear(dim_in, 4 * dim_out)
        self.norm = nn.LayerNorm(dim_out) if norm else nn.Identity()

    def forward(self, x):
        n, h, w, _ = x.shape
        c = self.dim_out
        x = self.expand(x).view(n, h, w, 2, 2, c).permute(0, 1, 3, 2, 4, 5).reshape(n, 2 * h, 2 * w, c)
        return self.norm(x)
