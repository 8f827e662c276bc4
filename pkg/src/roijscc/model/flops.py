"""Analytical multiply-accumulate counts for ROI blocks and whole codecs.

Counts are split into ``matmul`` (linear layers and attention products),
``conv`` (depthwise and gate convolutions) and ``elementwise`` (gating
products and pooling). Norms, softmax and activations are not counted.
"""
from __future__ import annotations

from collections import Counter

import numpy as np

from roijscc import geometry
from roijscc.geometry import GridSpec
from roijscc.model.blocks import effective_window
from roijscc.model.codec import ModelConfig


def block_macs(h: int, w: int, dim: int, window: int, grid: GridSpec, heavy_patches=None, *,
               mask_injection: bool = True, ffn_expansion: float = 2.0, gate_kernel: int = 7,
               joint_tail: bool = True) -> Counter:
    """MACs of one ROI block on one (h, w, dim) feature map.

    ``heavy_patches`` is an (n_h, n_w) boolean routing mask; ``None`` routes
    every patch to self-attention.
    """
    ws = effective_window(window, grid, h, w)
    positions = h * w
    if heavy_patches is None:
        heavy_pos = positions
    else:
        heavy_pos = int(geometry.upsample_nearest(np.asarray(heavy_patches, dtype=bool), grid, h, w).sum())
    light_pos = positions - heavy_pos
    n = ws * ws
    c = Counter()
    if mask_injection:
        c["matmul"] += positions * dim
    # windowed attention: qkv + output projection, then QK^T and AV inside each window
    c["matmul"] += heavy_pos * (4 * dim * dim + 2 * n * dim)
    if light_pos:
        c["matmul"] += light_pos * dim * dim
        # the gate map is convolved densely; masking happens on the pooled input
        c["conv"] += positions * 2 * gate_kernel ** 2
        c["elementwise"] += light_pos * 3 * dim  # mean + max pooling, gate product
    if joint_tail:
        hidden = int(dim * ffn_expansion)
        ca_hidden = max(1, dim // 4)
        c["conv"] += positions * 9 * dim + positions * 9 * 2 * hidden
        c["matmul"] += 2 * dim * ca_hidden + positions * dim * dim
        c["matmul"] += positions * (dim * 2 * hidden + hidden * dim)
        c["elementwise"] += positions * (dim + hidden)
    return c


def stage_routing(cfg: ModelConfig, gamma) -> np.ndarray | None:
    if not cfg.split_processing:
        return None
    rmap = geometry.classify_regions(gamma, cfg.n_h, cfg.n_w)
    return geometry.heavy_patches(rmap.labels, cfg.route_threshold)


def codec_macs(cfg: ModelConfig, height: int, width: int, gamma) -> Counter:
    """MACs of encoder plus decoder for one image (ROI architecture only)."""
    if cfg.arch != "roi":
        raise ValueError("codec_macs covers the ROI architecture only")
    routing = stage_routing(cfg, gamma)
    ch = cfg.channels
    total = Counter()
    hh, ww = height // 2, width // 2
    total["matmul"] += hh * ww * 3 * 4 * ch[0]  # 2x2 patch embedding
    for i in range(cfg.stages):
        if i:
            hh, ww = hh // 2, ww // 2
            total["matmul"] += hh * ww * 4 * ch[i - 1] * ch[i]
        for _ in range(cfg.blocks[i]):
            total += block_macs(hh, ww, ch[i], cfg.window, cfg.grid, routing,
                                mask_injection=cfg.mask_injection, ffn_expansion=cfg.ffn_expansion)
    total["matmul"] += hh * ww * ch[-1] * 2 * cfg.c_m
    # decoder mirrors the encoder
    total["matmul"] += hh * ww * 2 * cfg.c_m * ch[-1]
    rev = ch[::-1]
    outs = list(rev[1:]) + [3]
    for i in range(cfg.stages):
        for _ in range(cfg.blocks[::-1][i]):
            total += block_macs(hh, ww, rev[i], cfg.window, cfg.grid, routing,
                                mask_injection=cfg.mask_injection, ffn_expansion=cfg.ffn_expansion)
        total["matmul"] += hh * ww * rev[i] * 4 * outs[i]
        hh, ww = hh * 2, ww * 2
    return total
