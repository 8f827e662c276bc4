"""Region classification on the patch grid.

An image is split into ``n_h x n_w`` patches. The single ROI patch sits at a
1-based position ``(h, w)``; its 8-neighbours are periphery (ROP) and every
other patch is non-interest (RONI). Everything here is numpy and pure, and
accepts either one position or a batch of positions of shape ``(N, 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import NamedTuple, Sequence, Union

import numpy as np

from roijscc.errors import DomainError


class Region(IntEnum):
    RONI = 0
    ROP = 1
    ROI = 2


# ROI embedding value per region label, indexed by Region.
EMBEDDING = np.array([0.0, 0.5, 1.0], dtype=np.float32)

DEFAULT_ROUTE_THRESHOLD = 3


class ROIPosition(NamedTuple):
    h: int
    w: int


@dataclass(frozen=True)
class GridSpec:
    n_h: int
    n_w: int

    def __post_init__(self):
        if self.n_h < 1 or self.n_w < 1:
            raise DomainError(f"grid must be at least 1x1, got {self.n_h}x{self.n_w}")

    @property
    def n_patches(self) -> int:
        return self.n_h * self.n_w

    def positions(self) -> list[ROIPosition]:
        return [ROIPosition(h, w) for h in range(1, self.n_h + 1) for w in range(1, self.n_w + 1)]

    def interior_positions(self) -> list[ROIPosition]:
        return [ROIPosition(h, w) for h in range(2, self.n_h) for w in range(2, self.n_w)]

    def block_shape(self, feat_h: int, feat_w: int) -> tuple[int, int]:
        """Features per patch along each axis; raises unless the grid divides exactly."""
        if feat_h < 1 or feat_w < 1 or feat_h % self.n_h or feat_w % self.n_w:
            raise DomainError(
                f"feature map {feat_h}x{feat_w} is not a positive multiple of grid {self.n_h}x{self.n_w}"
            )
        return feat_h // self.n_h, feat_w // self.n_w


GammaLike = Union[ROIPosition, Sequence[int], np.ndarray]


def as_gamma_array(gamma: GammaLike) -> np.ndarray:
    """Return positions as an int64 array of shape (N, 2)."""
    arr = np.asarray(gamma, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError(f"ROI position must have shape (2,) or (N, 2), got {arr.shape}")
    return arr


def _check_in_grid(gammas: np.ndarray, grid: GridSpec) -> None:
    h, w = gammas[:, 0], gammas[:, 1]
    bad = (h < 1) | (h > grid.n_h) | (w < 1) | (w > grid.n_w)
    if bad.any():
        g = tuple(int(v) for v in gammas[np.argmax(bad)])
        raise DomainError(f"ROI position {g} outside {grid.n_h}x{grid.n_w} grid")


def _labels(gammas: np.ndarray, grid: GridSpec) -> np.ndarray:
    rows = np.arange(1, grid.n_h + 1)[None, :, None]
    cols = np.arange(1, grid.n_w + 1)[None, None, :]
    cheb = np.maximum(
        np.abs(rows - gammas[:, 0, None, None]), np.abs(cols - gammas[:, 1, None, None])
    )
    labels = np.full(cheb.shape, Region.RONI, dtype=np.int8)
    labels[cheb == 1] = Region.ROP
    labels[cheb == 0] = Region.ROI
    return labels


@dataclass(frozen=True, eq=False)
class RegionMap:
    """Patch labels for one ROI position."""

    gamma: ROIPosition
    grid: GridSpec
    labels: np.ndarray  # (n_h, n_w) int8 over Region

    def count(self, region: Region) -> int:
        return int(np.count_nonzero(self.labels == region))

    @property
    def n_roi(self) -> int:
        return self.count(Region.ROI)

    @property
    def n_rop(self) -> int:
        return self.count(Region.ROP)

    @property
    def n_roni(self) -> int:
        return self.count(Region.RONI)

    def cells(self, region: Region) -> set[tuple[int, int]]:
        rs, cs = np.nonzero(self.labels == region)
        return {(int(r) + 1, int(c) + 1) for r, c in zip(rs, cs)}

    def embedding(self) -> np.ndarray:
        return EMBEDDING[self.labels]


@lru_cache(maxsize=1024)
def _classify_cached(h: int, w: int, grid: GridSpec) -> RegionMap:
    labels = _labels(np.array([[h, w]]), grid)[0]
    labels.setflags(write=False)
    return RegionMap(ROIPosition(h, w), grid, labels)


def classify_regions(gamma: GammaLike, n_h: int, n_w: int) -> RegionMap:
    grid = GridSpec(n_h, n_w)
    g = as_gamma_array(gamma)
    if g.shape[0] != 1:
        raise DomainError("classify_regions takes a single ROI position")
    _check_in_grid(g, grid)
    return _classify_cached(int(g[0, 0]), int(g[0, 1]), grid)


def region_labels(gammas: GammaLike, grid: GridSpec) -> np.ndarray:
    """Batched patch labels, shape (N, n_h, n_w)."""
    g = as_gamma_array(gammas)
    _check_in_grid(g, grid)
    return _labels(g, grid)


def upsample_nearest(patch_values: np.ndarray, grid: GridSpec, feat_h: int, feat_w: int) -> np.ndarray:
    """Nearest-neighbour upsampling of (..., n_h, n_w) to (..., feat_h, feat_w)."""
    bh, bw = grid.block_shape(feat_h, feat_w)
    return np.repeat(np.repeat(patch_values, bh, axis=-2), bw, axis=-1)


def make_importance_mask(region_map: RegionMap, feat_h: int, feat_w: int) -> np.ndarray:
    """ROI embedding (1.0 / 0.5 / 0.0) upsampled to the feature resolution."""
    return upsample_nearest(region_map.embedding(), region_map.grid, feat_h, feat_w)


def importance_masks(gammas: GammaLike, grid: GridSpec, feat_h: int, feat_w: int) -> np.ndarray:
    """Batched importance masks, shape (N, feat_h, feat_w), float32."""
    return upsample_nearest(EMBEDDING[region_labels(gammas, grid)], grid, feat_h, feat_w)


def feature_labels(region_map: RegionMap, feat_h: int, feat_w: int) -> np.ndarray:
    return upsample_nearest(region_map.labels, region_map.grid, feat_h, feat_w)


def _roni_neighbour_counts(labels: np.ndarray) -> np.ndarray:
    roni = np.pad((labels == Region.RONI).astype(np.int16), ((0, 0), (1, 1), (1, 1)))
    n_h, n_w = labels.shape[-2:]
    total = np.zeros(labels.shape, dtype=np.int16)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                total += roni[:, 1 + dr : 1 + dr + n_h, 1 + dc : 1 + dc + n_w]
    return total


def heavy_patches(labels: np.ndarray, threshold: int = DEFAULT_ROUTE_THRESHOLD) -> np.ndarray:
    """Boolean (N, n_h, n_w): True where a patch takes the self-attention path.

    ROI is always heavy and RONI always light. A ROP patch goes light when it
    touches more than ``threshold`` RONI patches.
    """
    if threshold < 1:
        raise DomainError(f"routing threshold must be >= 1, got {threshold}")
    labels = np.asarray(labels)
    squeeze = labels.ndim == 2
    if squeeze:
        labels = labels[None]
    crowded = _roni_neighbour_counts(labels) > threshold
    heavy = (labels == Region.ROI) | ((labels == Region.ROP) & ~crowded)
    return heavy[0] if squeeze else heavy


@dataclass(frozen=True, eq=False)
class AttentionRouting:
    region_map: RegionMap
    heavy_mask: np.ndarray  # (n_h, n_w) bool

    @property
    def heavy(self) -> set[tuple[int, int]]:
        rs, cs = np.nonzero(self.heavy_mask)
        return {(int(r) + 1, int(c) + 1) for r, c in zip(rs, cs)}

    @property
    def light(self) -> set[tuple[int, int]]:
        rs, cs = np.nonzero(~self.heavy_mask)
        return {(int(r) + 1, int(c) + 1) for r, c in zip(rs, cs)}


def route_attention(region_map: RegionMap, threshold: int = DEFAULT_ROUTE_THRESHOLD) -> AttentionRouting:
    mask = heavy_patches(region_map.labels, threshold)
    mask.setflags(write=False)
    return AttentionRouting(region_map, mask)
