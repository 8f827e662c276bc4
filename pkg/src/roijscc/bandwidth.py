"""ROI-adaptive bandwidth allocation and symbol packing.

Each feature vector keeps its first ``d_i`` complex components, where ``d_i``
depends on the region of the patch the feature falls in. The receiver
rebuilds the same layout from the ROI position and zero-pads the rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from roijscc import geometry
from roijscc.errors import ConfigError, DomainError, ProtocolError
from roijscc.geometry import GridSpec, RegionMap


@dataclass(frozen=True, eq=False)
class Allocation:
    c_avg: int
    c_roi: int
    c_rop: int
    c_roni: int
    tau: float
    eta: float
    per_feature_dims: np.ndarray  # (B,) int

    @property
    def total(self) -> int:
        return int(self.per_feature_dims.sum())


def average_dims(k: int, n_features: int) -> int:
    if n_features < 1 or k % n_features:
        raise ConfigError(f"bandwidth k={k} is not divisible by B={n_features} feature vectors")
    c_avg = k // n_features
    if c_avg < 1:
        raise ConfigError(f"average dimension per feature must be >= 1, got k={k}, B={n_features}")
    return c_avg


def allocate(
    k: int,
    region_map: RegionMap,
    feat_h: int,
    feat_w: int,
    tau: float,
    c_m: int,
    adaptive: bool = True,
) -> Allocation:
    """Per-feature complex dimensions under the total budget ``k``.

    With ``adaptive=False`` every feature gets ``k / B`` dimensions; this is the
    bypass used by the non-ROI variants and lets ``tau`` take any value.
    """
    n_features = feat_h * feat_w
    c_avg = average_dims(k, n_features)
    if c_avg > c_m:
        raise ConfigError(f"average dimension {c_avg} exceeds feature width C_m={c_m}")
    labels = geometry.feature_labels(region_map, feat_h, feat_w).reshape(-1)
    n_roi = region_map.n_roi
    eta = (region_map.grid.n_patches - 9 * n_roi) / n_roi

    if not adaptive:
        dims = np.full(n_features, c_avg, dtype=np.int64)
        return Allocation(c_avg, c_avg, c_avg, c_avg, 0.0, eta, dims)
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must lie in (0, 1), got {tau}")

    # The small epsilon keeps exact products like 1.7 * 10 from flooring to 16.
    c_roi = min(c_m, math.floor((1.0 + eta * tau) * c_avg + 1e-9))
    c_roi = max(c_roi, c_avg)
    c_roni = max(1, math.floor((1.0 - tau) * c_avg + 1e-9))
    per_region = np.array([c_roni, c_avg, c_roi], dtype=np.int64)
    dims = per_region[labels]
    if dims.sum() > k:
        raise AssertionError(f"allocation uses {dims.sum()} > k={k} complex dimensions")
    return Allocation(c_avg, c_roi, c_avg, c_roni, tau, eta, dims)


@dataclass(frozen=True)
class LinkConfig:
    """Everything both ends need, besides the ROI position, to agree on a layout."""

    grid: GridSpec
    feat_h: int
    feat_w: int
    k: int
    c_m: int
    tau: float = 0.1
    adaptive: bool = True

    @property
    def n_features(self) -> int:
        return self.feat_h * self.feat_w

    def allocation(self, gamma) -> Allocation:
        g = geometry.as_gamma_array(gamma)[0]
        return _allocation_cached(self, int(g[0]), int(g[1]))

    def keep_mask(self, gammas) -> np.ndarray:
        """Boolean (N, B, C_m); True on transmitted coordinates."""
        g = geometry.as_gamma_array(gammas)
        return np.stack([_keep_cached(self, int(h), int(w)) for h, w in g])


@lru_cache(maxsize=4096)
def _allocation_cached(cfg: LinkConfig, h: int, w: int) -> Allocation:
    rmap = geometry.classify_regions((h, w), cfg.grid.n_h, cfg.grid.n_w)
    return allocate(cfg.k, rmap, cfg.feat_h, cfg.feat_w, cfg.tau, cfg.c_m, cfg.adaptive)


@lru_cache(maxsize=4096)
def _keep_cached(cfg: LinkConfig, h: int, w: int) -> np.ndarray:
    dims = _allocation_cached(cfg, h, w).per_feature_dims
    mask = np.arange(cfg.c_m)[None, :] < dims[:, None]
    mask.setflags(write=False)
    return mask


@dataclass(frozen=True, eq=False)
class PackedSymbols:
    values: np.ndarray | torch.Tensor  # (k_used,) complex
    layout: np.ndarray  # (B, 2): feature index, kept dims

    def __len__(self) -> int:
        return int(self.values.shape[0])


def _dims_mask(dims: np.ndarray, c_m: int) -> np.ndarray:
    if (dims > c_m).any() or (dims < 0).any():
        raise AssertionError(f"per-feature dims must lie in [0, {c_m}]")
    return np.arange(c_m)[None, :] < dims[:, None]


def pack(z, alloc: Allocation) -> PackedSymbols:
    """Keep the first ``alloc.per_feature_dims[i]`` components of each row of ``z`` (B, C_m)."""
    dims = alloc.per_feature_dims
    if z.shape[0] != dims.shape[0]:
        raise DomainError(f"feature matrix has {z.shape[0]} rows, allocation expects {dims.shape[0]}")
    mask = _dims_mask(dims, z.shape[1])
    if isinstance(z, torch.Tensor):
        mask = torch.from_numpy(mask).to(z.device)
    layout = np.stack([np.arange(dims.shape[0]), dims], axis=1)
    return PackedSymbols(z[mask], layout)


def unpack_zero_pad(z_r, gamma, cfg: LinkConfig):
    """Rebuild the (B, C_m) feature matrix from received symbols, zero-filling dropped slots."""
    mask = cfg.keep_mask(gamma)[0]
    expected = int(mask.sum())
    if z_r.shape[0] != expected:
        raise ProtocolError(
            f"received {z_r.shape[0]} symbols but layout for ROI {tuple(gamma)} expects {expected}"
        )
    if isinstance(z_r, torch.Tensor):
        out = z_r.new_zeros((cfg.n_features, cfg.c_m))
        out[torch.from_numpy(mask).to(z_r.device)] = z_r
    else:
        out = np.zeros((cfg.n_features, cfg.c_m), dtype=np.result_type(z_r.dtype, np.complex64))
        out[mask] = z_r
    return out
