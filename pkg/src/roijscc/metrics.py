"""ROI-weighted loss and region-wise PSNR.

Images are channel-first, ``(3, H, W)`` or batched ``(N, 3, H, W)``, with
values in [0, 1].
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from roijscc import geometry
from roijscc.errors import ConfigError, DomainError
from roijscc.geometry import GridSpec, Region, RegionMap

MAX_PIXEL = 255.0


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        # alpha = 1.0 is what the reference training run uses, so the upper bound is inclusive.
        if not 0.0 < self.beta < self.alpha <= 1.0:
            raise ConfigError(f"need 0 < beta < alpha <= 1, got alpha={self.alpha}, beta={self.beta}")


def pixel_labels(gammas, grid: GridSpec, height: int, width: int) -> np.ndarray:
    """Region label per pixel, shape (N, H, W)."""
    return geometry.upsample_nearest(geometry.region_labels(gammas, grid), grid, height, width)


def extract_region(x, region_map: RegionMap, label: Region):
    """Pixels of every patch carrying ``label`` as an array (n_patches, C, ph, pw).

    Patches come out in row-major grid order. An absent label gives an empty
    leading axis.
    """
    grid = region_map.grid
    c, height, width = x.shape[-3:]
    ph, pw = grid.block_shape(height, width)
    rs, cs = np.nonzero(region_map.labels == label)
    blocks = [x[..., r * ph:(r + 1) * ph, cc * pw:(cc + 1) * pw] for r, cc in zip(rs, cs)]
    if isinstance(x, torch.Tensor):
        return torch.stack(blocks) if blocks else x.new_zeros((0, c, ph, pw))
    return np.stack(blocks) if blocks else np.zeros((0, c, ph, pw), dtype=x.dtype)


def _region_sq_means(x: torch.Tensor, x_hat: torch.Tensor, labels: torch.Tensor):
    """Per-sample MSE over all pixels, ROI pixels and ROP pixels."""
    err = (x - x_hat).square().mean(dim=-3)  # average over colour channels
    total = err.flatten(1).mean(dim=1)
    out = [total]
    for region in (Region.ROI, Region.ROP):
        sel = (labels == region).to(err.dtype)
        count = sel.flatten(1).sum(dim=1)
        s = (err * sel).flatten(1).sum(dim=1)
        out.append(torch.where(count > 0, s / count.clamp_min(1), torch.zeros_like(s)))
    return out


def roi_loss(x: torch.Tensor, x_hat: torch.Tensor, gammas, grid: GridSpec,
             weights: LossWeights = LossWeights()) -> torch.Tensor:
    """MSE + alpha * MSE(ROI) + beta * MSE(ROP), averaged over the batch."""
    if x.shape != x_hat.shape:
        raise DomainError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if x.dim() == 3:
        x, x_hat = x[None], x_hat[None]
    labels = torch.from_numpy(pixel_labels(gammas, grid, x.shape[-2], x.shape[-1])).to(x.device)
    total, roi, rop = _region_sq_means(x, x_hat, labels)
    return (total + weights.alpha * roi + weights.beta * rop).mean()


def mse_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    return (x - x_hat).square().mean()


def _to_numpy(a) -> np.ndarray:
    if isinstance(a, torch.Tensor):
        a = a.detach().cpu().numpy()
    return np.asarray(a, dtype=np.float64)


def psnr_from_mse(mse_255: float) -> float:
    if mse_255 == 0.0:
        return math.inf
    return 10.0 * math.log10(MAX_PIXEL ** 2 / mse_255)


def psnr(x, x_hat) -> float:
    """PSNR in dB of a [0, 1] image pair, measured on the 0-255 scale; inf when identical."""
    a = _to_numpy(x) * MAX_PIXEL
    b = np.clip(_to_numpy(x_hat), 0.0, 1.0) * MAX_PIXEL
    return psnr_from_mse(float(np.mean((a - b) ** 2)))


def region_psnr(x, x_hat, gamma, grid: GridSpec) -> tuple[float, float]:
    """(PSNR over the ROI patch, PSNR over the whole image) for one image."""
    a = _to_numpy(x)
    b = np.clip(_to_numpy(x_hat), 0.0, 1.0)
    rmap = geometry.classify_regions(gamma, grid.n_h, grid.n_w)
    roi_a = extract_region(a, rmap, Region.ROI)
    roi_b = extract_region(b, rmap, Region.ROI)
    return psnr(roi_a, roi_b), psnr(a, b)


@dataclass(frozen=True)
class RegionReport:
    image_id: str
    h_gamma: int
    w_gamma: int
    snr_db: float
    cpp: str
    psnr_roi: float
    psnr_avg: float


CSV_FIELDS = [f.name for f in fields(RegionReport)]


def write_reports(path: Path, reports: Iterable[RegionReport]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in reports:
            row = asdict(r)
            for key in ("psnr_roi", "psnr_avg"):
                row[key] = f"{row[key]:.6f}"
            writer.writerow(row)


def read_reports(path: Path) -> list[RegionReport]:
    with Path(path).open(newline="") as fh:
        return [
            RegionReport(
                row["image_id"], int(row["h_gamma"]), int(row["w_gamma"]), float(row["snr_db"]),
                row["cpp"], float(row["psnr_roi"]), float(row["psnr_avg"]),
            )
            for row in csv.DictReader(fh)
        ]
