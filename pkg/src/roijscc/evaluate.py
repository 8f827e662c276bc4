"""Paired evaluation and ablation sweeps.

Every model in one call sees the same images, the same ROI draws and the same
unit-variance noise (common random numbers), so per-image PSNR differences
between variants are paired samples.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from roijscc import data
from roijscc.channel import bandwidth_for_cpp, noise_variance
from roijscc.config import RunConfig
from roijscc.errors import ConfigError, DomainError
from roijscc.metrics import RegionReport, region_psnr, write_reports
from roijscc.model.codec import feature_shape
from roijscc.pipeline import LinkSettings, transmit
from roijscc.train import derived_seed, train

log = logging.getLogger(__name__)

_EVAL_GAMMA_STREAM, _EVAL_NOISE_STREAM = 11, 12


@dataclass
class Evaluated:
    """A trained model plus the link options it was trained with."""

    name: str
    model: torch.nn.Module
    cfg: RunConfig


@dataclass
class CellSummary:
    variant: str
    snr_db: float
    cpp: str
    psnr_roi: float
    psnr_avg: float
    n: int


@dataclass
class ResultsTable:
    reports: dict[str, list[RegionReport]] = field(default_factory=dict)

    def cells(self) -> list[CellSummary]:
        out = []
        for variant, rows in self.reports.items():
            keys = sorted({(r.snr_db, r.cpp) for r in rows}, key=lambda k: (str(k[1]), k[0]))
            for snr, cpp in keys:
                sel = [r for r in rows if r.snr_db == snr and r.cpp == cpp]
                out.append(CellSummary(
                    variant, snr, cpp,
                    _finite_mean(r.psnr_roi for r in sel),
                    _finite_mean(r.psnr_avg for r in sel),
                    len(sel),
                ))
        return out

    def mean(self, variant: str, metric: str = "psnr_roi", snr_db: float | None = None,
             cpp: str | None = None) -> float:
        rows = [r for r in self.reports[variant]
                if (snr_db is None or r.snr_db == snr_db) and (cpp is None or r.cpp == cpp)]
        return _finite_mean(getattr(r, metric) for r in rows)

    def merge(self, other: "ResultsTable") -> None:
        for k, v in other.reports.items():
            self.reports.setdefault(k, []).extend(v)

    def write(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for variant, rows in self.reports.items():
            p = out_dir / f"{_safe(variant)}.csv"
            write_reports(p, rows)
            paths.append(p)
        summary = out_dir / "summary.csv"
        with summary.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "snr_db", "cpp", "psnr_roi", "psnr_avg", "n"])
            for c in self.cells():
                w.writerow([c.variant, c.snr_db, c.cpp, f"{c.psnr_roi:.6f}", f"{c.psnr_avg:.6f}", c.n])
        paths.append(summary)
        return paths


def _finite_mean(values: Iterable[float]) -> float:
    vals = [v for v in values if math.isfinite(v)]
    return float(np.mean(vals)) if vals else math.inf


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def _cpp_label(cpp) -> str:
    return str(Fraction(cpp).limit_denominator(1_000_000) if isinstance(cpp, float) else Fraction(cpp))


def evaluate_models(models: Sequence[Evaluated], images: Sequence[tuple[str, np.ndarray]],
                    snrs: Sequence[float], cpps: Sequence, seed: int = 0,
                    gamma_draws: int = 1) -> ResultsTable:
    """Evaluate every model on every (SNR, CPP) cell with shared ROI and noise draws."""
    table = ResultsTable({m.name: [] for m in models})
    if not models:
        return table
    grid = models[0].cfg.model.grid
    if any(m.cfg.model.grid != grid for m in models):
        raise ConfigError("paired evaluation needs every model on the same patch grid")
    for m in models:
        m.model.eval()

    with torch.no_grad():
        for idx, (image_id, img) in enumerate(images):
            x = torch.from_numpy(np.ascontiguousarray(img))[None]
            _, _, h, w = x.shape
            for draw in range(gamma_draws):
                gamma = data.sample_gammas("test", grid, np.random.default_rng(
                    [seed, _EVAL_GAMMA_STREAM, idx, draw]), 1)
                for cpp in cpps:
                    label = _cpp_label(cpp)
                    for m in models:
                        try:
                            k = bandwidth_for_cpp(Fraction(label), h, w)
                            fh, fw = feature_shape(m.cfg.model, h, w)
                            if k % (fh * fw) or k // (fh * fw) > m.cfg.model.c_m or k < fh * fw:
                                raise ConfigError(f"k={k} incompatible with B={fh * fw}, C_m={m.cfg.model.c_m}")
                        except (ConfigError, DomainError, ValueError) as exc:
                            log.warning("skipping %s on %s at CPP %s: %s", m.name, image_id, label, exc)
                            continue
                        link = LinkSettings(k, m.cfg.tau, "roi_bandwidth" in m.cfg.flags, m.cfg.power)
                        gen = torch.Generator().manual_seed(derived_seed(seed, _EVAL_NOISE_STREAM, idx, draw))
                        parts = torch.randn((1, fh * fw, m.cfg.model.c_m, 2), generator=gen)
                        unit = torch.view_as_complex(parts * math.sqrt(0.5))
                        for snr in snrs:
                            noise = unit * math.sqrt(noise_variance(snr))
                            tx = transmit(m.model, x, gamma, link, snr, noise=noise)
                            if int(tx.k_used.max()) > k:
                                raise AssertionError(f"{m.name} sent {int(tx.k_used.max())} > k={k} symbols")
                            roi, avg = region_psnr(x[0], tx.x_hat[0], gamma[0], grid)
                            table.reports[m.name].append(RegionReport(
                                f"{image_id}" if draw == 0 else f"{image_id}#{draw}",
                                int(gamma[0, 0]), int(gamma[0, 1]), float(snr), label, roi, avg,
                            ))
    return table


def plot_results(table: ResultsTable, path: str | Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cells = [c for c in table.cells() if math.isfinite(c.snr_db)]
    cpps = sorted({c.cpp for c in cells}, key=lambda s: Fraction(s))
    fig, axes = plt.subplots(1, max(1, len(cpps)), figsize=(4.5 * max(1, len(cpps)), 3.6), squeeze=False)
    for ax, cpp in zip(axes[0], cpps):
        for i, variant in enumerate(table.reports):
            sel = sorted((c for c in cells if c.cpp == cpp and c.variant == variant), key=lambda c: c.snr_db)
            if not sel:
                continue
            snr = [c.snr_db for c in sel]
            colour = f"C{i}"
            ax.plot(snr, [c.psnr_roi for c in sel], "-o", color=colour, label=f"{variant} ROI")
            ax.plot(snr, [c.psnr_avg for c in sel], ":s", color=colour, label=f"{variant} avg")
        ax.set_title(f"CPP = {cpp}")
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("PSNR (dB)")
        ax.grid(alpha=0.3)
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def evaluation_images(cfg: RunConfig, root: str | None = None, limit: int | None = None):
    spec = cfg.val_data
    if root is not None:
        spec = data.DatasetSpec(root=root, split=spec.split, crop="center128", size=spec.size, seed=spec.seed)
    images = list(data.iter_images(spec))
    return images[:limit] if limit else images


# ---------------------------------------------------------------- ablation

@dataclass
class AblationResult:
    table: ResultsTable  # per-seed variant names "<variant>@<seed>"
    variants: list[str]
    seeds: list[int]

    def seed_means(self, variant: str, metric: str = "psnr_roi") -> list[float]:
        return [self.table.mean(f"{variant}@{s}", metric) for s in self.seeds]

    def mean(self, variant: str, metric: str = "psnr_roi") -> float:
        return float(np.mean(self.seed_means(variant, metric)))

    def deltas(self, reference: str, metric: str = "psnr_roi") -> dict[str, float]:
        ref = self.mean(reference, metric)
        return {v: self.mean(v, metric) - ref for v in self.variants}

    def write(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        self.table.write(out_dir / "per_run")
        path = out_dir / "ablation.csv"
        base = "uniform-baseline" if "uniform-baseline" in self.variants else self.variants[-1]
        full = "roi-jscc" if "roi-jscc" in self.variants else self.variants[0]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "psnr_roi", "psnr_avg", "delta_roi_vs_full", "delta_roi_vs_baseline"])
            for v in self.variants:
                roi, avg = self.mean(v), self.mean(v, "psnr_avg")
                w.writerow([v, f"{roi:.4f}", f"{avg:.4f}",
                            f"{roi - self.mean(full):.4f}", f"{roi - self.mean(base):.4f}"])
        return path


def ablate(base: RunConfig, variants: Sequence[str], seeds: Sequence[int], out_dir: str | Path,
           snrs: Sequence[float] | None = None, cpps: Sequence | None = None,
           eval_limit: int | None = None) -> AblationResult:
    """Train every variant under every seed, then evaluate all of them paired."""
    out_dir = Path(out_dir)
    snrs = [base.snr_db] if snrs is None else list(snrs)
    cpps = [base.cpp] if cpps is None else list(cpps)
    trained: dict[int, list[Evaluated]] = {}
    for seed in seeds:
        for variant in variants:
            cfg = base.with_variant(variant, seed=seed, out_dir=str(out_dir / _safe(variant) / f"seed{seed}"))
            log.info("training %s seed %d", variant, seed)
            result = train(cfg)
            trained.setdefault(seed, []).append(Evaluated(f"{variant}@{seed}", result.model, cfg))
    images = evaluation_images(base, limit=eval_limit)
    table = ResultsTable()
    for seed, models in trained.items():
        table.merge(evaluate_models(models, images, snrs, cpps, seed=seed))
    result = AblationResult(table, list(variants), list(seeds))
    result.write(out_dir)
    return result
