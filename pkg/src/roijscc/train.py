"""Training loop and checkpoints."""
from __future__ import annotations

import json
import logging
import math
import pickle
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
import torch

from roijscc import data
from roijscc.config import RunConfig
from roijscc.errors import ConfigError, DivergenceError
from roijscc.metrics import mse_loss, roi_loss
from roijscc.model import build_model
from roijscc.pipeline import LinkSettings, transmit

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "roijscc-checkpoint"
CHECKPOINT_VERSION = 1

# stream ids keep the per-step random draws independent of each other
_GAMMA_STREAM, _NOISE_STREAM = 1, 2


def derived_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)[0] >> 1)


def link_settings(cfg: RunConfig, height: int, width: int) -> LinkSettings:
    return LinkSettings(
        k=cfg.bandwidth(height, width),
        tau=cfg.tau,
        adaptive="roi_bandwidth" in cfg.flags,
        power=cfg.power,
    )


def save_checkpoint(path: str | Path, model, cfg: RunConfig, optimizer=None, step: int = 0,
                    history: list[float] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "run_config": cfg.to_dict(),
        "model_config": model.cfg.to_dict(),
        "grid": [model.cfg.n_h, model.cfg.n_w],
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "step": step,
        "history": list(history or []),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> tuple[torch.nn.Module, RunConfig, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, pickle.UnpicklingError, EOFError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a roijscc checkpoint")
    if payload.get("version", 0) > CHECKPOINT_VERSION:
        raise ConfigError(f"checkpoint version {payload['version']} is newer than supported {CHECKPOINT_VERSION}")
    cfg = RunConfig.from_dict(payload["run_config"])
    model = build_model(cfg.model)
    model.load_state_dict(payload["state_dict"])
    return model, cfg, payload


def _batches(cfg: RunConfig, start: int) -> Iterator[np.ndarray]:
    """Training batches from step ``start`` on; batch ``s`` does not depend on ``start``."""
    spec = cfg.data
    if spec.is_toy:
        step = start
        while True:
            yield data.toy_batch(spec.seed + cfg.seed, step, cfg.batch_size, spec.size)
            step += 1
    step, epoch = 0, 0
    while True:
        for batch in data.load_batches(spec, cfg.batch_size, epoch):
            if step >= start:
                yield batch
            step += 1
        epoch += 1


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list[float] = field(default_factory=list)
    checkpoint: Path | None = None
    seconds: float = 0.0


def train(cfg: RunConfig, resume: str | Path | None = None, stop_at: int | None = None,
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train one variant; ``stop_at`` ends early (for resume tests) without changing the schedule."""
    t0 = time.perf_counter()
    out = Path(cfg.out_dir)
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    history: list[float] = []
    start = 0
    if resume is not None:
        loaded, saved_cfg, payload = load_checkpoint(resume)
        model.load_state_dict(loaded.state_dict())
        if payload["optimizer"] is not None:
            optimizer.load_state_dict(payload["optimizer"])
        start, history = int(payload["step"]), list(payload["history"])
        log.info("resumed %s at step %d", resume, start)

    grid = cfg.model.grid
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    use_roi_loss = "roi_loss" in cfg.flags
    model.train()
    batches = _batches(cfg, start)
    step = start
    for step in range(start, end):
        x = torch.from_numpy(next(batches))
        n, _, h, w = x.shape
        gammas = data.sample_gammas("train", grid, np.random.default_rng([cfg.seed, _GAMMA_STREAM, step]), n)
        gen = torch.Generator().manual_seed(derived_seed(cfg.seed, _NOISE_STREAM, step))
        x_hat = transmit(model, x, gammas, link_settings(cfg, h, w), cfg.snr_db, gen).x_hat
        loss = roi_loss(x, x_hat, gammas, grid, cfg.weights) if use_roi_loss else mse_loss(x, x_hat)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss {value} at step {step}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if cfg.grad_clip:
            norm = float(torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip))
            if norm > cfg.grad_clip:
                log.debug("step %d: clipped gradient norm %.3g", step, norm)
        optimizer.step()
        history.append(value)
        if progress is not None:
            progress(step, value)
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            log.info("%s step %d loss %.5f", cfg.variant, step + 1, float(np.mean(history[-cfg.log_every:])))
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and step + 1 < end:
            save_checkpoint(out / "checkpoint.pt", model, cfg, optimizer, step + 1, history)

    done = end if end > start else start
    ckpt = save_checkpoint(out / "checkpoint.pt", model, cfg, optimizer, done, history)
    (out / "loss.json").write_text(json.dumps(history))
    model.eval()
    return TrainResult(model, history, ckpt, time.perf_counter() - t0)
