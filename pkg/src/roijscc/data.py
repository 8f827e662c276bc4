"""Datasets, crops, ROI position sampling and comparison panels.

Arrays are channel-first float32 in [0, 1]: one image is ``(3, H, W)`` and a
batch is ``(N, 3, H, W)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, ImageDraw

from roijscc.errors import ConfigError
from roijscc.geometry import GridSpec, ROIPosition

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
CROP_MODES = ("random", "center128", "fixed")
_SPLIT_SALT = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class DatasetSpec:
    root: str | None = None  # None selects the procedural toy corpus
    split: str = "train"
    crop: str = "random"
    size: int = 256
    seed: int = 0
    toy_count: int = 64  # images per epoch for the toy corpus

    def __post_init__(self):
        if self.crop not in CROP_MODES:
            raise ConfigError(f"crop mode must be one of {CROP_MODES}, got {self.crop!r}")
        if self.split not in _SPLIT_SALT:
            raise ConfigError(f"unknown split {self.split!r}")

    @property
    def is_toy(self) -> bool:
        return self.root is None


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


# ---------------------------------------------------------------- toy corpus

def toy_image(seed: int, index: int, size: int = 64) -> np.ndarray:
    """Procedural test image: a colour gradient with textured shapes on top."""
    rng = _rng(seed, index)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / (size - 1)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-6)
    c0, c1 = rng.uniform(0, 1, (2, 3, 1, 1)).astype(np.float32)
    img = c0 * (1 - ramp) + c1 * ramp

    for _ in range(rng.integers(3, 7)):
        colour = rng.uniform(0, 1, (3, 1, 1)).astype(np.float32)
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.06, 0.3)
        kind = rng.integers(0, 3)
        if kind == 0:
            shape = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        elif kind == 1:
            shape = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.4, 1.6))
        else:
            shape = np.abs((yy - cy) * np.cos(angle) - (xx - cx) * np.sin(angle)) < r * 0.25
        if rng.random() < 0.5:
            freq = rng.uniform(6, 20)
            phase = rng.uniform(0, 2 * np.pi)
            stripes = 0.5 + 0.5 * np.sin(freq * np.pi * (xx * np.cos(phase) + yy * np.sin(phase)) + phase)
            colour = colour * (0.55 + 0.45 * stripes.astype(np.float32))
        img = np.where(shape, colour, img)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------- files

def list_images(root: str | Path, split: str) -> list[Path]:
    folder = Path(root) / split
    if not folder.is_dir():
        raise ConfigError(f"dataset folder {folder} does not exist")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path: str | Path, img: np.ndarray) -> None:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    arr = np.round(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def center_crop_multiple(img: np.ndarray, multiple: int = 128) -> np.ndarray:
    """Crop each side down to the nearest multiple of ``multiple``, keeping the centre."""
    _, h, w = img.shape
    th, tw = (h // multiple) * multiple, (w // multiple) * multiple
    if th == 0 or tw == 0:
        raise ValueError(f"image {h}x{w} is smaller than {multiple}")
    top, left = (h - th) // 2, (w - tw) // 2
    return img[:, top:top + th, left:left + tw]


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    _, h, w = img.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than crop {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[:, top:top + size, left:left + size]


def fixed_crop(img: np.ndarray, size: int) -> np.ndarray:
    _, h, w = img.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than crop {size}")
    top, left = (h - size) // 2, (w - size) // 2
    return img[:, top:top + size, left:left + size]


# ---------------------------------------------------------------- iteration

def iter_images(spec: DatasetSpec, epoch: int = 0) -> Iterator[tuple[str, np.ndarray]]:
    """Yield ``(image_id, image)`` pairs for one epoch, in a seed-determined order."""
    salt = _SPLIT_SALT[spec.split]
    if spec.is_toy:
        order = np.arange(spec.toy_count)
        if spec.split == "train":
            order = _rng(spec.seed, salt, epoch).permutation(spec.toy_count)
        for i in order:
            yield f"toy{salt}_{int(i):05d}", toy_image(spec.seed * 7919 + salt, int(i), spec.size)
        return

    paths = list_images(spec.root, spec.split)
    if not paths:
        raise ConfigError(f"no images found under {Path(spec.root) / spec.split}")
    order = _rng(spec.seed, salt, epoch).permutation(len(paths)) if spec.split == "train" else range(len(paths))
    for i in order:
        path = paths[int(i)]
        try:
            img = read_image(path)
            if spec.crop == "random":
                img = random_crop(img, spec.size, _rng(spec.seed, salt, epoch, int(i)))
            elif spec.crop == "center128":
                img = center_crop_multiple(img, 128)
            else:
                img = fixed_crop(img, spec.size)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        yield path.stem, img


def load_batches(spec: DatasetSpec, batch: int, epoch: int = 0) -> Iterator[np.ndarray]:
    """Stack consecutive images into batches of at most ``batch``.

    A batch is cut early when the image size changes (center-crop mode on
    mixed-resolution folders).
    """
    if batch < 1:
        raise ConfigError("batch size must be positive")
    pending: list[np.ndarray] = []
    seen = False
    for _, img in iter_images(spec, epoch):
        seen = True
        if pending and img.shape != pending[0].shape:
            yield np.stack(pending)
            pending = []
        pending.append(img)
        if len(pending) == batch:
            yield np.stack(pending)
            pending = []
    if pending:
        yield np.stack(pending)
    if not seen:
        raise ConfigError("dataset produced no usable images")


def toy_batch(seed: int, step: int, batch: int, size: int = 64) -> np.ndarray:
    """Training batch ``step`` of the endless toy stream; a pure function of its arguments."""
    return np.stack([toy_image(seed, step * batch + j, size) for j in range(batch)])


# ---------------------------------------------------------------- ROI positions

def sample_gammas(mode: str, grid: GridSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` ROI positions, shape (n, 2), 1-based.

    ``train`` draws uniformly over every patch; ``test`` draws over interior
    patches only (1 < h < n_h and 1 < w < n_w).
    """
    if mode == "train":
        lo_h, hi_h, lo_w, hi_w = 1, grid.n_h, 1, grid.n_w
    elif mode == "test":
        if grid.n_h < 3 or grid.n_w < 3:
            raise ConfigError(f"test-mode ROI sampling needs an interior cell; grid is {grid.n_h}x{grid.n_w}")
        lo_h, hi_h, lo_w, hi_w = 2, grid.n_h - 1, 2, grid.n_w - 1
    else:
        raise ConfigError(f"unknown sampling mode {mode!r}")
    h = rng.integers(lo_h, hi_h + 1, size=n)
    w = rng.integers(lo_w, hi_w + 1, size=n)
    return np.stack([h, w], axis=1).astype(np.int64)


def sample_gamma(mode: str, grid: GridSpec, rng: np.random.Generator) -> ROIPosition:
    h, w = sample_gammas(mode, grid, rng, 1)[0]
    return ROIPosition(int(h), int(w))


# ---------------------------------------------------------------- panels

CAPTION_HEIGHT = 14
GAP = 4


def _roi_box(gamma, grid: GridSpec, h: int, w: int) -> tuple[int, int, int, int]:
    ph, pw = h // grid.n_h, w // grid.n_w
    top, left = (gamma[0] - 1) * ph, (gamma[1] - 1) * pw
    return left, top, left + pw - 1, top + ph - 1


def render_panel(path: str | Path, original: np.ndarray, reconstructions: Sequence[np.ndarray],
                 gamma, grid: GridSpec, labels: Sequence[str]) -> Path:
    """Write the original and each reconstruction side by side, ROI outlined in red.

    ``labels`` captions the reconstructions in order (typically variant name
    and PSNR_ROI).
    """
    if len(labels) != len(reconstructions):
        raise ValueError("need one label per reconstruction")
    images = [original, *reconstructions]
    _, h, w = original.shape
    if any(im.shape != original.shape for im in images):
        raise ValueError("all panels must share the original's shape")
    canvas = Image.new("RGB", (len(images) * w + (len(images) - 1) * GAP, h + CAPTION_HEIGHT), "white")
    draw = ImageDraw.Draw(canvas)
    box = _roi_box(gamma, grid, h, w)
    for i, (im, caption) in enumerate(zip(images, ["original", *labels])):
        x0 = i * (w + GAP)
        arr = np.round(np.clip(im, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8)
        canvas.paste(Image.fromarray(arr), (x0, CAPTION_HEIGHT))
        draw.rectangle((x0 + box[0], CAPTION_HEIGHT + box[1], x0 + box[2], CAPTION_HEIGHT + box[3]),
                       outline=(255, 0, 0))
        draw.text((x0 + 1, 1), caption, fill=(0, 0, 0))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        canvas.save(path)
    except OSError as exc:
        raise OSError(f"could not write panel to {path}: {exc}") from exc
    return path
