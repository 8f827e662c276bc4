"""Power normalisation and the complex AWGN channel."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import torch


@dataclass(frozen=True)
class ChannelSpec:
    snr_db: float
    power: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.power <= 0:
            raise ValueError(f"power must be positive, got {self.power}")

    @property
    def noise_var(self) -> float:
        return noise_variance(self.snr_db)


def noise_variance(snr_db: float) -> float:
    """Per-complex-symbol noise variance at unit signal power; 0 for an infinite SNR."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return 10.0 ** (-snr_db / 10.0)


def power_normalize(z: torch.Tensor, power: float = 1.0, dim=-1, k=None) -> torch.Tensor:
    """Scale ``z`` so its average symbol power over ``dim`` equals ``power``.

    ``k`` is the number of symbols actually transmitted; pass it when ``z``
    holds zero-filled slots that should not count toward the average. An
    all-zero vector is returned unchanged.
    """
    energy = (z.real.square() + z.imag.square()) if z.is_complex() else z.square()
    energy = energy.sum(dim=dim, keepdim=True)
    if k is None:
        dims = (dim,) if isinstance(dim, int) else dim
        k = math.prod(z.shape[d] for d in dims)
    k = torch.as_tensor(k, dtype=energy.dtype, device=z.device)
    while k.dim() and k.dim() < energy.dim():
        k = k.unsqueeze(-1)
    safe = torch.where(energy > 0, energy, torch.ones_like(energy))
    scale = torch.sqrt(k * power / safe)
    scale = torch.where(energy > 0, scale, torch.ones_like(scale))
    return z * scale


def channel_noise(shape, snr_db: float, generator: torch.Generator | None = None,
                  dtype=torch.complex64, device=None) -> torch.Tensor:
    """Circularly symmetric complex Gaussian noise with variance sigma^2 per symbol."""
    real_dtype = torch.float64 if dtype == torch.complex128 else torch.float32
    var = noise_variance(snr_db)
    if var == 0.0:
        return torch.zeros(shape, dtype=dtype, device=device)
    parts = torch.randn((*shape, 2), generator=generator, dtype=real_dtype, device=device)
    return torch.view_as_complex(parts * math.sqrt(var / 2.0))


def awgn(z: torch.Tensor, snr_db: float, generator: torch.Generator | None = None) -> torch.Tensor:
    return z + channel_noise(z.shape, snr_db, generator, dtype=z.dtype, device=z.device)


def cpp(k: int, height: int, width: int) -> Fraction:
    """Channel uses per RGB pixel."""
    if k < 1 or height < 1 or width < 1:
        raise ValueError("k, height and width must be positive")
    return Fraction(k, 3 * height * width)


def bandwidth_for_cpp(ratio, height: int, width: int) -> int:
    """Inverse of :func:`cpp`; ``ratio`` may be a Fraction, float or string like ``"1/12"``."""
    frac = Fraction(ratio).limit_denominator(1_000_000) if isinstance(ratio, float) else Fraction(ratio)
    k = frac * 3 * height * width
    if k.denominator != 1:
        raise ValueError(f"CPP {ratio} gives a fractional k for a {height}x{width} image")
    return int(k)


def parse_snr(text: str) -> float:
    text = text.strip().lower()
    if text in ("inf", "+inf", "noiseless"):
        return math.inf
    return float(text)
