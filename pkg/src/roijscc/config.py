"""Run configuration: variants, ablation flags and YAML loading."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import yaml

from roijscc.channel import bandwidth_for_cpp
from roijscc.data import DatasetSpec
from roijscc.errors import ConfigError
from roijscc.metrics import LossWeights
from roijscc.model.codec import ModelConfig, feature_shape

FLAGS = ("mask_injection", "split_processing", "roi_loss", "roi_bandwidth")

# Named variants. The "w_*" sets mirror the ablation where single mechanisms
# are bolted onto the non-ROI baseline; "wo_rb" is the full model minus
# bandwidth allocation.
VARIANTS: dict[str, frozenset[str]] = {
    "roi-jscc": frozenset(FLAGS),
    "wo_rb": frozenset({"mask_injection", "split_processing", "roi_loss"}),
    "w_rlb": frozenset({"roi_loss", "roi_bandwidth"}),
    "w_rl": frozenset({"roi_loss"}),
    "w_rb": frozenset({"roi_bandwidth"}),
    "uniform-baseline": frozenset(),
    "conv-baseline": frozenset(),
}


def resolve_flags(variant: str) -> frozenset[str]:
    """Flag set for a variant name, or for a '+'-joined list of flag names ('none' for the empty set)."""
    if variant in VARIANTS:
        return VARIANTS[variant]
    if variant == "none":
        return frozenset()
    parts = frozenset(p.strip() for p in variant.split("+") if p.strip())
    unknown = parts - set(FLAGS)
    if unknown or not parts:
        raise ConfigError(f"unknown variant or flag(s): {sorted(unknown) or variant!r}; flags are {FLAGS}")
    return parts


@dataclass
class RunConfig:
    variant: str = "roi-jscc"
    model: ModelConfig = field(default_factory=ModelConfig)
    cpp: str = "1/12"
    tau: float = 0.1
    alpha: float = 1.0
    beta: float = 0.5
    snr_db: float = 10.0
    power: float = 1.0
    data: DatasetSpec = field(default_factory=lambda: DatasetSpec(crop="fixed", size=64))
    val_data: DatasetSpec = field(default_factory=lambda: DatasetSpec(split="val", crop="fixed", size=64))
    batch_size: int = 8
    steps: int = 2000
    lr: float = 1e-4
    grad_clip: float | None = None
    seed: int = 0
    out_dir: str = "runs/default"
    log_every: int = 50
    checkpoint_every: int = 500

    def __post_init__(self):
        flags = resolve_flags(self.variant)
        arch = "conv" if self.variant == "conv-baseline" else "roi"
        self.model = dataclasses.replace(
            self.model,
            arch=arch,
            mask_injection="mask_injection" in flags,
            split_processing="split_processing" in flags,
        )
        self.weights  # validates alpha/beta
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be positive and steps non-negative")
        size = self.data.size
        k = self.bandwidth(size, size)
        fh, fw = feature_shape(self.model, size, size)
        if k % (fh * fw):
            raise ConfigError(f"k={k} at CPP {self.cpp} is not divisible by B={fh * fw}")
        if k // (fh * fw) > self.model.c_m:
            raise ConfigError(f"CPP {self.cpp} needs {k // (fh * fw)} dims per feature but C_m={self.model.c_m}")

    @property
    def flags(self) -> frozenset[str]:
        return resolve_flags(self.variant)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)

    def bandwidth(self, height: int, width: int) -> int:
        try:
            return bandwidth_for_cpp(Fraction(self.cpp), height, width)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad CPP {self.cpp!r}: {exc}") from exc

    def with_variant(self, variant: str, **changes) -> "RunConfig":
        d = self.to_dict()
        d["variant"] = variant
        d.update(changes)
        return RunConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["model"] = self.model.to_dict()
        d["data"] = dataclasses.asdict(self.data)
        d["val_data"] = dataclasses.asdict(self.val_data)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "model" in d:
                d["model"] = ModelConfig(**d["model"])
            for key in ("data", "val_data"):
                if key in d:
                    d[key] = DatasetSpec(**d[key])
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        if "cpp" in d:
            d["cpp"] = str(d["cpp"])
        return cls(**d)


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return RunConfig.from_dict(raw)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
