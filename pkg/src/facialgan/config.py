"""Dataclass configs for models and training."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

# Working semantic classes, in channel order.
CLASS_NAMES = ("background", "skin", "eyes", "nose", "mouth")
NUM_CLASSES = len(CLASS_NAMES)

# Editable attributes (skin and background are context, not edit targets).
ATTRIBUTES = ("eyes", "nose", "mouth")
ATTRIBUTE_CHANNELS = {name: CLASS_NAMES.index(name) for name in ATTRIBUTES}


@dataclass(frozen=True)
class ModelConfig:
    """Shapes shared by all five networks."""

    image_size: int = 256
    num_classes: int = NUM_CLASSES
    style_dim: int = 64
    latent_dim: int = 16
    base_channels: int = 64
    max_channels: int = 512

    def __post_init__(self):
        if self.image_size < 8 or self.image_size & (self.image_size - 1):
            raise ValueError(f"image_size must be a power of two >= 8, got {self.image_size}")

    @property
    def num_stages(self) -> int:
        # log2(image_size) - 2 down/up stages
        return self.image_size.bit_length() - 3


@dataclass(frozen=True)
class LossWeights:
    """Per-term weights of the combined objective."""

    lambda_adv: float = 1.0
    lambda_sty: float = 1.0
    lambda_ds: float = 1.0
    lambda_cyc: float = 1.0
    lambda_seg: float = 2.0

    def __post_init__(self):
        for name, value in dataclasses.asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")


@dataclass
class TrainConfig:
    """Everything the two training stages need, flat and JSON-serializable."""

    image_size: int = 256
    batch_size: int = 8
    total_iters: int = 200_000
    seg_epochs: int = 50
    seg_batch_size: int = 32
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    lr_e: float = 1e-4
    lr_f: float = 1e-6
    lr_seg: float = 1e-2
    beta1: float = 0.0
    beta2: float = 0.99
    weights: LossWeights = field(default_factory=LossWeights)
    lambda_ds_init: float = 1.0
    dilation_radius: int = 4          # at 256px; scaled with image_size
    seed: int = 0
    checkpoint_every: int = 10_000
    log_every: int = 100
    style_dim: int = 64
    latent_dim: int = 16
    base_channels: int = 64
    max_channels: int = 512
    data_root: str = ""
    split_seed: int = 0
    dual_pass: bool = True            # latent + reference pass per iteration
    ema: bool = False                 # generator weight averaging, off by default
    threads: int = 0                  # >0 pins torch thread count (deterministic mode)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        for name in ("lr_g", "lr_d", "lr_e", "lr_f", "lr_seg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(
            image_size=self.image_size,
            style_dim=self.style_dim,
            latent_dim=self.latent_dim,
            base_channels=self.base_channels,
            max_channels=self.max_channels,
        )

    @property
    def scaled_dilation_radius(self) -> int:
        return max(1, round(self.dilation_radius * self.image_size / 256))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["weights"] = dataclasses.asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# Dotted config-file keys accepted as aliases for flat TrainConfig fields.
_KEY_ALIASES = {
    "data.root": "data_root",
    "data.image_size": "image_size",
    "data.split_seed": "split_seed",
}


def load_train_config(path: str | Path, overrides: dict | None = None) -> TrainConfig:
    """Read a flat JSON config file; CLI overrides win over file values."""
    raw = json.loads(Path(path).read_text())
    flat = {}
    for key, value in raw.items():
        flat[_KEY_ALIASES.get(key, key)] = value
    if overrides:
        flat.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(flat)
