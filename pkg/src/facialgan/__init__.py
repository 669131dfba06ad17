"""Mask- and style-conditioned face synthesis: data, networks, losses, training,
evaluation and serving."""

__version__ = "0.1.0"

from .config import LossWeights, ModelConfig, TrainConfig  # noqa: F401
