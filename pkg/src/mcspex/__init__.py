"""Multi-scale target speaker extraction (MC-SpEx and SpEx+ ablations)."""

from .config import LossWeights, ModelConfig, TrainConfig, toy_config, toy_train_config, variant_config
from .model import SpeakerExtractionModel, build_model, count_parameters

__all__ = [
    "LossWeights",
    "ModelConfig",
    "TrainConfig",
    "SpeakerExtractionModel",
    "build_model",
    "count_parameters",
    "toy_config",
    "toy_train_config",
    "variant_config",
]
__version__ = "0.1.0"
