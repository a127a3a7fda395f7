"""Image manipulation localization from a convolutional pyramid refined by shunted self-attention."""

from .backbone import Backbone, FeaturePyramid, InputSizeError
from .config import (
    BackboneConfig,
    ConfigError,
    FusionConfig,
    GrainedConfig,
    LossWeights,
    ModelConfig,
    RunConfig,
    TrainConfig,
    load_run_config,
)
from .core import DimensionError, NumericalError, finite_diff_check
from .fusion import Fusion, PredictionMaps
from .grained import MultiGrained, ShuntedAttention, TransformerBlock
from .model import MSMGNet
from .objective import combined_loss, dice_loss, image_score, pixel_auc, pixel_f1

__version__ = "0.1.0"

__all__ = [
    "Backbone",
    "BackboneConfig",
    "ConfigError",
    "DimensionError",
    "FeaturePyramid",
    "Fusion",
    "FusionConfig",
    "GrainedConfig",
    "InputSizeError",
    "LossWeights",
    "MSMGNet",
    "ModelConfig",
    "MultiGrained",
    "NumericalError",
    "PredictionMaps",
    "RunConfig",
    "ShuntedAttention",
    "TrainConfig",
    "TransformerBlock",
    "combined_loss",
    "dice_loss",
    "finite_diff_check",
    "image_score",
    "load_run_config",
    "pixel_auc",
    "pixel_f1",
]
