from .model import (
    ModelConfig,
    PredictionSequence,
    VARIANTS,
    WellModel,
    conv_dilations,
    receptive_field,
)
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "ModelConfig",
    "PredictionSequence",
    "VARIANTS",
    "WellModel",
    "conv_dilations",
    "receptive_field",
    "load_checkpoint",
    "save_checkpoint",
]
