"""Local-global associative assembling of video tracklets into re-identification descriptors."""

from .assembler import assemble, assemble_batch, assemble_strategy, build_model, gcq_scores, laq_scores, prototype
from .config import DatasetConfig, ModelConfig, NoiseSpec, TrainConfig
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "ModelConfig",
    "TrainConfig",
    "DatasetConfig",
    "NoiseSpec",
    "build_model",
    "laq_scores",
    "prototype",
    "gcq_scores",
    "assemble",
    "assemble_batch",
    "assemble_strategy",
]
