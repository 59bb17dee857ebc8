"""Style-aware selective state-space style transfer at desk scale."""

from .network import ModelConfig, SaMam, erf_map, model_summary
from .savssm import SAVSSM, StyleEmbedding
from .tensor import Adam, Tensor, no_grad

__all__ = ["Adam", "ModelConfig", "SAVSSM", "SaMam", "StyleEmbedding", "Tensor", "erf_map", "model_summary", "no_grad"]
__version__ = "0.1.0"
