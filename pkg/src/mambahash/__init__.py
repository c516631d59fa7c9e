"""Framework-free visual state-space deep hashing."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, no_grad
from .network import MambaHash, ModelConfig, enhancement_ratio
from .objective import LossBreakdown, similarity_matrix, total_loss
from .retrieval import PackedCodes, binarize_pack, hamming_distance, mean_average_precision, search_topk
from .trainer import TrainConfig, train

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "MambaHash",
    "ModelConfig",
    "enhancement_ratio",
    "LossBreakdown",
    "similarity_matrix",
    "total_loss",
    "PackedCodes",
    "binarize_pack",
    "hamming_distance",
    "mean_average_precision",
    "search_topk",
    "TrainConfig",
    "train",
]
