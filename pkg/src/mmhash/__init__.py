"""Multi-modal hashing: gated fusion of vision/text embeddings into binary codes."""

from .config import TrainConfig, load_config
from .dataio import EmbeddingDataset, SplitManifest, generate_synthetic
from .model import ModelParams, init_params, forward_batch
from .trainer import train, load_checkpoint, save_checkpoint
from .codes import CodeIndex, PackedCode, binarize, hamming_distance, search
from .evaluation import mean_average_precision, average_precision, ablation_report
from .estimator import MultiModalHasher

__version__ = "0.1.0"

__all__ = [
    "TrainConfig", "load_config",
    "EmbeddingDataset", "SplitManifest", "generate_synthetic",
    "ModelParams", "init_params", "forward_batch",
    "train", "load_checkpoint", "save_checkpoint",
    "CodeIndex", "PackedCode", "binarize", "hamming_distance", "search",
    "mean_average_precision", "average_precision", "ablation_report",
    "MultiModalHasher",
]
