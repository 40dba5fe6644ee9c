"""Diffusion-augmented graph contrastive learning for implicit-feedback CF."""

from .config import TrainConfig, load_config
from .dataio import InteractionDataset, block_dataset, build_norm_adjacency, load_interactions, split_train_test
from .trainer import DGCLModel, TrainReport, evaluate_model, train

__all__ = [
    "DGCLModel",
    "InteractionDataset",
    "TrainConfig",
    "TrainReport",
    "block_dataset",
    "build_norm_adjacency",
    "evaluate_model",
    "load_config",
    "load_interactions",
    "split_train_test",
    "train",
]

__version__ = "0.1.0"
