from .checkpoint import CheckpointError, load_checkpoints, load_model, save_checkpoints, save_model
from .data import Dataset, load_dataset, make_blobs, save_dataset
from .layers import batchnorm_forward, conv2d_forward, count_impacted_outputs
from .model import (
    LayerSpec,
    ModelGraph,
    build_model,
    build_resnet,
    forward,
    model_from_config,
    predict,
)
from .train import CheckpointSeries, TrainingError, accuracy, train

__all__ = [
    "CheckpointError", "CheckpointSeries", "Dataset", "LayerSpec", "ModelGraph",
    "TrainingError", "accuracy", "batchnorm_forward", "build_model", "build_resnet",
    "conv2d_forward", "count_impacted_outputs", "forward", "load_checkpoints",
    "load_dataset", "load_model", "make_blobs", "model_from_config", "predict",
    "save_checkpoints", "save_dataset", "save_model", "train",
]
