from .data import Clip, DatasetConfig, build_dataset, clip_from_stacks
from .model import GROUPS, ConsistencyAdapter, ToyConfig, ToyDenoiser
from .train import (
    TrainConfig,
    TrainingDivergedError,
    TrainResult,
    denoise_error,
    reconstruction_error,
    sample,
    train,
)

__all__ = [
    "Clip",
    "ConsistencyAdapter",
    "DatasetConfig",
    "GROUPS",
    "ToyConfig",
    "ToyDenoiser",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "build_dataset",
    "clip_from_stacks",
    "denoise_error",
    "reconstruction_error",
    "sample",
    "train",
]
