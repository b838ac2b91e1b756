"""Computational-graph models for composite human activity detection."""

__version__ = "0.1.0"

from .errors import (ArgumentError, CghError, CheckpointError, ConfigError,
                     IngestError, NumericError, ShapeError, StateError)
from .models import (ArchConfig, CompositeModel, LogisticRegressionModel,
                     TrimmedModel, build_model, count_parameters,
                     load_checkpoint, memory_footprint_bits, save_checkpoint)
from .optim import Adam, TrainConfig, l2_penalty, sgd_step, train
from .tensor import Rng, derive_seed

__all__ = [
    "Adam", "ArchConfig", "ArgumentError", "CghError", "CheckpointError",
    "CompositeModel", "ConfigError", "IngestError", "LogisticRegressionModel",
    "NumericError", "Rng", "ShapeError", "StateError", "TrainConfig",
    "TrimmedModel", "build_model", "count_parameters", "derive_seed",
    "l2_penalty", "load_checkpoint", "memory_footprint_bits",
    "save_checkpoint", "sgd_step", "train",
]
