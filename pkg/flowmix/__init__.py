"""Gaussian-mixture variational autoencoder for parametric flow fields."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ContractViolation,
    ConvergenceError,
    DivergedError,
    FlowmixError,
    FormatError,
    FreezeViolation,
    TrainingDiverged,
)
from .model.flowgen import FlowDataset, generate  # noqa: E402
from .model.gmvae import GmmParams, GmvaeModel, load_model, save_model  # noqa: E402
from .model.numkit import Rng  # noqa: E402
from .model.spectral import SpectralReport, interpretability_of_embedding, smoothness_score  # noqa: E402
from .model.trainer import TrainConfig, TrainLog, train  # noqa: E402

__all__ = [
    "ContractViolation",
    "ConvergenceError",
    "DivergedError",
    "FlowDataset",
    "FlowmixError",
    "FormatError",
    "FreezeViolation",
    "GmmParams",
    "GmvaeModel",
    "Rng",
    "SpectralReport",
    "TrainConfig",
    "TrainLog",
    "TrainingDiverged",
    "generate",
    "interpretability_of_embedding",
    "load_model",
    "save_model",
    "smoothness_score",
    "train",
]
