"""Conditional normalizing flows for residential load profiles, in plain numpy."""

from .errors import FCPFlowError
from .flowcore import FlowModel, log_likelihood, sample
from .training import TrainConfig, fit, load_checkpoint, save_checkpoint

__all__ = [
    "FCPFlowError",
    "FlowModel",
    "TrainConfig",
    "fit",
    "load_checkpoint",
    "log_likelihood",
    "sample",
    "save_checkpoint",
]
__version__ = "0.1.0"
