"""Desk-scale lab for offline RL recommenders with kNN reward shaping."""

from .errors import (
    ConfigError,
    FeatureError,
    ParameterError,
    ParseError,
    PreconditionError,
    RolerLabError,
    TrainingDiverged,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "FeatureError",
    "ParameterError",
    "ParseError",
    "PreconditionError",
    "RolerLabError",
    "TrainingDiverged",
]
