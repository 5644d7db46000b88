"""Physics-enhanced deep state-space models."""

from ._core import (
    ConfigError,
    Dataset,
    Error,
    Model,
    NumericError,
    ShapeError,
    canonical_config,
    config_hash,
    default_config,
    discretize_bilinear,
    evaluate,
    init_hippo,
    train,
    uniqueness_recovery,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "Error",
    "Model",
    "NumericError",
    "ShapeError",
    "canonical_config",
    "config_hash",
    "default_config",
    "discretize_bilinear",
    "evaluate",
    "init_hippo",
    "train",
    "uniqueness_recovery",
]
__version__ = "0.1.0"
