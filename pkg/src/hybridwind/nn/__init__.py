"""Minimal MLP engine with a compiled kernel backend and a numpy fallback."""

from . import _backend as backend
from .network import (
    DEFAULT_GRID,
    Gradients,
    MlpNetwork,
    TrainConfig,
    TrainingDivergence,
    TrainTrace,
    batch_loss,
    epoch_order,
    forward,
    gradient_check,
    gradients,
    grid_search,
    quantile_heads,
    smooth_rows,
    train,
)

__all__ = [
    "DEFAULT_GRID",
    "Gradients",
    "MlpNetwork",
    "TrainConfig",
    "TrainTrace",
    "TrainingDivergence",
    "backend",
    "batch_loss",
    "epoch_order",
    "forward",
    "gradient_check",
    "gradients",
    "grid_search",
    "quantile_heads",
    "smooth_rows",
    "train",
]
