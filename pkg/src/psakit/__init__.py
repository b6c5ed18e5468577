"""Dual-branch polarized attention blocks, exact autodiff, cost analysis, and a toy benchmark."""

from .attention import ATTENTION_KINDS, PsaConfig, make_attention
from .core import (
    ParamInit,
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    UsageError,
    finite_diff_gradcheck,
)
from .cost import (
    ConfigError,
    CostReport,
    ModelDescriptor,
    builtin_descriptors,
    cost_of_attention_block,
    cost_of_model,
    scaling_check,
)
from .harness import TrainConfig, TrainingDiverged, ToyNet, ab_compare, train

__version__ = "0.1.0"

__all__ = [
    "ATTENTION_KINDS", "PsaConfig", "make_attention",
    "ParamInit", "Parameter", "ShapeError", "Tape", "Tensor", "UsageError",
    "finite_diff_gradcheck",
    "ConfigError", "CostReport", "ModelDescriptor", "builtin_descriptors",
    "cost_of_attention_block", "cost_of_model", "scaling_check",
    "TrainConfig", "TrainingDiverged", "ToyNet", "ab_compare", "train",
    "__version__",
]
