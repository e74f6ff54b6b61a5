"""Derivative-invariance training on synthetic structural causal models."""

import sys

__version__ = "0.1.0"

from .diffkernel import Model, Penalty, fd_check, init_model, linear_model, load_model, save_model
from .errors import (
    CyclicGraph,
    DimensionMismatch,
    DirmLabError,
    EmptySplit,
    LabelDomain,
    NonFiniteLoss,
    ParseError,
    SingularCovariance,
    UnknownName,
    Unsupported,
    ValidationError,
)
from .objectives import ObjectiveSpec, affine_sup, dirm_penalty, irm_penalty, rex_penalty, total_objective
from .scm import (
    EnvironmentData,
    ExogenousSpec,
    Intervention,
    SCMSpec,
    StructuralEquation,
    intro_example_spec,
    population_ols,
    sample,
    validate_and_order,
)
from .trainer import EarlyStop, TrainConfig, TrainTrace, effective_coefficients, pooled_validation_split, train

__all__ = [
    name for name, value in list(globals().items())
    if not name.startswith("_") and not isinstance(value, type(sys))
]
