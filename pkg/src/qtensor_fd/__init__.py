"""Energy-stable finite-difference solver for the Landau-de Gennes Q-tensor gradient flow."""

from .errors import (
    ConfigError,
    ConvergenceError,
    GridMismatchError,
    InputValidationError,
    IntegrityError,
    QTensorError,
    QuadratizationError,
    SPDViolationError,
)
from .fields import GridSpec, project_initial
from .linsolve import SolverConfig
from .potential import ModelParams
from .scheme import SchemeState, StepReport, energy, step

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "GridMismatchError",
    "InputValidationError",
    "IntegrityError",
    "QTensorError",
    "QuadratizationError",
    "SPDViolationError",
    "GridSpec",
    "project_initial",
    "SolverConfig",
    "ModelParams",
    "SchemeState",
    "StepReport",
    "energy",
    "step",
]
