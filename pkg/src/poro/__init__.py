"""Solvers and time-stepping schemes for semi-discrete linear poroelasticity."""

from .model import (
    MaterialParams,
    PoroSystem,
    coupling_parameter,
    effective_coupling,
    iteration_bound,
    make_model_problem,
    relaxation_factor,
)
from .sparse import SparseMatrix
from .steppers import SimulationTrace, StepperConfig, run_simulation

__version__ = "0.1.0"

__all__ = [
    "MaterialParams",
    "PoroSystem",
    "SimulationTrace",
    "SparseMatrix",
    "StepperConfig",
    "coupling_parameter",
    "effective_coupling",
    "iteration_bound",
    "make_model_problem",
    "relaxation_factor",
    "run_simulation",
    "__version__",
]
