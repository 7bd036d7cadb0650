"""dynmc: multicontinuum transport with dynamic concentration-band continua.

Fine-scale Darcy flow/transport references, cell-problem solvers on
oversampled coarse blocks, effective-coefficient assembly, two coarse flow
models (mixed edge-basis and Galerkin), and a benchmark harness.
"""

from .config import ExperimentConfig, get_preset, presets
from .continua import ContinuumSpec, classify, continuum_masses
from .exceptions import ConfigError, DynmcError, InvariantError, SolverError
from .experiment import ExperimentResult, run_experiment
from .fine import FlowBC, run_fine, solve_flow
from .grids import CoarseGrid, DomainLayout, FineGrid, build_layout
from .macro import CoarseModel, run_coarse
from .metrics import ErrorReport, compute_errors

__all__ = [
    "ExperimentConfig", "get_preset", "presets",
    "ContinuumSpec", "classify", "continuum_masses",
    "ConfigError", "DynmcError", "InvariantError", "SolverError",
    "ExperimentResult", "run_experiment",
    "FlowBC", "run_fine", "solve_flow",
    "CoarseGrid", "DomainLayout", "FineGrid", "build_layout",
    "CoarseModel", "run_coarse",
    "ErrorReport", "compute_errors",
]

__version__ = "0.1.0"
