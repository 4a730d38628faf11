"""HDG spatial discretization with embedded SDIRK time stepping and step-size control."""

from .approximation import Discretization, StateTriple
from .hdg import HDGOperator, HDGProblem, StageShift
from .mesh import Mesh, build_skeleton, generate_structured, refine_uniform
from .time_integration import (ButcherTableau, ControllerConfig, integrate_adaptive,
                               integrate_bdf, tableau)

__version__ = "0.1.0"

__all__ = [
    "ButcherTableau", "ControllerConfig", "Discretization", "HDGOperator", "HDGProblem", "Mesh",
    "StageShift", "StateTriple", "build_skeleton", "generate_structured", "integrate_adaptive",
    "integrate_bdf", "refine_uniform", "tableau",
]
