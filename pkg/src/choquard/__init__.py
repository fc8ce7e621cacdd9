"""Radial ground states of Choquard equations with a local power term.

    -Delta u + eps u = (I_alpha * |u|^p) |u|^{p-2} u + |u|^{q-2} u   in R^N

Modules
    radial       graded grid, quadrature, norms, rescaling, field IO
    riesz        Riesz potential matrix and Choquard energy
    functionals  four-coefficient functional, Nehari and Pohozaev tools
    solver       ground-state solver and shooting oracle
    profiles     explicit bubbles, concentration parameters, best constants
    asymptotics  regime table, predicted exponents, sweeps, fits, mass map
    cli          command-line front end
"""

from .functionals import FunctionalCoefficients, ProblemParams
from .radial import InvalidParameter, RadialField, RadialGrid, build_grid
from .riesz import RieszOperator, build_operator
from .solver import GroundState, SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "FunctionalCoefficients",
    "GroundState",
    "InvalidParameter",
    "ProblemParams",
    "RadialField",
    "RadialGrid",
    "RieszOperator",
    "SolverConfig",
    "build_grid",
    "build_operator",
    "solve",
]
