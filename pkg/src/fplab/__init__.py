"""Numerical laboratory for nonlinear Fokker-Planck equations.

Implicit (mild-solution) time stepping for ``u_t - Δβ(u) + div(b(x,u)u) = 0``
on a periodic box, the linearized equation, the L∞ barrier ODE, the
McKean-Vlasov particle system, and executable checks of uniqueness,
L¹ contraction and boundedness.
"""

from fplab.errors import DegenerateDensity, LinearSolveFailure, NonConvergence
from fplab.grid import PeriodicGrid, ScalarField, VectorField
from fplab.model import ModelProblem, get_model, registered_models
from fplab.pde import SolverConfig, Trajectory, solve_mild

__version__ = "0.1.0"

__all__ = [
    "DegenerateDensity",
    "LinearSolveFailure",
    "ModelProblem",
    "NonConvergence",
    "PeriodicGrid",
    "ScalarField",
    "SolverConfig",
    "Trajectory",
    "VectorField",
    "get_model",
    "registered_models",
    "solve_mild",
]
