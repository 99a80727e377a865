"""charlab: characteristics, Hamiltonian flows and closure diagnostics for first-order PDEs."""

from .characteristics import JetPoint, PdeProblem, integrate_family, integrate_strip
from .expr import Expression, evaluate, grad, hessian, parse
from .hamiltonian import HamiltonianProblem, LagrangianProblem, hamiltonian_flow, lagrange_flow

__all__ = [
    "Expression",
    "parse",
    "evaluate",
    "grad",
    "hessian",
    "JetPoint",
    "PdeProblem",
    "integrate_strip",
    "integrate_family",
    "HamiltonianProblem",
    "LagrangianProblem",
    "hamiltonian_flow",
    "lagrange_flow",
]
__version__ = "0.1.0"
