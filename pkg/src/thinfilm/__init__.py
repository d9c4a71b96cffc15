"""Simulator and verification lab for u_t + div(∇Δu - g(∇u)) = 0."""

from .grid import Grid, ScalarField, VectorField
from .kernel import KernelTable, QuadratureSpec, build_kernel_table, eval_f, eval_f_deriv
from .nonlinearity import NonlinearitySpec

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "KernelTable",
    "QuadratureSpec",
    "build_kernel_table",
    "eval_f",
    "eval_f_deriv",
    "NonlinearitySpec",
]
__version__ = "0.1.0"
