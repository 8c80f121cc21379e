from .assembly import (QPContext, apply_dirichlet, assemble_bilinear, assemble_linear, condense,
                       condense_vector, laplace_kernel, laplace_matrix, mass_kernel, mass_matrix,
                       qp_context, scatter_vector)
from .solvers import DirectSolver, SolverError, has_constant_nullspace, solve_general, solve_spd
from .space import (FESpace, Field, RefQuadrature, evaluate, evaluate_at_lattice, integrate,
                    interpolate, lagrange_1d, ref_quadrature, tensor_basis, transfer_field)

__all__ = [
    "QPContext", "apply_dirichlet", "assemble_bilinear", "assemble_linear", "condense",
    "condense_vector", "laplace_kernel", "laplace_matrix", "mass_kernel", "mass_matrix",
    "qp_context", "scatter_vector", "DirectSolver", "SolverError", "has_constant_nullspace",
    "solve_general", "solve_spd", "FESpace", "Field", "RefQuadrature", "evaluate",
    "evaluate_at_lattice", "integrate", "interpolate", "lagrange_1d", "ref_quadrature",
    "tensor_basis", "transfer_field",
]
