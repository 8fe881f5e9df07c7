"""Lagrange finite elements on triangles."""

from .assembly import CellMap, FormKind, InterfaceData, assemble_bilinear, assemble_local, interface_data
from .quadrature import edge_rule, triangle_rule
from .solvers import (
    Factorization,
    InnerProduct,
    NewtonResult,
    NormKind,
    apply_dirichlet,
    gram_matrix,
    is_symmetric,
    newton_solve,
    solve_sparse,
)
from .spaces import Family, Field, FunctionSpace, p1_values, p2_values

__all__ = [
    "CellMap",
    "FormKind",
    "InterfaceData",
    "assemble_bilinear",
    "assemble_local",
    "interface_data",
    "edge_rule",
    "triangle_rule",
    "Factorization",
    "InnerProduct",
    "NewtonResult",
    "NormKind",
    "apply_dirichlet",
    "gram_matrix",
    "is_symmetric",
    "newton_solve",
    "solve_sparse",
    "Family",
    "Field",
    "FunctionSpace",
    "p1_values",
    "p2_values",
]
