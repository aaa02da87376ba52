"""Isogeometric Galerkin analysis on Catmull-Clark subdivision surfaces."""

from .basis import (BasisEval, SingularPointError, curve_basis, curve_basis_boundary,
                    eval_irregular, jacobian, limit_position, subdivision_level,
                    surface_basis)
from .fitting import (build_evaluation_operator, fit_interpolate, fit_least_squares,
                      generate_cylinder, generate_hemisphere, generate_plate,
                      generate_plate_ev)
from .mesh import ControlMesh, ElementPatch, MeshError, PatchKind, classify_elements, load_obj
from .quadrature import QuadratureRule, adaptive_rule, gauss_2d
from .solver import (LinearSystem, ManufacturedCase, assemble, error_norms,
                     manufactured_rhs, pointwise_error_field, project_normals,
                     solve_penalized)
from .subdivision import (SubdivisionOperators, build_operators, subdivide_curve,
                          subdivide_mesh)

__version__ = "0.1.0"

__all__ = [
    "BasisEval", "ControlMesh", "ElementPatch", "LinearSystem", "ManufacturedCase",
    "MeshError", "PatchKind", "QuadratureRule", "SingularPointError",
    "SubdivisionOperators", "adaptive_rule", "assemble", "build_evaluation_operator",
    "build_operators", "classify_elements", "curve_basis", "curve_basis_boundary",
    "error_norms", "eval_irregular", "fit_interpolate", "fit_least_squares",
    "gauss_2d", "generate_cylinder", "generate_hemisphere", "generate_plate",
    "generate_plate_ev", "jacobian", "limit_position", "load_obj",
    "manufactured_rhs", "pointwise_error_field", "project_normals",
    "solve_penalized", "subdivide_curve", "subdivide_mesh", "subdivision_level",
    "surface_basis",
]
