"""Isogeometric collocation for the biharmonic equation on smooth multi-patch spline spaces."""
from .assembly import ManufacturedSolution, assemble, get_solution
from .bspline import SplineSpace1D, eval_basis, make_space
from .errors import ErrorReport, convergence_orders, relative_errors, to_csv
from .geometry import BUILTINS, MultiPatchDomain, build_domain, get_domain, load_domain
from .lsq import SolveReport, solve, solve_qr, solve_scaled_normal
from .points import collocation_points, univariate_points
from .smooth_basis import SmoothSpace, assemble_space, smoothness_jumps

__version__ = "0.1.0"

__all__ = [
    "BUILTINS", "ErrorReport", "ManufacturedSolution", "MultiPatchDomain", "SmoothSpace",
    "SolveReport", "SplineSpace1D", "assemble", "assemble_space", "build_domain",
    "collocation_points", "convergence_orders", "eval_basis", "get_domain", "get_solution",
    "load_domain", "make_space", "relative_errors", "smoothness_jumps", "solve", "solve_qr",
    "solve_scaled_normal", "to_csv", "univariate_points",
]
