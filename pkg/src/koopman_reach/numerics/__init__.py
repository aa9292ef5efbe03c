"""Numeric kernels: interval arithmetic, dense linear algebra, simplex LP."""

from .intervals import Interval, IntervalBox, IntervalDivisionError
from .linalg import SvdResult, matrix_exponential, svd_factor, truncated_pseudoinverse
from .lp import InfeasiblePolytope, UnboundedDirection, bound_variable, linear_minimize

__all__ = [
    "Interval",
    "IntervalBox",
    "IntervalDivisionError",
    "SvdResult",
    "matrix_exponential",
    "svd_factor",
    "truncated_pseudoinverse",
    "InfeasiblePolytope",
    "UnboundedDirection",
    "bound_variable",
    "linear_minimize",
]
