"""Convex action sets and their oracles (membership, LMO, projection)."""

from .errors import ConvergenceError, GeometryError, InfeasibleError, UnboundedError
from .sets import (
    DEFAULT_TOL,
    Box,
    ConstraintSet,
    Halfspaces,
    Hyperplanes,
    Intersection,
    L2Ball,
    QuadraticGroups,
    WeightedL1,
    contains,
    diameter,
    from_dict,
    fw_gap_point,
    lmo,
    project,
)
from .simplex import simplex_solve
from .solvers import dykstra, vertices

__all__ = [
    "DEFAULT_TOL", "Box", "ConstraintSet", "ConvergenceError", "GeometryError", "Halfspaces",
    "Hyperplanes", "InfeasibleError", "Intersection", "L2Ball", "QuadraticGroups",
    "UnboundedError", "WeightedL1", "contains", "diameter", "dykstra", "from_dict",
    "fw_gap_point", "lmo", "project", "simplex_solve", "vertices",
]
