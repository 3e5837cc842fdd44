"""Finite-element toolkit for obstacle problems and their Newton machinery.

The package bundles a structured triangular mesh with P1 assembly, sparse
SPD solve infrastructure, a primal-dual active set solver for unilateral
and bilateral obstacle problems, the subspace angle calculus behind the
solver's Newton derivative, and a semismooth Newton method for
box-constrained elliptic optimal control, together with brute-force
oracles used by the test suite.
"""

from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateAngleError,
    NotSPDError,
    ObstakitError,
)
from .mesh import (
    StructuredTriMesh,
    assemble_mass,
    assemble_stiffness,
    extend_with_boundary,
    friedrichs_keller,
    interpolate,
)
from .obstacle import (
    ObstacleProblem,
    ObstacleSolution,
    cross_check_decomposition,
    newton_inactive_set,
    semismoothness_probe,
    solve_bilateral,
    solve_unilateral_lower,
    solve_unilateral_upper,
)
from .operators import (
    SparseSPD,
    dual_norm,
    energy_norm,
    l2_norm,
    restricted_poisson,
    solve_spd,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DegenerateAngleError",
    "NotSPDError",
    "ObstakitError",
    "StructuredTriMesh",
    "assemble_mass",
    "assemble_stiffness",
    "extend_with_boundary",
    "friedrichs_keller",
    "interpolate",
    "ObstacleProblem",
    "ObstacleSolution",
    "cross_check_decomposition",
    "newton_inactive_set",
    "semismoothness_probe",
    "solve_bilateral",
    "solve_unilateral_lower",
    "solve_unilateral_upper",
    "SparseSPD",
    "dual_norm",
    "energy_norm",
    "l2_norm",
    "restricted_poisson",
    "solve_spd",
    "__version__",
]
