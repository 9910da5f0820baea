"""First-order convex solvers: centralized operator splitting and consensus ADMM."""

from ._backend import backend_name
from .consensus import ConsensusTopology, solve_distributed
from .projections import project_ellipsoid
from .qp import (
    CentralizedWorkspace,
    ConicQp,
    EllipsoidBlock,
    QpSolution,
    SolverSettings,
    solve_centralized,
)

__all__ = [
    "CentralizedWorkspace",
    "ConicQp",
    "ConsensusTopology",
    "EllipsoidBlock",
    "QpSolution",
    "SolverSettings",
    "backend_name",
    "project_ellipsoid",
    "solve_centralized",
    "solve_distributed",
]
