"""Distributed stochastic MPC for output tracking of coupled linear systems.

Pipeline: load a network model, synthesize the offline ingredients
(covariance schedules, tightened constraint sets, tracking terminal set,
quadratic cost matrix), then simulate the closed loop under sampled
disturbances and aggregate chance-constraint and tracking statistics.
"""

__version__ = "0.1.0"

from .model import NetworkModel, Polytope, load_network, lqr_gain, spectral_radius
from .uncertainty import (
    CovarianceSchedule,
    GammaPolicy,
    PrsBox,
    TightenedSets,
    build_tightened_sets,
    chebyshev_gamma,
    compute_schedule,
    gaussian_gamma,
    propagate_distributed,
    propagate_exact,
    prs_box,
    steady_state_cov,
    steady_state_cov_distributed,
    tighten,
)

__all__ = [
    "CovarianceSchedule",
    "GammaPolicy",
    "NetworkModel",
    "Polytope",
    "PrsBox",
    "TightenedSets",
    "build_tightened_sets",
    "chebyshev_gamma",
    "compute_schedule",
    "gaussian_gamma",
    "load_network",
    "lqr_gain",
    "propagate_distributed",
    "propagate_exact",
    "prs_box",
    "spectral_radius",
    "steady_state_cov",
    "steady_state_cov_distributed",
    "tighten",
]
