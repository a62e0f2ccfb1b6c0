"""Stochastic metapopulation epidemic simulator with a school-closure MDP on top.

The package is organised around a handful of small modules:

- ``core``        shared domain types and reproduction-number algebra
- ``intra_patch`` single-district age-structured SEIR stepping (ODE and SDE)
- ``metapop``     patch coupling via a non-homogeneous Poisson arrival process
- ``census``      census ingestion and compositional (simplex) analytics
- ``network``     commute graph and modularity community detection
- ``env``         the weekly school-closure MDP (reset/step interface)
- ``groundtruth`` exhaustive enumeration of budget-feasible closure schedules
- ``ppo``         from-scratch PPO learner (numpy only)
- ``datagen``     synthetic census / mobility / contact-matrix generator
- ``cli``         command-line entry point tying everything together
"""

from epimdp.core import (
    AgeGroup,
    Census,
    ContactMatrix,
    EpiParams,
    SeirState,
    beta_for_r0,
    make_reciprocal,
    spectral_radius,
)

__version__ = "0.1.0"

__all__ = [
    "AgeGroup",
    "Census",
    "ContactMatrix",
    "EpiParams",
    "SeirState",
    "beta_for_r0",
    "make_reciprocal",
    "spectral_radius",
    "__version__",
]
