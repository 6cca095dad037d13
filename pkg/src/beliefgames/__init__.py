"""Belief-space dynamic games: local Nash planning under partial observability."""

from .belief import (
    GameModel,
    GaussianBelief,
    JointLayout,
    belief_mean_dynamics,
    belief_noise_matrix,
    ekf_filter_step,
    ekf_terms,
    sample_belief_transition,
    unvec_belief,
    vec_belief,
)
from .solver import (
    AffinePolicy,
    NashSolution,
    SolverConfig,
    backward_pass,
    evaluate_returns,
    forward_pass,
    solve,
)

__all__ = [
    "AffinePolicy",
    "GameModel",
    "GaussianBelief",
    "JointLayout",
    "NashSolution",
    "SolverConfig",
    "backward_pass",
    "belief_mean_dynamics",
    "belief_noise_matrix",
    "ekf_filter_step",
    "ekf_terms",
    "evaluate_returns",
    "forward_pass",
    "sample_belief_transition",
    "solve",
    "unvec_belief",
    "vec_belief",
]

__version__ = "0.1.0"
