"""Discrete-time linear-quadratic mean-field games: model-based equilibrium
oracle, model-free actor-critic learner, and finite-population Nash-gap
evaluation."""

__version__ = "0.1.0"

from .errors import (
    AssumptionError,
    ConvergenceError,
    DivergentSeriesError,
    InnerLoopAborted,
    SafeguardRejection,
    UnstableSystemError,
    ValidationError,
)
from .model import (
    AugmentedSpec,
    FeedbackPolicy,
    GameSpec,
    MeanFieldLaw,
    ValidationReport,
    build_augmented,
    validate_spec,
)
from .learner import (
    CriticEstimate,
    LearnerConfig,
    actor_step,
    critic_gtd,
    critic_lstd,
    inner_loop,
    probe_stabilizing,
)
from .oracle import (
    MfeSolution,
    RiccatiData,
    apply_T,
    compute_costate,
    equilibrium_recursion_residual,
    exact_cost,
    fixed_point_mf,
    mf_series,
    optimal_gain,
    solve_dare,
    true_theta,
)
from .sim import (
    PopulationTrace,
    Trajectory,
    feature_dim,
    features,
    rollout_generic,
    rollout_population,
)
from .mfgloop import LoopConfig, LoopReport, aggregate, run_algorithm1
from .evalne import (
    DeployedPolicy,
    NeGapEstimate,
    SweepResult,
    best_response_cost,
    deploy,
    estimate_deployed_cost,
    gap_estimate,
    sweep,
)
