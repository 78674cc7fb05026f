"""Input-sequence design for Bayesian identification of stochastic
nonlinear state-space models, via Monte-Carlo parameter-MSE lower bounds
minimized over Markov-chain input policies."""

from ._backend import active_backend, set_backend
from .config import RunConfig, config_digest, parse_config
from .design import (
    DesignConfig,
    DesignResult,
    ObjectiveEvaluator,
    evaluate_objective,
    optimize,
    rank_cases,
)
from .exceptions import (
    BoundDegeneracyError,
    CapacityError,
    ConfigError,
    EncodingError,
    EstimatorDegeneracyError,
    InformationUpdateError,
    ModelDefinitionError,
    OracleError,
    PcrlbDesignError,
    PolicyError,
    SimulationDivergenceError,
)
from .models import (
    ExtendedState,
    GaussianSsm,
    SampleEnsemble,
    available_models,
    get_model,
    make_benchmark_model,
    make_bias_model,
    register_model,
    sample_prior,
    simulate_paths,
)
from .oracles import enumerate_objective, fd_h_blocks, grid_search, kalman_extended
from .pcrlb import (
    BoundTrajectory,
    HBlocks,
    Pim,
    bound_trajectory,
    estimate_h_blocks,
    init_pim,
    lower_bound_theta,
    update_pim,
)
from .policy import (
    InputSpace,
    MarkovInputPolicy,
    PolicyTemplate,
    build_input_space,
    make_template,
    policy_from_template,
    read_policy,
    sample_sequence,
    sequence_log_prob,
    write_policy,
)
from .smc import (
    SmcConfig,
    SmcResult,
    ValidationReport,
    mse_experiment,
    policy_bound_trace,
    smc_joint_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "BoundDegeneracyError",
    "BoundTrajectory",
    "CapacityError",
    "ConfigError",
    "DesignConfig",
    "DesignResult",
    "EncodingError",
    "EstimatorDegeneracyError",
    "ExtendedState",
    "GaussianSsm",
    "HBlocks",
    "InformationUpdateError",
    "InputSpace",
    "MarkovInputPolicy",
    "ModelDefinitionError",
    "ObjectiveEvaluator",
    "OracleError",
    "PcrlbDesignError",
    "Pim",
    "PolicyError",
    "PolicyTemplate",
    "RunConfig",
    "SampleEnsemble",
    "SimulationDivergenceError",
    "SmcConfig",
    "SmcResult",
    "ValidationReport",
    "active_backend",
    "available_models",
    "bound_trajectory",
    "build_input_space",
    "config_digest",
    "enumerate_objective",
    "estimate_h_blocks",
    "evaluate_objective",
    "fd_h_blocks",
    "get_model",
    "grid_search",
    "init_pim",
    "kalman_extended",
    "lower_bound_theta",
    "make_benchmark_model",
    "make_bias_model",
    "make_template",
    "mse_experiment",
    "optimize",
    "parse_config",
    "policy_bound_trace",
    "policy_from_template",
    "rank_cases",
    "read_policy",
    "register_model",
    "sample_prior",
    "sample_sequence",
    "sequence_log_prob",
    "set_backend",
    "simulate_paths",
    "smc_joint_estimate",
    "update_pim",
    "write_policy",
]
