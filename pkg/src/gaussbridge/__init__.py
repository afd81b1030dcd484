"""Closed-form Gaussian bridge solving plus learned forward/backward refinement.

The library solves the entropy-regularized interpolation problem between two
Gaussians under a linear reference SDE in closed form (marginals, drift
matrices, conditional bridges), then trains a pair of small policy networks
to carry non-Gaussian structure of real point clouds on top of that backbone.

Hot numeric kernels (counter-based RNG, Euler integration, log-domain
Sinkhorn) run through numba when available, with a pure numpy twin selected
by the GSB_NUMBA environment flag.
"""

__version__ = "0.1.0"

from .bridge import (
    GsbProblem,
    GsbSolution,
    ValidationReport,
    bridge_given_end,
    bridge_given_start,
    drift,
    drift_matrix,
    marginal,
    solve,
    validate,
)
from .datasets import (
    DATASET_NAMES,
    make_dataset,
    make_gaussian_mixture,
    make_moons,
    make_spiral,
    read_points_csv,
    shared_standardize,
    write_points_csv,
)
from .errors import (
    ConfigError,
    DegenerateHorizon,
    DimensionMismatch,
    DimensionTooLarge,
    DivergedSimulation,
    GsbError,
    InvalidParams,
    NonFiniteLoss,
    NotPsd,
    OutputLocked,
    QuadratureFailure,
    SingularCovariance,
    SingularMarginal,
    TimeOutOfRange,
    TooFewPoints,
)
from .gaussian import (
    Gaussian,
    JointGaussian2d,
    SymPsdMatrix,
    as_psd,
    condition,
    coupling_cross_cov,
    static_coupling,
)
from .metrics import SinkhornConfig, SinkhornResult, estimate_moments, sinkhorn_weps
from .policy import (
    AdamState,
    PolicyNetwork,
    divergence,
    load_checkpoint,
    save_checkpoint,
)
from .sde import LinearSde, SdeScalars, effective_sigma, preset
from .simulate import (
    TimeGrid,
    TrajectoryBatch,
    euler_backward,
    euler_forward,
    make_grid,
    sample_bridge,
    sample_gaussian,
)
from .training import (
    RunState,
    TrainConfig,
    generate,
    init_state,
    pretrain,
    train_alternating,
)

__all__ = [
    "__version__",
    # errors
    "GsbError", "InvalidParams", "ConfigError", "DimensionMismatch",
    "DimensionTooLarge", "NotPsd", "SingularCovariance", "SingularMarginal",
    "TimeOutOfRange", "QuadratureFailure", "DegenerateHorizon",
    "DivergedSimulation", "NonFiniteLoss", "TooFewPoints", "OutputLocked",
    # gaussian layer
    "SymPsdMatrix", "as_psd", "Gaussian", "JointGaussian2d",
    "coupling_cross_cov", "condition", "static_coupling",
    # sde layer
    "LinearSde", "SdeScalars", "preset", "effective_sigma",
    # bridge layer
    "GsbProblem", "GsbSolution", "solve", "marginal", "drift_matrix", "drift",
    "bridge_given_start", "bridge_given_end", "validate", "ValidationReport",
    # simulation
    "TimeGrid", "make_grid", "TrajectoryBatch", "euler_forward",
    "euler_backward", "sample_bridge", "sample_gaussian",
    # policies and training
    "PolicyNetwork", "AdamState", "divergence", "save_checkpoint",
    "load_checkpoint", "TrainConfig", "RunState", "init_state", "pretrain",
    "train_alternating", "generate",
    # metrics
    "SinkhornConfig", "SinkhornResult", "sinkhorn_weps", "estimate_moments",
    # datasets
    "DATASET_NAMES", "make_dataset", "make_moons", "make_spiral",
    "make_gaussian_mixture", "shared_standardize", "write_points_csv",
    "read_points_csv",
]
