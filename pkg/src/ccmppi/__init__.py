"""Covariance-controlled MPPI: sampling-based MPC whose rollout dispersion is
steered by terminal-covariance-constrained feedback gains, with a race-track
simulation harness."""

from .backend import BACKEND
from .ccmppi import (
    CcIterationDiagnostics,
    CcMppiParams,
    ccmppi_iteration,
    closed_loop_sample,
    predicted_vs_empirical_report,
)
from .covsteer import (
    AugmentedSystem,
    CovarianceSpec,
    CovCostWeights,
    FeedbackGain,
    GainSolveOptions,
    GainSynthesisError,
    InfeasibleTerminalCovariance,
    build_augmented,
    covariance_cost,
    covariance_cost_grad,
    mean_trajectory,
    open_loop_terminal_covariance,
    solve_gain,
    solve_gain_info,
    terminal_covariance,
    zero_gain,
)
from .dynamics import (
    BicycleModel,
    BicycleParams,
    ControlInput,
    DiscreteDynamics,
    DynamicsError,
    LtvModel,
    VehicleState,
    linearize,
    rollout,
    step,
)
from .environment import (
    CostWeights,
    Obstacle,
    Track,
    boundary_cost,
    lateral_deviation,
    make_cost_functions,
    obstacle_cost,
    progress,
    state_cost,
    terminal_cost,
)
from .mppi import (
    IterationDiagnostics,
    MppiParams,
    SampleBatch,
    mppi_iteration,
    noise_stream,
    receding_horizon_shift,
    sample_noise,
    trajectory_cost,
    update_mean,
    weights,
)

__version__ = "0.1.0"
