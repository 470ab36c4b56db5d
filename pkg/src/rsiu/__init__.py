"""Ranking and selection of simulated designs when input distributions are estimated from data."""

from .core import (
    Block,
    DataBatch,
    Design,
    ExponentialMean,
    InputModel,
    NormalMean,
    ParametricSource,
    Problem,
    RecordedSource,
    RngStream,
    batch_data,
    simulate,
    simulate_crn,
    stream,
)
from .errors import (
    ConfigError,
    DomainError,
    InfeasibleBudgetError,
    InsufficientPilotError,
    NumericalError,
    RsiuError,
    ShapeError,
    StreamExhaustedError,
    TieError,
    WarmupError,
)
from .estimation import (
    OutputWindow,
    ThetaTracker,
    eta_star,
    limiting_variance_pairwise,
    limiting_variance_single,
    moving_average,
    weight_w,
)
from .fixed_budget import (
    AllocationPlan,
    lr_gradient,
    ocba_rule,
    optimal_data_size,
    psi_sq,
    run_fixed_split,
    run_ocba,
    run_ocbaiu,
    solve_allocation,
)
from .fixed_confidence import (
    HEURISTIC,
    NOIU_BASELINE,
    PAIRWISE,
    SEIU,
    BoundParams,
    SelectionResult,
    bounds_heuristic,
    bounds_pairwise,
    bounds_seiu,
    plug_in_params,
    run_fixed_confidence,
    run_pilot,
    solve_u_star,
    tail_beta,
    tail_kappa,
)
from .harness import ExperimentConfig, estimate_pcs, grid_fraction, table_expected_stages
from .testbeds import get_testbed

__version__ = "0.1.0"
