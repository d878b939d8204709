"""Batched, multilevel, and budgeted-multilevel stochastic gradient descent
for elliptic optimal control under log-normal coefficient uncertainty.

The package is organized bottom-up:

  mesh       nested uniform grids, nodal fields, transfers, inner products
  randfield  Matern covariances and circulant-embedding Gaussian fields
  pde        five-point diffusion stencil and a multigrid-preconditioned CG
  problem    the control problem instance and shared experiment wiring
  mlmc       Monte Carlo / multilevel Monte Carlo gradient estimation
  rates      log-log regression for convergence-rate diagnostics
  descent    the three optimizers, allocation, budgets, step rules
  runner     configs, CSV logs, presets
  cli        the ``mlsgd`` command
"""

from .mesh import (
    MAX_EXPONENT,
    AdmissibleBox,
    GridLevel,
    NodalField,
    build_hierarchy,
    field_from_function,
    inner_l2,
    norm_l2,
    project_admissible,
    prolongate,
    prolongate_to,
    restrict,
    zeros,
)
from .randfield import (
    EmbeddingError,
    EmbeddingPlan,
    GrfSampler,
    MaternParams,
    bessel_k,
    build_embedding,
    matern_cov,
    mix_seed,
    sample_field,
    sample_pair,
    splitmix64,
)
from .pde import (
    DiffusionOperator,
    SolveReport,
    SolverError,
    assemble,
    mass_rhs,
    sample_objective,
    solve,
    solve_adjoint,
    solve_state,
)
from .problem import Hyperparams, ProblemSetup, default_target, regularization
from .mlmc import (
    M_MIN,
    NO_DECAY,
    EstimationError,
    GradientEstimate,
    LevelStats,
    MultilevelBatch,
    batch_estimation,
    level_pair_estimation,
    multilevel_estimation,
    numerical_error,
    sampling_error,
)
from .rates import RateFit, estimate_delta, fit_loglinear
from .records import CSV_HEADER, SCHEMA_MAGIC, IterationRecord
from .descent import (
    LAUNCH_HEADROOM,
    STOP_COMPLETED,
    STOP_INFEASIBLE_MEMORY,
    STOP_INFEASIBLE_TIME,
    STOP_TIME_FLOOR,
    TIME_FLOOR_FRACTION,
    BudgetLedger,
    GrowthRates,
    StepRule,
    adaptive_step_size,
    bmlsgd,
    bsgd,
    gradient_step,
    memory_footprint,
    mlsgd,
    not_feasible,
    optimal_batch,
    optimal_batch_raw,
    predicted_batch_cost,
)
from .runner import (
    PRESETS,
    ConfigError,
    RunConfig,
    load_config,
    parse_config,
    parse_csv_log,
    run,
    run_preset,
)

__version__ = "0.1.0"
