"""Mean-variance allocation of ad calls across pay-per-response ads."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    AdSpec,
    Allocation,
    AllocationProblem,
    LearningRecord,
    MarketProblem,
    MarketValidationError,
    PosteriorSummary,
    PriceType,
    PriorSpec,
    VarianceBreakdown,
    validate_market,
)
from .posterior import QuadratureConfig, posterior_beta, posterior_grid, sample_rate, simulate_learning  # noqa: E402
from .qp import (  # noqa: E402
    DEFAULT_Q_GRID,
    InfeasibleBound,
    SolverConfig,
    SolverFailure,
    project_simplex,
    qmap_grid_oracle,
    round_allocation,
    solve_map,
    solve_qmap,
    trace_frontier,
)
from .variance import (  # noqa: E402
    ApproxForm,
    SingleAdInputs,
    allocation_variance,
    build_problem,
    diversification_curve,
    expected_revenue,
    single_ad_variance_approx,
    uncertainty_randomness_ratio,
    variance_oracle,
)
