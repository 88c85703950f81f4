"""Monte Carlo laboratory for diffusions killed at a domain boundary.

The package simulates controlled diffusions dX = a dt + sigma dW stopped
at the first exit from an open bounded domain, estimates the Markovian
projection of the control onto the stopped state, evaluates costs
conditioned on survival, and runs the experiments tying those pieces
together: the projected feedback reproduces the conditional marginals of
the original control, never costs more when the running cost is convex in
the control, and is approached by truncations of unbounded controls.
"""

from ._version import __version__
from .config import (
    ConfigError,
    RunConfig,
    Tolerances,
    config_hash,
    parse_config,
    serialize_config,
    with_overrides,
)
from .controls import (
    CoinFlipControl,
    Control,
    DeterministicControl,
    MarkovianControl,
    PathFunctionalControl,
    RunningMaxControl,
    TruncatedControl,
    truncate_control,
    zero_control,
)
from .costing import (
    ConditionalMarginal,
    CostComparison,
    CostReport,
    CostSpec,
    DeadEnsembleError,
    SurvivalCurve,
    check_control_convexity,
    check_growth,
    compare_costs,
    compute_cost,
    conditional_marginal,
    quadratic_cost,
    survival_curve,
    wasserstein1,
)
from .dynamics import (
    ChunkView,
    ControlBoundError,
    ParticleEnsemble,
    TimeGrid,
    resimulate_with_common_noise,
    simulate_ensemble,
)
from .experiments import (
    CriterionRow,
    ExperimentReport,
    derive_seeds,
    run_mimicking,
    run_truncation,
    run_value_comparison,
)
from .geometry import (
    BallDomain,
    DiscretePath,
    DomainGeometry,
    IntervalDomain,
    domain_from_dict,
    exit_time,
    grazing_check,
)
from .kernels import available_backends, get_backend, set_backend
from .projection import (
    DriftField,
    as_markovian_control,
    default_bins,
    estimate_projection,
    evaluate_drift,
)

__all__ = [
    "__version__",
    "ConfigError",
    "RunConfig",
    "Tolerances",
    "config_hash",
    "parse_config",
    "serialize_config",
    "with_overrides",
    "Control",
    "MarkovianControl",
    "DeterministicControl",
    "CoinFlipControl",
    "RunningMaxControl",
    "PathFunctionalControl",
    "TruncatedControl",
    "truncate_control",
    "zero_control",
    "CostSpec",
    "CostReport",
    "CostComparison",
    "SurvivalCurve",
    "ConditionalMarginal",
    "DeadEnsembleError",
    "quadratic_cost",
    "check_growth",
    "check_control_convexity",
    "compute_cost",
    "compare_costs",
    "conditional_marginal",
    "survival_curve",
    "wasserstein1",
    "ChunkView",
    "ControlBoundError",
    "ParticleEnsemble",
    "TimeGrid",
    "simulate_ensemble",
    "resimulate_with_common_noise",
    "CriterionRow",
    "ExperimentReport",
    "derive_seeds",
    "run_mimicking",
    "run_truncation",
    "run_value_comparison",
    "BallDomain",
    "DiscretePath",
    "DomainGeometry",
    "IntervalDomain",
    "domain_from_dict",
    "exit_time",
    "grazing_check",
    "available_backends",
    "get_backend",
    "set_backend",
    "DriftField",
    "estimate_projection",
    "evaluate_drift",
    "as_markovian_control",
    "default_bins",
]
