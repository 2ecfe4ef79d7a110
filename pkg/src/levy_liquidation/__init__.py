"""Optimal liquidation for a CARA investor when prices follow a Lévy process."""

from .errors import (
    AdmissibilityError,
    DegeneracyError,
    DivergenceError,
    DomainError,
    InvariantError,
    LiquidationError,
    QuadratureError,
)
from .impact import Custom, ImpactModel, PiecewisePowerExp, PowerLaw, eval_F, eval_G, validate_assumptions
from .levy import (
    BrownianLinear,
    GenericTriplet,
    KappaFunction,
    VarianceGamma,
    VGExponentialLinearised,
    bm_match_moments,
    kappa_A,
    linearise_exp_levy,
    vg_kappa_hat,
    vg_kappa_hat_lower_bound,
    vg_kappa_tilde,
)
from .solver import (
    SolveConfig,
    Termination,
    Trajectory,
    classify_termination,
    hjb_residual,
    liquidation_time,
    optimal_speed,
    solve,
    time_to_fraction,
    trajectory,
    value_function,
)

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "DegeneracyError",
    "DivergenceError",
    "DomainError",
    "InvariantError",
    "LiquidationError",
    "QuadratureError",
    "Custom",
    "ImpactModel",
    "PiecewisePowerExp",
    "PowerLaw",
    "eval_F",
    "eval_G",
    "validate_assumptions",
    "BrownianLinear",
    "GenericTriplet",
    "KappaFunction",
    "VarianceGamma",
    "VGExponentialLinearised",
    "bm_match_moments",
    "kappa_A",
    "linearise_exp_levy",
    "vg_kappa_hat",
    "vg_kappa_hat_lower_bound",
    "vg_kappa_tilde",
    "SolveConfig",
    "Termination",
    "Trajectory",
    "classify_termination",
    "hjb_residual",
    "liquidation_time",
    "optimal_speed",
    "solve",
    "time_to_fraction",
    "trajectory",
    "value_function",
]
