"""Balancing-weight estimators of weighted average treatment effects.

Implements the inverse-probability / trimming / truncation / overlap /
matching / entropy / beta weighting family, augmented and doubly-robust
estimators, M-estimation sandwich and bootstrap variances, overlap
diagnostics, and a seeded Monte-Carlo harness.
"""

from .data import (
    Dataset,
    WeightScheme,
    parse_scheme,
    read_csv,
    validate_dataset,
    validate_scheme,
    write_csv,
)
from .diagnostics import (
    BalanceTable,
    OverlapSummary,
    effective_sample_size,
    overlap_summary,
    variance_inflation,
    weighted_smd,
)
from .estimators import (
    AugmentedInputs,
    augmented_estimate,
    crude_estimate,
    dr_estimate,
    hajek_estimate,
    regression_estimate,
    stabilized_ipw_estimate,
)
from .glm import (
    DesignSpec,
    FittedOutcome,
    FittedPropensity,
    build_design,
    fit_logistic,
    fit_outcome,
    fit_outcome_models,
    fit_propensity,
    logistic_score,
    outcome_score,
)
from .simulation import (
    DgpSpec,
    MonteCarloSummary,
    generate_dgp1,
    generate_dgp2,
    generate_illustrative,
    run_monte_carlo,
    true_asymptotic_variance,
    true_estimand,
)
from .variance import (
    BootstrapResult,
    EstimatingStack,
    SandwichResult,
    bootstrap_variance,
    sandwich_augmented,
    sandwich_hajek,
)
from .weights import (
    SmoothedMatchingCoeffs,
    WeightSet,
    compute_weightset,
    selection_g,
    selection_gradient,
    smoothing_coeffs,
    weight_gradient,
    weight_wz,
)

__version__ = "0.1.0"
