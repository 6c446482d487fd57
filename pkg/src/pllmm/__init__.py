"""Penalized maximum likelihood estimation and fixed-effect selection in
linear mixed-effects models, with l1 / lq / hard-threshold / SCAD penalties,
coordinate gradient descent, BIC path selection, sandwich covariances, and a
Monte Carlo study harness."""

from ._kernels import KERNEL_BACKEND
from .data import (
    SIGMA2_FLOOR,
    GroupBlock,
    MixedModelData,
    ModelParameters,
    VarianceSpec,
    VarianceStructure,
)
from .exceptions import (
    BelowThresholdError,
    DegenerateDataError,
    GroupMismatchError,
    InternalConsistencyError,
    NonPositiveDefiniteError,
    NumericalDomainError,
    PathError,
    PllmmError,
    ScenarioError,
    UnboundedVarianceError,
)
from .inference import (
    InferenceReport,
    build_report,
    conditional_fitted_values,
    cov_eta,
    predict_random_effects,
    prediction_error,
    sandwich_cov_beta,
)
from .likelihood import (
    fisher_info_beta,
    grad_beta,
    grad_eta,
    group_covariance,
    hessian_eta,
    neg_log_likelihood,
)
from .penalties import (
    HARD_ZERO,
    SCAD_DEFAULT_A,
    PenaltyFamily,
    PenaltySpec,
    lqa_weight,
    penalty_derivative,
    penalty_value,
    scalar_threshold,
)
from .selection import PathResult, bic, fit_path, lambda_grid
from .simulation import (
    PenaltyComparison,
    ReplicateRecord,
    ScenarioSummary,
    SimulationScenario,
    compare_penalties,
    format_summary_table,
    generate_dataset,
    run_replicate,
    run_scenario,
    summary_to_kv,
)
from .solver import (
    EtaSearch,
    FitResult,
    SolverConfig,
    armijo_step,
    cgd_fit,
    lasso_init,
    newton_lqa_fit,
    restricted_gls_fit,
    update_variance_components,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "SIGMA2_FLOOR",
    "HARD_ZERO",
    "SCAD_DEFAULT_A",
    "GroupBlock",
    "MixedModelData",
    "ModelParameters",
    "VarianceSpec",
    "VarianceStructure",
    "PenaltyFamily",
    "PenaltySpec",
    "penalty_value",
    "penalty_derivative",
    "lqa_weight",
    "scalar_threshold",
    "neg_log_likelihood",
    "group_covariance",
    "grad_beta",
    "grad_eta",
    "fisher_info_beta",
    "hessian_eta",
    "EtaSearch",
    "SolverConfig",
    "FitResult",
    "cgd_fit",
    "newton_lqa_fit",
    "armijo_step",
    "update_variance_components",
    "lasso_init",
    "restricted_gls_fit",
    "PathResult",
    "bic",
    "lambda_grid",
    "fit_path",
    "InferenceReport",
    "build_report",
    "sandwich_cov_beta",
    "cov_eta",
    "predict_random_effects",
    "prediction_error",
    "conditional_fitted_values",
    "SimulationScenario",
    "ScenarioSummary",
    "ReplicateRecord",
    "PenaltyComparison",
    "generate_dataset",
    "run_replicate",
    "run_scenario",
    "compare_penalties",
    "summary_to_kv",
    "format_summary_table",
    "PllmmError",
    "NumericalDomainError",
    "NonPositiveDefiniteError",
    "BelowThresholdError",
    "UnboundedVarianceError",
    "DegenerateDataError",
    "GroupMismatchError",
    "PathError",
    "ScenarioError",
    "InternalConsistencyError",
]
