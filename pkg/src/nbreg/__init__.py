"""L1-penalized negative binomial regression.

Library surface: the count model and its derivatives (`model`), the
proximal-gradient solver (`solver`), penalty-level rules (`penalty`),
consistency diagnostics (`diagnostics`), the simulation/benchmark harness
(`experiments`), and CSV/JSON plumbing plus the command line (`data_io`,
`cli`).
"""

from .errors import ConfigError, DomainError, NBRegError, NumericError, ParseError
from .model import (
    Dataset,
    LinearPredictor,
    NBModel,
    gradient,
    gradient_factored,
    hessian_matrix,
    hessian_quadratic_form,
    linear_predictor,
    loss,
    nb_log_pmf,
    nb_pmf,
    nb_sample,
    standardized_residuals,
    third_derivative_form,
    v_weights,
)
from .penalty import (
    PenaltyChoice,
    inverse_normal_cdf,
    lambda_asymptotic,
    lambda_exact,
    normal_cdf,
    pilot_beta,
)
from .solver import FitConfig, FitResult, fit, kkt_residual, soft_threshold
from .data_io import DataFile, StandardizationRecord, load_csv, standardize
from .diagnostics import (
    BoundsCheck,
    ConditionReport,
    TailDiagnostic,
    TheoremLedger,
    check_conditions,
    tail_diagnostic,
    theorem_ledger,
    verify_bounds,
)
from .experiments import (
    CVSpec,
    Metrics,
    MetricsSummary,
    PipelineReport,
    ScenarioSpec,
    cross_validate,
    default_lambda_grid,
    gen_design,
    gen_truth,
    metrics,
    nb_deviance,
    prediction_error,
    run_scenario,
    train_test_pipeline,
)

__version__ = "0.1.0"
