"""Sparse varying-coefficient functional linear models.

Scalar-on-function regression with multiple functional predictors whose
coefficient surfaces vary with an exogenous variable.  Curves are expanded in
B-spline bases and reduced by functional PCA; the resulting grouped linear
problem is solved by blockwise coordinate descent under a group adaptive
elastic-net penalty, with tuning by a BIC criterion and a Monte-Carlo study
harness for benchmarking against the constant-coefficient special case.
"""

from .basis import BSplineBasis, RawCurve, constant_basis, evaluate_basis, \
    evaluate_basis_many, gram_matrix, smooth_curve, uniform_basis
from .design import VCFLMDesign, build_design, fitted_to_response
from .fpca import FPCAResult, FunctionalSample, fpca, project_scores, reconstruct, \
    select_truncation
from .simulation import SimulationConfig, StudyReport, SyntheticDataset, apr_anr, \
    default_study_grid, generate, rmse, run_study
from .solver import FitResult, OrthogonalizedDesign, PenaltySpec, adaptive_weights, \
    block_update, coefficient_surface, fit, kkt_residuals, orthogonalize, predict, \
    soft_threshold_group
from .tuning import TuningGrid, TuningReport, TuningRow, bic, default_grid, \
    default_lambda_grid, effective_df, lambda_max, select

__version__ = "0.1.0"

__all__ = [
    "BSplineBasis", "RawCurve", "constant_basis", "evaluate_basis",
    "evaluate_basis_many", "gram_matrix", "smooth_curve", "uniform_basis",
    "FunctionalSample", "FPCAResult", "fpca", "project_scores", "reconstruct",
    "select_truncation",
    "VCFLMDesign", "build_design", "fitted_to_response",
    "OrthogonalizedDesign", "PenaltySpec", "FitResult", "orthogonalize",
    "soft_threshold_group", "adaptive_weights", "block_update", "fit",
    "kkt_residuals", "coefficient_surface", "predict",
    "TuningGrid", "TuningReport", "TuningRow", "effective_df", "bic", "select",
    "default_lambda_grid", "lambda_max", "default_grid",
    "SimulationConfig", "SyntheticDataset", "StudyReport", "generate", "rmse",
    "apr_anr", "run_study", "default_study_grid",
    "__version__",
]
