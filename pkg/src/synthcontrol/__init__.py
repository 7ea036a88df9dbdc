"""Synthetic control estimation, placebo inference and robustness checks."""

from .inference import (
    InferenceError,
    PlaceboEnsemble,
    PlaceboFit,
    PValueSeries,
    apply_mspe_filters,
    empirical_p_values,
    run_in_space_placebos,
)
from .panel import (
    ExcludedUnit,
    InferenceSettings,
    PanelDataset,
    PanelError,
    PanelSchema,
    PredictorDef,
    StudySpec,
    ValidationReport,
    Violation,
    build_predictor_matrices,
    load_panel_csv,
    validate_study,
    write_panel_csv,
)
from .qp import QpSolution, SimplexWeights, kkt_residual, solve_simplex_wls
from .robustness import RobustnessReport, in_time_placebo, leave_one_out, restricted_pool
from .scm import (
    FitError,
    PredictorWeights,
    StudyValidationError,
    SyntheticControlFit,
    compute_gap_series,
    fit_synthetic_control,
    optimize_predictor_weights,
)
from .simulate import FactorModelSpec, random_factor_model, simulate_factor_model
from .transforms import (
    CompositeResult,
    CompositeSpec,
    ZeroVarianceError,
    add_composite_outcome,
    pca_first_component,
    standardize_predictors,
)

__version__ = "0.1.0"
