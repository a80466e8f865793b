"""Fixed-effects panel regression on moments of high-frequency regressors,
with a single-hidden-layer network as regression function."""

__version__ = "0.1.0"

from .errors import ConvergenceError, InputError, NumericalError, RankDeficiencyError
from .estimator import (
    FitOptions,
    FitResult,
    fit_linear,
    fit_slfn,
    hessian,
    information_criteria,
    load_fit,
    model_df,
    select_model,
)
from .inference import (
    contour_grid,
    interaction_curve,
    location_curve,
    marginal_curve,
    prediction_variance,
    scenario_uniform_shift,
)
from .moments import build_features, moment
from .panel import apply_filters, load_panel, marginal_averages
from .slfn import SlfnParams, SlfnSpec, check_fully_connected, forward, grad_input, grad_params
from .within import FESpec, assemble_design, design_from_arrays, residual_sum_diagnostics, within_transform
