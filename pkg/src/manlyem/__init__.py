"""Finite mixtures of Manly-transformed Gaussians fitted by EM."""

from .datagen import SimScheme, paper_scheme_model, simulate, simulate_with_diagnostics
from .driver import FitConfig, FitResult, WarmStart, fit, init_hard_assign, warm_start_fit
from .estep import responsibilities
from .model import (
    ComponentParams,
    Dataset,
    MixtureModel,
    component_log_density,
    objective_O,
    observed_log_likelihood,
)
from .newton import (
    SafeguardOptions,
    closed_form_updates,
    gradient_O,
    hessian_O,
    newton_lambda_step,
)
from .simplex import SimplexOptions, nelder_mead_minimize, profile_objective
from .study import StudyConfig, run_loo_study, summarize
from .transform import manly_forward, manly_inverse, v_kernel, w_kernel

__version__ = "0.1.0"
