"""Copula-linked stochastic frontier models with distributional predictors.

Bivariate (or single-margin) composed-error frontier regressions in which
every distribution parameter carries its own additive predictor of penalized
splines, linear terms, and random effects, estimated by penalized maximum
likelihood with automatic smoothing-parameter selection.
"""

__version__ = "0.1.0"

from .basis import (
    DesignBlock,
    KnotGrid,
    bspline_basis,
    bspline_design,
    center_block,
    difference_penalty,
    random_effect_design,
    sc_coefficients,
    sc_penalty,
    sc_transform_matrix,
)
from .copula import FAMILIES, copula_cdf, copula_logpdf, copula_logpdf_grad, delta_from_eta
from .margins import (
    MarginParams,
    composed_cdf,
    composed_logpdf,
    cdf_grad,
    efficiency_bc,
    efficiency_jlms,
    logpdf_grad,
    owen_t,
)
from .model import (
    MarginSpec,
    ModelSpec,
    PanelData,
    PredictorSpec,
    StackedModel,
    TermSpec,
    build_design,
    penalized_grad,
    penalized_hessian,
    penalized_loglik,
    predict_parameters,
)
from .optim import (
    FitOptions,
    LambdaState,
    TrustRegionState,
    fit,
    select_lambda,
    trust_region_step,
)
from .inference import (
    ConvergenceReport,
    FitResult,
    coefficient_intervals,
    credible_intervals,
    edf,
    gaic,
    posterior_draws,
)

__all__ = [name for name in dir() if not name.startswith("_")]
