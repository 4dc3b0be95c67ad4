"""Estimation of cross-covariance surfaces, functional singular components
and the function-on-function regression coefficient surface from sparse,
irregularly observed longitudinal data.

All smoothing problems are posed over reproducing kernel Hilbert spaces of
Sobolev type, so each estimate is a finite combination of kernel sections
with coefficients solving a single ridge-type linear system.
"""

__version__ = "1.0.0"

from .kernel import (
    KernelSpec,
    NumericalError,
    QuadratureRule,
    bernoulli,
    gauss_legendre,
    gram_bundle,
    kernel_eval,
    kernel_matrix,
)
from .meanfit import FittedFunction, LongitudinalSample, fit_mean
from .autocov import EigenSystem, FittedSymSurface, eigensystem, fit_autocov
from .crosscov import (
    FittedSurface,
    SingularSystem,
    fit_crosscov,
    pair_subjects,
    singular_system,
)
from .tuning import (
    CVPlan,
    DEFAULT_LAMBDA_GRID,
    ErrorReport,
    crossval_lambda,
    make_cv_plan,
    surface_error,
)
from .regression import (
    CoefficientSurface,
    FitSettings,
    ModelBundle,
    assemble_beta,
    fit_model,
    predict_response,
    select_truncation,
)
from .model_io import model_from_json, model_to_json
from .sim import SimConfig, TruthBundle, generate_dataset, run_experiment

__all__ = [
    "__version__",
    "KernelSpec",
    "NumericalError",
    "QuadratureRule",
    "bernoulli",
    "gauss_legendre",
    "gram_bundle",
    "kernel_eval",
    "kernel_matrix",
    "FittedFunction",
    "LongitudinalSample",
    "fit_mean",
    "EigenSystem",
    "FittedSymSurface",
    "eigensystem",
    "fit_autocov",
    "FittedSurface",
    "SingularSystem",
    "fit_crosscov",
    "pair_subjects",
    "singular_system",
    "CVPlan",
    "DEFAULT_LAMBDA_GRID",
    "ErrorReport",
    "crossval_lambda",
    "make_cv_plan",
    "surface_error",
    "CoefficientSurface",
    "FitSettings",
    "ModelBundle",
    "assemble_beta",
    "fit_model",
    "predict_response",
    "select_truncation",
    "model_from_json",
    "model_to_json",
    "SimConfig",
    "TruthBundle",
    "generate_dataset",
    "run_experiment",
]
