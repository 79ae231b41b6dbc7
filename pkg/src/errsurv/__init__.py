"""Discrete-time proportional hazards with misclassified outcomes and error-prone covariates."""

from .calibration import (
    CalibrationModel,
    CorrectionMatrix,
    calibrated_design,
    correct_beta,
    corrected_covariance,
    fit_calibration,
)
from .data_model import (
    Cohort,
    CoefficientVector,
    FollowUpMode,
    OutcomeErrorModel,
    SubjectRecord,
    SurvivalCurve,
    TimeGrid,
    ingest_long,
    read_long_csv,
    to_long,
    validate_cohort,
)
from .glm import expand_person_period, fit_cloglog, fit_cohort
from .likelihood import LikelihoodMode, build_spec, log_likelihood, log_likelihood_gradient
from .mle import FitOptions, FitResult, fit

__version__ = "0.1.0"

__all__ = [
    "CalibrationModel", "CorrectionMatrix", "calibrated_design", "correct_beta",
    "corrected_covariance", "fit_calibration", "Cohort", "CoefficientVector", "FollowUpMode",
    "OutcomeErrorModel", "SubjectRecord", "SurvivalCurve", "TimeGrid", "ingest_long",
    "read_long_csv", "to_long", "validate_cohort", "expand_person_period", "fit_cloglog",
    "fit_cohort", "LikelihoodMode", "build_spec", "log_likelihood", "log_likelihood_gradient",
    "FitOptions", "FitResult", "fit",
]
