"""The five analysis methods as one entry point.

``naive`` and ``true`` fit the cloglog GLM to the data as given (``true``
simply labels data known to be error-free); ``outcome_only`` maximizes the
misclassification likelihood; ``covariate_only`` and ``proposed`` apply the
calibration correction to the first and third respectively.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationModel, correct_beta, corrected_covariance, fit_calibration
from .data_model import Cohort, OutcomeErrorModel
from .errors import ValidationError
from .glm import fit_cohort
from .likelihood import build_spec
from .mle import FitOptions, fit

METHODS = ("naive", "true", "covariate_only", "outcome_only", "proposed")
NEEDS_CALIBRATION = {"covariate_only", "proposed"}
NEEDS_RATES = {"outcome_only", "proposed"}


@dataclass(eq=False)
class MethodResult:
    method: str
    names: tuple
    beta: np.ndarray
    covariance: np.ndarray
    survival: np.ndarray  # strata x (J + 1)
    strata: tuple
    converged: bool
    meta: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def wald(self, increment: float = 1.0, level: float = 0.95) -> list[dict]:
        """Hazard ratios for a change of ``increment`` in each covariate, with Wald CIs."""
        from scipy.stats import norm

        z = norm.ppf(0.5 + level / 2.0)
        rows = []
        for name, b, s in zip(self.names, self.beta, self.se):
            rows.append({
                "method": self.method, "parameter": name, "beta": b, "se": s,
                "hr": np.exp(increment * b),
                "ci_lower": np.exp(increment * (b - z * s)),
                "ci_upper": np.exp(increment * (b + z * s)),
                "p_value": 2.0 * norm.sf(abs(b / s)),
            })
        return rows


def calibration_for(cohort: Cohort, calibration: CalibrationModel | None) -> CalibrationModel:
    if calibration is not None:
        if calibration.p != cohort.p or calibration.q != cohort.q:
            raise ValidationError(
                f"calibration file has p={calibration.p}, q={calibration.q}; "
                f"data have p={cohort.p}, q={cohort.q}"
            )
        return calibration
    if not cohort.subset_mask.any():
        cols = [f"{n}_starstar" for n in cohort.x_names]
        raise ValidationError(
            f"no calibration data: column(s) {cols} with subset_ind=1 are required "
            "(or supply a calibration file)"
        )
    return fit_calibration(cohort)


def run_method(method: str, cohort: Cohort, err: OutcomeErrorModel | None = None,
               calibration: CalibrationModel | None = None, stratified: bool | None = None,
               options: FitOptions | None = None, cache: dict | None = None) -> MethodResult:
    """Fit one method.  ``cache`` lets several methods share the GLM and MLE fits."""
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method in NEEDS_RATES and err is None:
        raise ValidationError(f"method {method!r} needs --se and --sp")
    cache = {} if cache is None else cache
    names = tuple(cohort.x_names) + tuple(cohort.z_names)
    if stratified is None:
        stratified = len(cohort.strata_labels) > 1
    strata = tuple(cohort.strata_labels) if stratified else ("all",)
    j1 = cohort.grid.n_intervals

    if "glm" not in cache:
        cache["glm"] = fit_cohort(cohort, stratified=stratified)
    glm = cache["glm"]
    glm_meta = {"iterations": glm.iterations, "deviance": glm.deviance,
                "separation": glm.separation}
    if method in ("naive", "true"):
        return MethodResult(method, names, glm.beta, glm.beta_covariance,
                            glm.baseline_survival(len(strata), j1), strata, glm.converged,
                            glm_meta)

    calib = calibration_for(cohort, calibration) if method in NEEDS_CALIBRATION else None
    if method == "covariate_only":
        corr = calib.correction()
        return MethodResult(method, names, correct_beta(glm.beta, corr),
                            corrected_covariance(glm.beta, glm.beta_covariance, corr, calib),
                            glm.baseline_survival(len(strata), j1), strata, glm.converged,
                            {**glm_meta, "delta1": calib.delta1.tolist()})

    if "mle" not in cache:
        spec = build_spec(cohort, err, stratified=stratified)
        cache["mle"] = fit(spec, init_beta=glm.beta, options=options, p=cohort.p)
    res = cache["mle"]
    if res.beta_covariance is None:
        from .errors import SingularHessian
        raise SingularHessian("; ".join(res.warnings) or "Hessian could not be inverted")
    meta = {"iterations": res.iterations, "loglik": res.loglik,
            "gradient_norm": res.gradient_norm, "warnings": list(res.warnings)}
    surv = np.array([c.as_array() for c in res.survival_hat])
    if method == "outcome_only":
        return MethodResult(method, names, res.beta, res.beta_covariance, surv, strata,
                            res.converged, meta)
    corr = calib.correction()
    return MethodResult(method, names, correct_beta(res.beta, corr),
                        corrected_covariance(res.beta, res.beta_covariance, corr, calib),
                        surv, strata, res.converged,
                        {**meta, "delta1": calib.delta1.tolist()})
