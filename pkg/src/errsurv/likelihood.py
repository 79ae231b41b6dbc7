"""Misclassification-adjusted likelihood for grouped proportional hazards.

Each subject contributes ``log(sum_j w_j D_ij S_j ** exp(x_i' beta))`` where
``D = C M``, ``C_ij`` is the probability of the subject's observed test
sequence given the true event fell in interval ``j`` and ``M`` maps survival
values to interval masses.  ``w_1 = 1`` and ``w_j = eta`` for ``j > 1``; with
``eta = 1`` this is the ordinary misclassified-outcome likelihood.

Survival values enter through cumulative hazards ``H = -log S`` so that
``S ** e == exp(-e * H)``.  Gradients are taken with respect to the
log-log parameters of :mod:`errsurv.reparam` and ``beta``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import xlogy

from .data_model import Cohort, CoefficientVector, OutcomeErrorModel, SurvivalCurve
from .errors import DimensionMismatch, NonPositiveLikelihoodTerm, ValidationError
from .reparam import reparameterize


class LikelihoodMode(str, enum.Enum):
    STANDARD = "standard"
    STRATIFIED = "stratified"
    NPV_ADJUSTED = "npv"
    STRATIFIED_NPV = "stratified_npv"

    @property
    def stratified(self) -> bool:
        return self in (LikelihoodMode.STRATIFIED, LikelihoodMode.STRATIFIED_NPV)

    @property
    def npv(self) -> bool:
        return self in (LikelihoodMode.NPV_ADJUSTED, LikelihoodMode.STRATIFIED_NPV)


@dataclass(frozen=True, eq=False)
class LikelihoodMatrices:
    c: np.ndarray
    m: np.ndarray
    d: np.ndarray


@dataclass(frozen=True, eq=False)
class LikelihoodSpec:
    matrices: LikelihoodMatrices
    design: np.ndarray
    strata: np.ndarray
    n_strata: int
    error_model: OutcomeErrorModel
    mode: LikelihoodMode
    s1_free: bool = False

    def __post_init__(self):
        n = self.matrices.d.shape[0]
        if self.design.shape[0] != n or self.strata.shape[0] != n:
            raise DimensionMismatch("row counts of D, design and strata disagree")
        if not self.mode.npv and self.error_model.eta != 1.0:
            raise ValidationError("eta < 1 requires an NPV likelihood mode")
        if self.s1_free and not self.mode.npv:
            raise ValidationError("a free S_1 is only meaningful in NPV mode")

    @property
    def n_intervals(self) -> int:
        return self.matrices.d.shape[1]

    @property
    def n_survival_per_stratum(self) -> int:
        return self.n_intervals - (0 if self.s1_free else 1)

    @property
    def n_survival(self) -> int:
        return self.n_strata * self.n_survival_per_stratum

    @property
    def n_beta(self) -> int:
        return self.design.shape[1]

    @property
    def n_params(self) -> int:
        return self.n_survival + self.n_beta

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_intervals, self.error_model.eta)
        w[0] = 1.0
        return w

    @property
    def strata_onehot(self) -> np.ndarray:
        return np.eye(self.n_strata)[self.strata]

    def split(self, params) -> tuple[np.ndarray, np.ndarray]:
        """Split a flat parameter vector into ``(phi[K, nS], beta)``."""
        params = np.asarray(params, dtype=float)
        phi = params[: self.n_survival].reshape(self.n_strata, self.n_survival_per_stratum)
        return phi, params[self.n_survival:]


def compute_c_matrix(cohort: Cohort, err: OutcomeErrorModel) -> np.ndarray:
    """``C_ij``: probability of subject ``i``'s tests given an event in interval ``j``.

    A visit at grid time ``tau_m`` counts as post-event for interval ``j`` when
    ``m >= j`` and as pre-event otherwise; unobserved grid times contribute
    nothing.  Products are accumulated as sums of logs.
    """
    observed, y = cohort.visit_arrays
    labels = cohort.strata_labels
    rates = np.array([err.rates_for(lab) for lab in labels])[cohort.strata_codes]
    se, sp = rates[:, :1], rates[:, 1:]
    yf = y.astype(float)
    post = np.where(observed, xlogy(yf, se) + xlogy(1 - yf, 1 - se), 0.0)
    pre = np.where(observed, xlogy(1 - yf, sp) + xlogy(yf, 1 - sp), 0.0)
    n = cohort.n
    pre_before = np.hstack([np.zeros((n, 1)), np.cumsum(pre, axis=1)])
    post_from = np.hstack([np.cumsum(post[:, ::-1], axis=1)[:, ::-1], np.zeros((n, 1))])
    return np.exp(pre_before + post_from)


def build_m_matrix(j_plus_1: int) -> np.ndarray:
    """Bidiagonal map from survival values to interval masses (``theta = M S``)."""
    if j_plus_1 < 2:
        raise ValidationError("need at least two intervals")
    return np.eye(j_plus_1) - np.eye(j_plus_1, k=1)


def build_matrices(cohort: Cohort, err: OutcomeErrorModel) -> LikelihoodMatrices:
    c = compute_c_matrix(cohort, err)
    m = build_m_matrix(c.shape[1])
    return LikelihoodMatrices(c, m, c @ m)


def build_spec(
    cohort: Cohort,
    err: OutcomeErrorModel,
    design: np.ndarray | None = None,
    stratified: bool | None = None,
    s1_free: bool = False,
) -> LikelihoodSpec:
    """Assemble a :class:`LikelihoodSpec`; the mode follows from strata and ``eta``."""
    if design is None:
        design = cohort.design
    design = np.asarray(design, dtype=float)
    if stratified is None:
        stratified = len(cohort.strata_labels) > 1
    npv = err.eta < 1.0 or s1_free
    strata = cohort.strata_codes if stratified else np.zeros(cohort.n, dtype=int)
    n_strata = len(cohort.strata_labels) if stratified else 1
    mode = {
        (False, False): LikelihoodMode.STANDARD,
        (True, False): LikelihoodMode.STRATIFIED,
        (False, True): LikelihoodMode.NPV_ADJUSTED,
        (True, True): LikelihoodMode.STRATIFIED_NPV,
    }[(bool(stratified), npv)]
    return LikelihoodSpec(
        build_matrices(cohort, err), design, strata, n_strata, err, mode, s1_free
    )


def _evaluate(spec: LikelihoodSpec, cum_hazard: np.ndarray, beta: np.ndarray, grad: bool):
    """Log-likelihood and its derivatives w.r.t. ``log H`` and ``beta``.

    ``cum_hazard`` is ``K x (J+1)`` with entries ``-log S_jk``.
    """
    lin = spec.design @ beta
    e = np.exp(lin)
    h = cum_hazard[spec.strata]
    terms = (spec.weights * spec.matrices.d) * np.exp(-e[:, None] * h)
    inner = terms.sum(axis=1)
    bad = np.flatnonzero(~(inner > 0))
    if bad.size:
        return -np.inf, int(bad[0]), None, None
    ll = float(np.sum(np.log(inner)))
    if not grad:
        return ll, None, None, None
    # d log(inner_i) / d log H_j
    g = terms * (-e[:, None] * h) / inner[:, None]
    g_beta = spec.design.T @ g.sum(axis=1)
    g_loghaz = spec.strata_onehot.T @ g
    return ll, None, g_loghaz, g_beta


def _curves_to_hazard(spec: LikelihoodSpec, curves) -> np.ndarray:
    curves = _as_curve_list(spec, curves)
    with np.errstate(divide="ignore"):
        return np.array([-np.log(c.as_array()) for c in curves])


def _as_curve_list(spec, curves) -> list:
    if isinstance(curves, SurvivalCurve):
        curves = [curves]
    curves = list(curves)
    if len(curves) != spec.n_strata:
        raise DimensionMismatch(f"expected {spec.n_strata} survival curves, got {len(curves)}")
    for c in curves:
        if len(c.s) != spec.n_intervals:
            raise DimensionMismatch("survival curve length does not match J+1")
    return curves


def _beta_array(spec, beta) -> np.ndarray:
    b = beta.as_array() if isinstance(beta, CoefficientVector) else np.asarray(beta, float)
    if b.shape != (spec.n_beta,):
        raise DimensionMismatch(f"expected {spec.n_beta} coefficients, got {b.shape}")
    return b


def log_likelihood(spec: LikelihoodSpec, curves, beta) -> float:
    """Evaluate the log-likelihood; returns ``-inf`` with a warning if any term is <= 0."""
    ll, bad, _, _ = _evaluate(spec, _curves_to_hazard(spec, curves), _beta_array(spec, beta),
                              grad=False)
    if bad is not None:
        warnings.warn(f"non-positive likelihood term for subject index {bad}",
                      NonPositiveLikelihoodTerm, stacklevel=2)
    return ll


def params_to_hazard(spec: LikelihoodSpec, phi: np.ndarray) -> np.ndarray:
    h = np.exp(np.cumsum(phi, axis=1))
    if spec.s1_free:
        return h
    return np.hstack([np.zeros((spec.n_strata, 1)), h])


def loglik_and_grad(spec: LikelihoodSpec, params) -> tuple[float, np.ndarray | None]:
    """Objective in the flat ``(phi..., beta)`` parameterization used by the optimizer."""
    phi, beta = spec.split(params)
    haz = params_to_hazard(spec, phi)
    ll, bad, g_loghaz, g_beta = _evaluate(spec, haz, beta, grad=True)
    if bad is not None:
        return ll, None
    if not spec.s1_free:
        g_loghaz = g_loghaz[:, 1:]
    # phi_l enters log H_j for every j >= l along the chain
    g_phi = np.cumsum(g_loghaz[:, ::-1], axis=1)[:, ::-1]
    return ll, np.concatenate([g_phi.ravel(), g_beta])


def curves_to_params(spec: LikelihoodSpec, curves, beta) -> np.ndarray:
    curves = _as_curve_list(spec, curves)
    phi = [reparameterize(SurvivalCurve(c.s, spec.s1_free)) for c in curves]
    return np.concatenate(phi + [_beta_array(spec, beta)])


def log_likelihood_gradient(spec: LikelihoodSpec, curves, beta) -> np.ndarray:
    """Analytic gradient w.r.t. the reparameterized survival values and ``beta``."""
    ll, g = loglik_and_grad(spec, curves_to_params(spec, curves, beta))
    if g is None:
        warnings.warn("gradient undefined: non-positive likelihood term",
                      NonPositiveLikelihoodTerm, stacklevel=2)
        return np.full(spec.n_params, np.nan)
    return g


def per_subject_terms(spec: LikelihoodSpec, curves: Sequence[SurvivalCurve], beta) -> np.ndarray:
    """Inner sums ``sum_j w_j D_ij S_j^{e_i}`` for every subject."""
    haz = _curves_to_hazard(spec, curves)
    b = _beta_array(spec, beta)
    e = np.exp(spec.design @ b)
    return ((spec.weights * spec.matrices.d) * np.exp(-e[:, None] * haz[spec.strata])).sum(1)
