"""Grouped proportional hazards via person-period expansion and a cloglog GLM.

Used as the naive estimator, as the estimator on error-free simulated data and
as the source of starting values for the misclassification-adjusted fit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data_model import Cohort, FollowUpMode
from .errors import ModeMismatch, RankDeficient, ValidationError

logger = logging.getLogger(__name__)

SEPARATION_THRESHOLD = 15.0
_MU_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class PersonPeriodTable:
    """One row per subject and at-risk interval, up to the first positive."""

    subject: np.ndarray
    interval: np.ndarray  # 1-based
    event: np.ndarray
    covariates: np.ndarray
    stratum: np.ndarray
    n_strata: int
    n_visits: int

    def __len__(self):
        return len(self.event)


def expand_person_period(cohort: Cohort, covariates: np.ndarray | None = None,
                         stratified: bool | None = None) -> PersonPeriodTable:
    """Expand a stop-after-first-positive cohort to person-period rows.

    A subject whose last visit sits at grid position ``m`` contributes rows for
    intervals ``1..m``; the last row carries the subject's final test result.
    Missed visits inside that range count as negative rows.
    """
    if cohort.follow_up_mode is not FollowUpMode.STOP_AFTER_FIRST_POSITIVE:
        raise ModeMismatch("person-period expansion needs a stop-after-first-positive cohort")
    if covariates is None:
        covariates = cohort.design
    covariates = np.asarray(covariates, dtype=float)
    observed, y = cohort.visit_arrays
    n_visits = observed.shape[1]
    has_visit = observed.any(axis=1)
    last = np.where(has_visit, n_visits - 1 - np.argmax(observed[:, ::-1], axis=1), -1)
    counts = last + 1
    subject = np.repeat(np.arange(cohort.n), counts)
    starts = np.cumsum(counts) - counts
    interval = np.arange(counts.sum()) - np.repeat(starts, counts) + 1
    event = np.zeros(counts.sum(), dtype=int)
    ends = starts + counts - 1
    ok = counts > 0
    event[ends[ok]] = y[np.arange(cohort.n)[ok], last[ok]]
    if stratified is None:
        stratified = len(cohort.strata_labels) > 1
    codes = cohort.strata_codes if stratified else np.zeros(cohort.n, dtype=int)
    return PersonPeriodTable(
        subject=subject,
        interval=interval,
        event=event,
        covariates=covariates[subject],
        stratum=codes[subject],
        n_strata=len(cohort.strata_labels) if stratified else 1,
        n_visits=n_visits,
    )


@dataclass(eq=False)
class GLMResult:
    coef: np.ndarray
    covariance: np.ndarray
    names: list
    n_beta: int
    deviance: float
    loglik: float
    converged: bool
    iterations: int
    separation: bool
    deviance_trace: list = field(default_factory=list)
    intercept_index: dict = field(default_factory=dict)

    @property
    def beta(self) -> np.ndarray:
        return self.coef[-self.n_beta:] if self.n_beta else np.empty(0)

    @property
    def beta_covariance(self) -> np.ndarray:
        k = self.n_beta
        return self.covariance[-k:, -k:]

    @property
    def beta_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.beta_covariance))

    def baseline_survival(self, n_strata: int, n_intervals: int) -> np.ndarray:
        """Baseline ``S`` per stratum implied by the interval intercepts.

        ``S_{j+1} / S_j = exp(-exp(alpha_j))``; intervals without rows keep
        the previous value.
        """
        s = np.ones((n_strata, n_intervals))
        for k in range(n_strata):
            for j in range(1, n_intervals):
                col = self.intercept_index.get((k, j))
                step = np.exp(-np.exp(self.coef[col])) if col is not None else 1.0
                s[k, j] = s[k, j - 1] * step
        return s


def _cloglog_mean(eta):
    return -np.expm1(-np.exp(eta))


def _deviance(y, mu):
    mu = np.clip(mu, _MU_EPS, 1 - _MU_EPS)
    return -2.0 * float(np.sum(y * np.log(mu) + (1 - y) * np.log1p(-mu)))


def fit_cloglog(table: PersonPeriodTable, interval_factors: bool = True,
                strata: bool | None = None, tol: float = 1e-10,
                max_iter: int = 50, information: str = "observed") -> GLMResult:
    """Binomial GLM with complementary log-log link fitted by IRLS.

    Parameters
    ----------
    table : PersonPeriodTable
    interval_factors : bool
        One intercept per interval (per stratum and interval when stratified);
        otherwise a single common intercept.
    strata : bool, optional
        Stratum-specific interval intercepts; defaults to ``table.n_strata > 1``.
    tol : float
        Convergence threshold on relative deviance change.
    information : {"observed", "expected"}
        Information matrix used for the covariance.  The link is not
        canonical, so the two differ away from the limit; ``observed``
        matches the Hessian-based covariance of the likelihood fit.

    Returns
    -------
    GLMResult
    """
    if information not in ("observed", "expected"):
        raise ValueError("information must be 'observed' or 'expected'")
    if len(table) == 0:
        raise ValidationError("empty person-period table")
    if strata is None:
        strata = table.n_strata > 1
    y = table.event.astype(float)
    cols, names, index = [], [], {}
    if interval_factors:
        codes = table.stratum if strata else np.zeros(len(table), dtype=int)
        for k in np.unique(codes):
            for j in np.unique(table.interval[codes == k]):
                index[(int(k), int(j))] = len(cols)
                cols.append(((codes == k) & (table.interval == j)).astype(float))
                names.append(f"interval[{k},{j}]" if strata else f"interval[{j}]")
    else:
        cols.append(np.ones(len(table)))
        names.append("intercept")
    n_beta = table.covariates.shape[1]
    X = np.column_stack(cols + [table.covariates[:, k] for k in range(n_beta)])
    names += [f"beta[{k}]" for k in range(n_beta)]
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficient("person-period design matrix is rank deficient")

    mu = (y + 0.5) / 2.0
    eta = np.log(-np.log1p(-mu))
    coef = None
    dev = _deviance(y, mu)
    trace = [dev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = np.clip(_cloglog_mean(eta), _MU_EPS, 1 - _MU_EPS)
        dmu = np.maximum(np.exp(eta - np.exp(eta)), 1e-300)
        w = dmu ** 2 / (mu * (1 - mu))
        z = eta + (y - mu) / dmu
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        new_eta = X @ new
        new_dev = _deviance(y, _cloglog_mean(new_eta))
        if coef is not None and new_dev > dev:
            # step halving keeps the deviance non-increasing
            for _ in range(30):
                new = (new + coef) / 2.0
                new_eta = X @ new
                new_dev = _deviance(y, _cloglog_mean(new_eta))
                if new_dev <= dev:
                    break
        step = abs(new_dev - dev) / (abs(new_dev) + 0.1)
        coef, eta, dev = new, new_eta, new_dev
        trace.append(dev)
        if step < tol:
            converged = True
            break

    mu = np.clip(_cloglog_mean(eta), _MU_EPS, 1 - _MU_EPS)
    dmu = np.exp(eta - np.exp(eta))
    w = dmu ** 2 / (mu * (1 - mu))
    if information == "observed":
        # -d2l/deta2 = w - (y - mu) * d/deta[e^eta / mu]
        ee = np.exp(eta)
        w = w - (y - mu) * (ee / mu - ee ** 2 * (1 - mu) / mu ** 2)
    info = X.T @ (X * w[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    separation = bool(np.any(np.abs(coef) > SEPARATION_THRESHOLD))
    if separation:
        logger.warning("cloglog fit: coefficient magnitude above %g (separation?)",
                       SEPARATION_THRESHOLD)
    ll = float(np.sum(y * np.log(mu) + (1 - y) * np.log1p(-mu)))
    return GLMResult(coef, cov, names, n_beta, dev, ll, converged, it, separation,
                     trace, index)


def fit_cohort(cohort: Cohort, covariates: np.ndarray | None = None,
               stratified: bool | None = None, information: str = "observed") -> GLMResult:
    """Naive fit: truncate at the first positive, expand and fit."""
    if cohort.follow_up_mode is not FollowUpMode.STOP_AFTER_FIRST_POSITIVE:
        cohort = cohort.truncated_after_first_positive()
    table = expand_person_period(cohort, covariates, stratified)
    return fit_cloglog(table, information=information)
