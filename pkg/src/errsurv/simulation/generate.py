"""Synthetic cohorts with a misclassified outcome and an error-prone covariate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data_model import Cohort, FollowUpMode, SubjectRecord, TimeGrid
from .config import ScenarioConfig

X_NAMES = ("x_1",)
Z_NAMES = ("z_1", "z_2")


@dataclass(frozen=True, eq=False)
class LatentTruth:
    """Quantities the analyst never sees, kept for the error-free fit and checks."""

    x: np.ndarray  # N x 3: X1, Z1, Z2
    event_time: np.ndarray
    true_status: np.ndarray  # N x J, 1 once the event has occurred by the visit
    observed: np.ndarray  # N x J visit mask after missed visits, before truncation
    y_full: np.ndarray  # N x J corrupted tests at every scheduled visit
    prevalent: np.ndarray
    strata: np.ndarray
    kept: np.ndarray  # indices of generated subjects retained in the cohort

    @property
    def censoring_rate(self) -> float:
        return float(np.mean(~self.true_status[:, -1].astype(bool)))

    def truth_cohort(self, grid: TimeGrid) -> Cohort:
        """Error-free data: true ``X`` and true status, stopped at the first true event.

        Subjects with the event before baseline violate the model's event-free
        start and are left out.
        """
        k = ~self.prevalent
        return _build_cohort(
            grid, self.x[k, :1], self.x[k, 1:], self.true_status[k], self.observed[k],
            self.strata[k], np.zeros(int(k.sum()), bool), None, stop=True,
        )


def rng_for(seed: int, rep_index: int) -> np.random.Generator:
    """Independent stream for replication ``rep_index``."""
    return np.random.default_rng([int(seed), int(rep_index)])


def generate_cohort(cfg: ScenarioConfig, rep_index: int = 0) -> tuple[Cohort, LatentTruth]:
    """Draw one cohort.

    Subjects whose every visit was missed carry no information and are dropped.
    """
    rng = rng_for(cfg.rng_seed, rep_index)
    n = cfg.n
    taus = np.array(cfg.visit_times)
    j = len(taus)

    x = rng.multivariate_normal(np.zeros(3), np.array(cfg.covariate_covariance), size=n)
    a0, a1, a2, a3 = cfg.alpha
    x_star = a0 + a1 * x[:, 0] + a2 * x[:, 1] + a3 * x[:, 2] + cfg.error_dist.sample(rng, n)

    subset = np.zeros(n, dtype=bool)
    subset[rng.choice(n, size=cfg.n_c, replace=False)] = True
    x_ss = x[:, 0] + rng.normal(0.0, np.sqrt(cfg.epsilon_var), n)

    strata = np.arange(n) % cfg.n_strata
    rate = np.array(cfg.baseline_hazards)[strata] * np.exp(x @ np.array(cfg.beta_true))
    event_time = rng.exponential(1.0 / rate)
    prevalent = rng.random(n) < 1.0 - cfg.eta
    event_time[prevalent] = 0.0

    true_status = (event_time[:, None] <= taus[None, :]).astype(np.int8)
    u = rng.random((n, j))
    y = np.where(true_status == 1, u < cfg.se, u >= cfg.sp).astype(np.int8)
    observed = rng.random((n, j)) >= cfg.p_miss

    keep = np.flatnonzero(observed.any(axis=1))
    truth = LatentTruth(
        x=x[keep], event_time=event_time[keep], true_status=true_status[keep],
        observed=observed[keep], y_full=y[keep], prevalent=prevalent[keep],
        strata=strata[keep], kept=keep,
    )
    grid = TimeGrid(tuple(cfg.visit_times))
    cohort = _build_cohort(
        grid, x_star[keep, None], x[keep, 1:], y[keep], observed[keep], strata[keep],
        subset[keep], x_ss[keep, None], stop=cfg.stop_after_first_positive,
    )
    return cohort, truth


def _build_cohort(grid, x_star, z, y, observed, strata, subset, x_ss, stop) -> Cohort:
    taus = grid.taus
    observed = observed.copy()
    if stop:
        hit = (y == 1) & observed
        first = np.where(hit.any(axis=1), np.argmax(hit, axis=1), y.shape[1])
        observed &= np.arange(y.shape[1])[None, :] <= first[:, None]
    subjects = []
    for i in range(len(y)):
        idx = np.flatnonzero(observed[i])
        subjects.append(SubjectRecord(
            id=i + 1,
            y=tuple(int(v) for v in y[i, idx]),
            t=tuple(taus[k] for k in idx),
            x_star=tuple(x_star[i]),
            z=tuple(z[i]),
            stratum=int(strata[i]),
            in_calibration_subset=bool(subset[i]),
            x_double_star=tuple(x_ss[i]) if subset[i] else None,
        ))
    mode = FollowUpMode.STOP_AFTER_FIRST_POSITIVE if stop else FollowUpMode.FULL_SCHEDULE
    return Cohort(grid, subjects, mode, X_NAMES, Z_NAMES)
