"""Shared builders and independent reference computations for the tests."""

from __future__ import annotations

import math

import numpy as np

from errsurv.data_model import Cohort, FollowUpMode, SubjectRecord, TimeGrid


def random_cohort(rng, n=50, j=4, se=0.9, sp=0.9, p_miss=0.0, stop=False, strata=1, q=2,
                  beta=(0.4, -0.3, 0.2), hazard=0.15, subset=0):
    """Small cohort on the grid ``1..j`` with one error-prone and ``q`` precise covariates."""
    taus = np.arange(1, j + 1, dtype=float)
    x = rng.normal(size=(n, 1 + q))
    lin = x @ np.resize(np.asarray(beta, float), 1 + q)
    t_event = rng.exponential(1.0 / (hazard * np.exp(lin)))
    status = t_event[:, None] <= taus
    u = rng.random((n, j))
    y = np.where(status, u < se, u >= sp).astype(int)
    subjects = []
    sub = set(rng.choice(n, subset, replace=False).tolist()) if subset else set()
    for i in range(n):
        obs = rng.random(j) >= p_miss
        if not obs.any():
            obs[rng.integers(j)] = True
        idx = np.flatnonzero(obs)
        if stop:
            pos = [k for k in idx if y[i, k] == 1]
            if pos:
                idx = idx[idx <= pos[0]]
        subjects.append(SubjectRecord(
            id=i, y=tuple(int(v) for v in y[i, idx]), t=tuple(taus[idx]),
            x_star=(float(x[i, 0]),), z=tuple(float(v) for v in x[i, 1:]),
            stratum=i % strata, in_calibration_subset=i in sub,
            x_double_star=(float(x[i, 0] + rng.normal(0, 0.3)),) if i in sub else None,
        ))
    mode = FollowUpMode.STOP_AFTER_FIRST_POSITIVE if stop else FollowUpMode.FULL_SCHEDULE
    return Cohort(TimeGrid(tuple(taus)), subjects, mode, ("x_1",),
                  tuple(f"z_{k + 1}" for k in range(q)))


def brute_force_loglik(cohort, err, s, beta, eta=1.0):
    """Sum over subjects of log((1 - eta) C_i1 + eta sum_j theta_j^(i) C_ij), explicit loops.

    With probability ``1 - eta`` the subject had the event before baseline, so
    every visit is post-event (the ``C_i1`` pattern).
    """
    taus = cohort.grid.taus
    s = list(s) + [0.0]
    total = 0.0
    for subj in cohort.subjects:
        se, sp = err.rates_for(subj.stratum)
        e = math.exp(sum(b * v for b, v in zip(beta, subj.x_star + subj.z)))
        mixture, c_first = 0.0, None
        for j in range(len(taus) + 1):  # true event in interval j (0-based)
            c = 1.0
            for y, t in zip(subj.y, subj.t):
                m = taus.index(t)
                if m >= j:
                    c *= se if y == 1 else 1 - se
                else:
                    c *= 1 - sp if y == 1 else sp
            theta = s[j] ** e - (s[j + 1] ** e if j + 1 < len(s) - 1 else 0.0)
            mixture += theta * c
            c_first = c if c_first is None else c_first
        total += math.log((1.0 - eta) * c_first + eta * mixture)
    return total
