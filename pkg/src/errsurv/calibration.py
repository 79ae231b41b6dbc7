"""Regression calibration: post-hoc coefficient correction and delta-method variance.

Calibration coefficients come from regressing the reference measure ``X**`` on
``(1, X*, Z)`` within the calibration subset.  The block matrix

    Delta = [[delta_1 (p x p), delta_2 (p x q)],
             [0       (q x p), I       (q x q)]]

maps true-scale coefficients to naive ones (``beta* = beta Delta``), so the
corrected row vector is ``beta = beta* A`` with ``A = Delta^{-1}``.

``coef_covariance`` is indexed row-major over (response, regressor) pairs:
entry ``(r * w + s, t * w + u)`` is ``Cov(Delta_rs, Delta_tu)`` for response
components ``r, t < p`` and non-intercept regressors ``s, u < w = p + q``
ordered ``X*_1..X*_p, Z_1..Z_q``.  Intercepts are not included.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data_model import Cohort, CoefficientVector
from .errors import (
    DimensionMismatch,
    RankDeficient,
    SingularDelta,
    SubsetTooSmall,
    ValidationError,
)


@dataclass(frozen=True, eq=False)
class CalibrationModel:
    delta0: np.ndarray
    delta1: np.ndarray
    delta2: np.ndarray
    residual_covariance: np.ndarray
    coef_covariance: np.ndarray
    n_c: int
    x_names: tuple = ()
    z_names: tuple = ()

    @property
    def p(self) -> int:
        return self.delta1.shape[0]

    @property
    def q(self) -> int:
        return self.delta2.shape[1]

    @property
    def w(self) -> int:
        return self.p + self.q

    def correction(self) -> "CorrectionMatrix":
        return CorrectionMatrix.from_blocks(self.delta1, self.delta2)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "n_c": self.n_c,
            "x_names": list(self.x_names),
            "z_names": list(self.z_names),
            "delta0": self.delta0.tolist(),
            "delta1": self.delta1.tolist(),
            "delta2": self.delta2.tolist(),
            "residual_covariance": self.residual_covariance.tolist(),
            "coef_covariance": self.coef_covariance.tolist(),
            "coef_covariance_index": "row-major (response r, regressor s) -> r*(p+q)+s",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationModel":
        try:
            p, q = int(d["p"]), int(d["q"])
            delta1 = np.array(d["delta1"], dtype=float).reshape(p, p)
            delta2 = np.array(d["delta2"], dtype=float).reshape(p, q)
            cov = np.array(d["coef_covariance"], dtype=float).reshape(p * (p + q), p * (p + q))
            model = cls(
                delta0=np.array(d.get("delta0", [0.0] * p), dtype=float).reshape(p),
                delta1=delta1,
                delta2=delta2,
                residual_covariance=np.array(
                    d.get("residual_covariance", np.zeros((p, p))), dtype=float).reshape(p, p),
                coef_covariance=cov,
                n_c=int(d.get("n_c", 0)),
                x_names=tuple(d.get("x_names", ())),
                z_names=tuple(d.get("z_names", ())),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationError(f"malformed calibration file: {exc}") from None
        if not np.allclose(model.coef_covariance, model.coef_covariance.T):
            raise ValidationError("calibration coefficient covariance is not symmetric")
        return model

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "CalibrationModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class CorrectionMatrix:
    delta: np.ndarray
    a: np.ndarray
    p: int

    @classmethod
    def from_blocks(cls, delta1, delta2) -> "CorrectionMatrix":
        delta1 = np.atleast_2d(np.asarray(delta1, dtype=float))
        p = delta1.shape[0]
        delta2 = np.asarray(delta2, dtype=float).reshape(p, -1)
        q = delta2.shape[1]
        delta = np.zeros((p + q, p + q))
        delta[:p, :p] = delta1
        delta[:p, p:] = delta2
        delta[p:, p:] = np.eye(q)
        if np.linalg.cond(delta1) > 1e12:
            raise SingularDelta("calibration slope matrix is singular")
        inv1 = np.linalg.inv(delta1)
        a = np.zeros_like(delta)
        a[:p, :p] = inv1
        a[:p, p:] = -inv1 @ delta2
        a[p:, p:] = np.eye(q)
        return cls(delta, a, p)

    @property
    def w(self) -> int:
        return self.delta.shape[0]


def fit_calibration(cohort: Cohort) -> CalibrationModel:
    """OLS of each ``X**`` component on ``(1, X*, Z)`` over the calibration subset."""
    mask = cohort.subset_mask
    n_c = int(mask.sum())
    p, q = cohort.p, cohort.q
    if n_c <= p + q + 1:
        raise SubsetTooSmall(f"calibration subset has {n_c} subjects; need more than {p + q + 1}")
    xx = cohort.x_double_star[mask]
    if np.isnan(xx).any():
        raise ValidationError("calibration subset has missing x**")
    reg = np.column_stack([np.ones(n_c), cohort.x_star[mask], cohort.z[mask]])
    if np.linalg.matrix_rank(reg) < reg.shape[1]:
        raise RankDeficient("calibration design is rank deficient")
    coef, *_ = np.linalg.lstsq(reg, xx, rcond=None)
    resid = xx - reg @ coef
    df = n_c - reg.shape[1]
    sigma_v = resid.T @ resid / df
    gram_inv = np.linalg.inv(reg.T @ reg)
    # Cov(coef[a, r], coef[b, t]) = sigma_v[r, t] * gram_inv[a, b]
    coef_cov = np.kron(sigma_v, gram_inv[1:, 1:])
    return CalibrationModel(
        delta0=coef[0].copy(),
        delta1=coef[1:1 + p].T.copy(),
        delta2=coef[1 + p:].T.copy(),
        residual_covariance=sigma_v,
        coef_covariance=(coef_cov + coef_cov.T) / 2.0,
        n_c=n_c,
        x_names=cohort.x_names,
        z_names=cohort.z_names,
    )


def correct_beta(beta_star, corr: CorrectionMatrix):
    """Row-vector product ``beta* A``; returns the same type as the input."""
    if isinstance(beta_star, CoefficientVector):
        out = beta_star.as_array() @ corr.a
        return CoefficientVector.from_array(out, corr.p)
    b = np.asarray(beta_star, dtype=float)
    if b.shape[-1] != corr.w:
        raise DimensionMismatch(f"beta has {b.shape[-1]} entries, Delta is {corr.w}x{corr.w}")
    return b @ corr.a


def delta_covariance_tensor(calib: CalibrationModel) -> np.ndarray:
    """``Cov(Delta_rs, Delta_tu)`` as a ``w x w x w x w`` array.

    Entries involving the fixed ``0`` and ``I`` rows of ``Delta`` are zero.
    """
    p, w = calib.p, calib.w
    cov4 = np.zeros((w, w, w, w))
    cov4[:p, :, :p, :] = calib.coef_covariance.reshape(p, w, p, w)
    return cov4


def corrected_covariance(beta_star, sigma_beta_star, corr: CorrectionMatrix,
                         calib: CalibrationModel) -> np.ndarray:
    """Delta-method covariance of ``beta* A``.

    ``A' Sigma* A`` plus, for each ``(j1, j2)``, ``beta* Sigma_A(j1, j2) beta*'``
    where ``Sigma_A(j1, j2)[i1, i2] = sum_rstu A[i1,r] A[s,j1] A[i2,t] A[u,j2]
    Cov(Delta_rs, Delta_tu)``.  ``beta*`` and ``Delta`` are treated as
    independent.
    """
    b = beta_star.as_array() if isinstance(beta_star, CoefficientVector) else np.asarray(
        beta_star, dtype=float)
    sig = np.asarray(sigma_beta_star, dtype=float)
    a = corr.a
    w = corr.w
    if b.shape != (w,) or sig.shape != (w, w) or calib.w != w:
        raise DimensionMismatch("beta*, its covariance and Delta must share dimension p+q")
    first = a.T @ sig @ a
    cov4 = delta_covariance_tensor(calib)
    sigma_a = np.einsum("ar,sj,bt,uk,rstu->jkab", a, a, a, a, cov4, optimize=True)
    second = np.einsum("a,jkab,b->jk", b, sigma_a, b)
    out = first + second
    return (out + out.T) / 2.0


def calibrated_design(cohort: Cohort, calib: CalibrationModel) -> np.ndarray:
    """Design with ``X*`` replaced by its calibrated prediction ``E[X | X*, Z]``."""
    if calib.p != cohort.p or calib.q != cohort.q:
        raise DimensionMismatch("calibration model does not match cohort covariates")
    x_hat = calib.delta0 + cohort.x_star @ calib.delta1.T + cohort.z @ calib.delta2.T
    return np.hstack([x_hat, cohort.z])
