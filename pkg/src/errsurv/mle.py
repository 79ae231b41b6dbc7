"""Bound-constrained maximum likelihood for the misclassification model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from .data_model import CoefficientVector, SurvivalCurve
from .errors import InfeasibleStart, SingularHessian
from .likelihood import LikelihoodSpec, curves_to_params, loglik_and_grad
from .reparam import dereparameterize, lower_bounds

logger = logging.getLogger(__name__)

BOUNDARY_MASS = 1e-10


@dataclass(frozen=True)
class FitOptions:
    tol_g: float = 1e-6
    max_iter: int = 500
    history: int = 10
    fd_step: float = 1e-5
    newton_steps: int = 20


@dataclass(eq=False)
class FitResult:
    beta_hat: CoefficientVector
    survival_hat: list
    params: np.ndarray
    covariance: Optional[np.ndarray]
    beta_covariance: Optional[np.ndarray]
    loglik: float
    converged: bool
    iterations: int
    gradient_norm: float
    warnings: list = field(default_factory=list)

    @property
    def beta(self) -> np.ndarray:
        return self.beta_hat.as_array()

    @property
    def beta_se(self) -> Optional[np.ndarray]:
        if self.beta_covariance is None:
            return None
        return np.sqrt(np.diag(self.beta_covariance))


def _bounds(spec: LikelihoodSpec):
    per = lower_bounds(spec.n_survival_per_stratum)
    lo = per * spec.n_strata + [None] * spec.n_beta
    return np.array([-np.inf if b is None else b for b in lo])


def projected_gradient(x, g_loss, lower) -> np.ndarray:
    """Projected gradient of a loss being minimized under lower bounds."""
    pg = np.array(g_loss, dtype=float)
    at_bound = (x <= lower) & (pg > 0)
    pg[at_bound] = 0.0
    return pg


def numerical_hessian(grad: Callable, x, step: float = 1e-5, free=None) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrized.

    If ``free`` is given, only the rows and columns of the free coordinates are
    computed and the returned matrix has shape ``(n_free, n_free)``.
    """
    x = np.asarray(x, dtype=float)
    idx = np.arange(x.size) if free is None else np.flatnonzero(free)
    hess = np.empty((idx.size, idx.size))
    for col, k in enumerate(idx):
        h = step * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        hess[:, col] = (np.asarray(grad(xp))[idx] - np.asarray(grad(xm))[idx]) / (2 * h)
    return (hess + hess.T) / 2.0


def covariance_from_hessian(grad_or_spec, x, step: float = 1e-5, fixed=None) -> np.ndarray:
    """Inverse negative Hessian of the log-likelihood at ``x``.

    ``grad_or_spec`` is either a :class:`LikelihoodSpec` or a callable returning
    the log-likelihood gradient. Coordinates flagged in ``fixed`` (parameters
    held at a bound) are conditioned on: the Hessian is inverted over the
    remaining coordinates and the fixed ones get zero rows and columns.
    """
    if isinstance(grad_or_spec, LikelihoodSpec):
        spec = grad_or_spec
        grad = lambda p: loglik_and_grad(spec, p)[1]  # noqa: E731
    else:
        grad = grad_or_spec
    x = np.asarray(x, dtype=float)
    free = np.ones(x.size, bool) if fixed is None else ~np.asarray(fixed, bool)
    hess = numerical_hessian(grad, x, step, free)
    if not np.all(np.isfinite(hess)):
        raise SingularHessian("Hessian has non-finite entries")
    try:
        cov_ff = np.linalg.inv(-hess)
    except np.linalg.LinAlgError as exc:
        raise SingularHessian(str(exc)) from None
    if not np.all(np.isfinite(cov_ff)) or np.linalg.cond(hess) > 1e14:
        raise SingularHessian("Hessian is numerically singular")
    cov = np.zeros((x.size, x.size))
    cov[np.ix_(free, free)] = (cov_ff + cov_ff.T) / 2.0
    return cov


def default_start(spec: LikelihoodSpec, init_beta=None) -> np.ndarray:
    """All log-log survival parameters at 0.1; ``beta`` from ``init_beta`` or 0."""
    beta = np.zeros(spec.n_beta) if init_beta is None else _as_beta(init_beta)
    return np.concatenate([np.full(spec.n_survival, 0.1), beta])


def _as_beta(beta):
    return beta.as_array() if isinstance(beta, CoefficientVector) else np.asarray(beta, float)


def fit(
    spec: LikelihoodSpec,
    init_beta=None,
    init_s: Sequence[SurvivalCurve] | None = None,
    options: FitOptions | None = None,
    p: int | None = None,
) -> FitResult:
    """Maximize the log-likelihood with L-BFGS-B, then refine with Newton steps.

    Parameters
    ----------
    spec : LikelihoodSpec
    init_beta : array or CoefficientVector, optional
        Starting coefficients (the naive cloglog estimate is the usual choice).
    init_s : list of SurvivalCurve, optional
        Starting baseline survival per stratum; defaults to ``phi = 0.1``.
    options : FitOptions, optional
    p : int, optional
        Number of error-prone covariates, used to split ``beta_hat``.
    """
    opts = options or FitOptions()
    if init_s is None:
        x0 = default_start(spec, init_beta)
    else:
        beta0 = np.zeros(spec.n_beta) if init_beta is None else _as_beta(init_beta)
        x0 = curves_to_params(spec, init_s, beta0)
    lower = _bounds(spec)
    if np.any(x0 < lower):
        raise InfeasibleStart("starting point violates bounds")
    ll0, g0 = loglik_and_grad(spec, x0)
    if not np.isfinite(ll0):
        raise InfeasibleStart("log-likelihood not finite at the starting point")

    def loss(x):
        ll, g = loglik_and_grad(spec, x)
        if g is None or not np.isfinite(ll):
            return np.inf, np.zeros_like(x)
        return -ll, -g

    bounds = [(None if np.isinf(lo) else lo, None) for lo in lower]
    res = optimize.minimize(
        loss, x0, jac=True, method="L-BFGS-B", bounds=bounds,
        options={"maxcor": opts.history, "gtol": opts.tol_g, "ftol": 1e-15,
                 "maxiter": opts.max_iter, "maxls": 50},
    )
    x = np.maximum(res.x, lower)
    iterations = int(res.nit)
    ll, g = loglik_and_grad(spec, x)
    warn = []
    grad_fn = lambda z: loglik_and_grad(spec, z)[1]  # noqa: E731

    pg = projected_gradient(x, -g, lower)
    hess = None
    if np.max(np.abs(pg)) > opts.tol_g:
        x, ll, g, hess, extra = _newton_refine(spec, x, ll, g, lower, opts)
        iterations += extra
        pg = projected_gradient(x, -g, lower)
    gnorm = float(np.max(np.abs(pg)))
    converged = gnorm <= opts.tol_g
    if not converged:
        warn.append(f"not converged: projected gradient {gnorm:.3g} (optimizer: {res.message})")

    # survival parameters within one difference step of their bound are conditioned on
    at_bound = np.isfinite(lower) & (x <= lower + opts.fd_step)
    # a first log-log parameter drifting to -inf (no mass in the first
    # interval) leaves only its sum with the next one identified
    first = np.arange(spec.n_strata) * spec.n_survival_per_stratum
    at_bound[first] |= x[first] < np.log(BOUNDARY_MASS)
    cov = None
    try:
        cov = covariance_from_hessian(grad_fn, x, opts.fd_step, fixed=at_bound)
    except SingularHessian as exc:
        warn.append(f"singular Hessian: {exc}")

    phi, beta = spec.split(x)
    curves = [dereparameterize(row, spec.s1_free) for row in phi]
    for k, c in enumerate(curves):
        mass = -np.diff(c.as_array())
        if np.any(mass < BOUNDARY_MASS):
            warn.append(f"stratum {k}: interval(s) with no fitted mass "
                        f"{list(np.flatnonzero(mass < BOUNDARY_MASS) + 2)}")
    n_b = spec.n_beta
    p = n_b if p is None else p
    beta_cov = None if cov is None else cov[-n_b:, -n_b:]
    for w in warn:
        logger.debug(w)
    return FitResult(
        beta_hat=CoefficientVector.from_array(beta, p),
        survival_hat=curves,
        params=x,
        covariance=cov,
        beta_covariance=beta_cov,
        loglik=float(ll),
        converged=bool(converged),
        iterations=iterations,
        gradient_norm=gnorm,
        warnings=warn,
    )


def _newton_refine(spec, x, ll, g, lower, opts):
    """Safeguarded Newton steps on the coordinates not held at a bound."""
    hess = None
    steps = 0
    grad_fn = lambda z: loglik_and_grad(spec, z)[1]  # noqa: E731
    for steps in range(1, opts.newton_steps + 1):
        pg = projected_gradient(x, -g, lower)
        if np.max(np.abs(pg)) <= opts.tol_g:
            steps -= 1
            break
        free = ~((x <= lower) & (-g > 0))
        hess = numerical_hessian(grad_fn, x, opts.fd_step)
        h_ff = hess[np.ix_(free, free)]
        try:
            direction = np.linalg.solve(-h_ff, g[free])
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(direction)) or direction @ g[free] <= 0:
            direction = g[free] / max(1.0, np.max(np.abs(g[free])))
        t = 1.0
        accepted = False
        for _ in range(40):
            cand = x.copy()
            cand[free] = x[free] + t * direction
            cand = np.maximum(cand, lower)
            ll_c, g_c = loglik_and_grad(spec, cand)
            if g_c is not None and np.isfinite(ll_c) and ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                x, ll, g = cand, ll_c, g_c
                accepted = True
                break
            t /= 2.0
        if not accepted:
            break
    return x, ll, g, hess, steps
