"""Replication loop, estimators and summary metrics."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..calibration import correct_beta, corrected_covariance, fit_calibration
from ..data_model import OutcomeErrorModel
from ..errors import ErrsurvError
from ..glm import fit_cohort
from ..likelihood import build_spec
from ..mle import FitOptions, fit
from .config import ScenarioConfig
from .generate import generate_cohort

logger = logging.getLogger(__name__)

ESTIMATORS = ("true", "naive", "covariate_only", "outcome_only", "proposed")
PARAM_NAMES = ("beta_x1", "beta_z1", "beta_z2")
Z_CRIT = 1.959963984540054


@dataclass(frozen=True)
class Estimate:
    beta: np.ndarray
    se: np.ndarray


@dataclass
class ReplicationResult:
    index: int
    estimates: dict
    failures: dict
    censoring_rate: float
    delta1: float | None = None


def fit_replication(cfg: ScenarioConfig, rep_index: int, estimators=ESTIMATORS,
                    options: FitOptions | None = None) -> ReplicationResult:
    """Generate one cohort and apply each requested estimator.

    A failed or non-converged fit is recorded under ``failures`` instead of
    producing an estimate.
    """
    cohort, truth = generate_cohort(cfg, rep_index)
    est, fails = {}, {}
    need = set(estimators)
    naive = calib = outcome = None
    delta1 = None

    def attempt(name, fn):
        try:
            est[name] = fn()
        except (ErrsurvError, np.linalg.LinAlgError, FloatingPointError) as exc:
            fails[name] = f"{type(exc).__name__}: {exc}"

    if "true" in need:
        def _true():
            g = fit_cohort(truth.truth_cohort(cohort.grid))
            if not g.converged:
                raise ErrsurvError("cloglog fit did not converge")
            return Estimate(g.beta, g.beta_se)
        attempt("true", _true)

    if need & {"naive", "covariate_only", "outcome_only", "proposed"}:
        try:
            naive = fit_cohort(cohort)
            if not naive.converged:
                raise ErrsurvError("cloglog fit did not converge")
        except ErrsurvError as exc:
            naive = None
            for name in need - {"true"}:
                fails[name] = f"naive start failed: {exc}"
    if naive is not None:
        if "naive" in need:
            est["naive"] = Estimate(naive.beta, naive.beta_se)
        if need & {"covariate_only", "proposed"}:
            try:
                calib = fit_calibration(cohort)
                corr = calib.correction()
                delta1 = float(calib.delta1[0, 0])
            except ErrsurvError as exc:
                for name in need & {"covariate_only", "proposed"}:
                    fails[name] = f"calibration failed: {exc}"
        if "covariate_only" in need and calib is not None:
            attempt("covariate_only", lambda: _corrected(naive.beta, naive.beta_covariance,
                                                         corr, calib))
        if need & {"outcome_only", "proposed"}:
            err = OutcomeErrorModel(cfg.se, cfg.sp, cfg.eta)
            try:
                outcome = fit(build_spec(cohort, err), init_beta=naive.beta, options=options, p=1)
                if not outcome.converged or outcome.beta_covariance is None:
                    raise ErrsurvError("; ".join(outcome.warnings) or "no covariance")
            except ErrsurvError as exc:
                outcome = None
                for name in need & {"outcome_only", "proposed"}:
                    fails[name] = f"{type(exc).__name__}: {exc}"
        if outcome is not None:
            if "outcome_only" in need:
                est["outcome_only"] = Estimate(outcome.beta, outcome.beta_se)
            if "proposed" in need and calib is not None:
                attempt("proposed", lambda: _corrected(outcome.beta, outcome.beta_covariance,
                                                       corr, calib))
    return ReplicationResult(rep_index, est, fails, truth.censoring_rate, delta1)


def _corrected(beta, cov, corr, calib) -> Estimate:
    b = correct_beta(beta, corr)
    v = corrected_covariance(beta, cov, corr, calib)
    if np.any(np.diag(v) <= 0):
        raise ErrsurvError("corrected covariance is not positive")
    return Estimate(b, np.sqrt(np.diag(v)))


@dataclass
class MetricsTable:
    """Per-parameter summaries for one estimator.

    ``ese`` is ``None`` when fewer than two replications succeeded.
    """

    estimator: str
    params: tuple
    truth: np.ndarray
    n_success: int
    n_failed: int
    mean_estimate: np.ndarray
    pct_bias: np.ndarray
    ase: np.ndarray
    ese: np.ndarray | None
    cp: np.ndarray
    rejection_rate: np.ndarray
    failure_reasons: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for k, name in enumerate(self.params):
            out.append({
                "estimator": self.estimator,
                "parameter": name,
                "true": self.truth[k],
                "mean": self.mean_estimate[k],
                "%Bias": self.pct_bias[k],
                "ASE": self.ase[k],
                "ESE": None if self.ese is None else self.ese[k],
                "CP": self.cp[k],
                "reject": self.rejection_rate[k],
                "n_success": self.n_success,
                "n_failed": self.n_failed,
            })
        return out

    def __getitem__(self, param: str) -> dict:
        return self.rows()[self.params.index(param)]


def summarize(estimator: str, estimates: list, truth, n_failed: int = 0,
              failure_reasons: dict | None = None, params=PARAM_NAMES) -> MetricsTable:
    """%Bias, ASE, ESE, CP and Wald rejection rate from per-replication estimates."""
    truth = np.asarray(truth, dtype=float)
    k = len(truth)
    if not estimates:
        nan = np.full(k, np.nan)
        return MetricsTable(estimator, tuple(params), truth, 0, n_failed, nan, nan, nan, None,
                            nan, nan, failure_reasons or {})
    b = np.array([e.beta for e in estimates])
    se = np.array([e.se for e in estimates])
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(truth != 0, (b - truth) / truth * 100.0, np.nan)
    lo, hi = b - Z_CRIT * se, b + Z_CRIT * se
    return MetricsTable(
        estimator=estimator,
        params=tuple(params),
        truth=truth,
        n_success=len(estimates),
        n_failed=n_failed,
        mean_estimate=b.mean(axis=0),
        pct_bias=rel.mean(axis=0),
        ase=se.mean(axis=0),
        ese=b.std(axis=0, ddof=1) if len(estimates) > 1 else None,
        cp=((lo <= truth) & (truth <= hi)).mean(axis=0),
        rejection_rate=(np.abs(b / se) > Z_CRIT).mean(axis=0),
        failure_reasons=failure_reasons or {},
    )


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    metrics: dict
    replications: list

    @property
    def mean_censoring_rate(self) -> float:
        return float(np.mean([r.censoring_rate for r in self.replications]))

    @property
    def mean_delta1(self) -> float | None:
        d = [r.delta1 for r in self.replications if r.delta1 is not None]
        return float(np.mean(d)) if d else None

    def manifest(self) -> dict:
        return {
            "scenario": self.config.name,
            "rng_seed": self.config.rng_seed,
            "replications": self.config.replications,
            "config_hash": self.config.config_hash(),
            "config": self.config.to_dict(),
            "mean_true_censoring_rate": self.mean_censoring_rate,
            "mean_delta1": self.mean_delta1,
            "failures": {k: m.n_failed for k, m in self.metrics.items()},
        }

    def write(self, out_dir) -> list[Path]:
        """One CSV per estimator plus ``manifest.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        cols = ["parameter", "true", "mean", "%Bias", "ASE", "ESE", "CP", "reject",
                "n_success", "n_failed"]
        for name, table in self.metrics.items():
            path = out / f"metrics_{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
                w.writeheader()
                for row in table.rows():
                    w.writerow({k: _fmt(v) for k, v in row.items()})
            paths.append(path)
        path = out / "manifest.json"
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2)
        paths.append(path)
        return paths


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else f"{float(v):.6g}"
    return v


def run_scenario(cfg: ScenarioConfig, estimators=ESTIMATORS, threads: int = 1,
                 options: FitOptions | None = None, progress=None) -> ScenarioResult:
    """Run ``cfg.replications`` replications and summarize each estimator.

    Replications are independent; with ``threads > 1`` they run on a thread
    pool, and results are always reduced in replication order.
    """
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise ValueError(f"unknown estimators {sorted(unknown)}")
    estimators = tuple(e for e in ESTIMATORS if e in set(estimators))
    reps = range(cfg.replications)
    task = lambda r: fit_replication(cfg, r, estimators, options)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, reps))
    else:
        results = []
        for r in reps:
            results.append(task(r))
            if progress:
                progress(r + 1, cfg.replications)
    results.sort(key=lambda r: r.index)
    metrics = {}
    for name in estimators:
        ok = [r.estimates[name] for r in results if name in r.estimates]
        reasons = {r.index: r.failures[name] for r in results if name in r.failures}
        if reasons:
            logger.info("%s: %d failed replications", name, len(reasons))
        metrics[name] = summarize(name, ok, cfg.beta_true, len(reasons), reasons)
    return ScenarioResult(cfg, metrics, results)


def type_one_error(cfg: ScenarioConfig, threads: int = 1, estimator: str = "proposed") -> float:
    """Fraction of replications whose Wald test of ``beta_x1 = 0`` rejects at 5%."""
    if cfg.beta_true[0] != 0.0:
        raise ValueError("type I error needs beta_x1 = 0")
    res = run_scenario(cfg, (estimator,), threads)
    return float(res.metrics[estimator].rejection_rate[0])
