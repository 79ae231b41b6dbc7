"""Scenario configuration for the Monte Carlo study."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Union

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class Normal:
    """``e ~ N(0, var)``."""

    var: float

    def sample(self, rng, n):
        return rng.normal(0.0, math.sqrt(self.var), n)

    @property
    def variance(self) -> float:
        return self.var


@dataclass(frozen=True)
class StudentT:
    df: float

    def sample(self, rng, n):
        return rng.standard_t(self.df, n)

    @property
    def variance(self) -> float:
        return self.df / (self.df - 2.0) if self.df > 2 else math.inf


@dataclass(frozen=True)
class NormalMixture:
    """``w N(mu1, sd1^2) + (1 - w) N(mu2, sd2^2)``; components given by standard deviation."""

    w: float
    mu1: float
    sd1: float
    mu2: float
    sd2: float

    def sample(self, rng, n):
        first = rng.random(n) < self.w
        return np.where(first, rng.normal(self.mu1, self.sd1, n), rng.normal(self.mu2, self.sd2, n))

    @property
    def variance(self) -> float:
        m = self.w * self.mu1 + (1 - self.w) * self.mu2
        second = self.w * (self.sd1 ** 2 + self.mu1 ** 2) + (1 - self.w) * (self.sd2 ** 2 + self.mu2 ** 2)
        return second - m ** 2


ErrorDist = Union[Normal, StudentT, NormalMixture]
_DISTS = {"normal": Normal, "t": StudentT, "mixture": NormalMixture}


def error_dist_to_dict(d: ErrorDist) -> dict:
    name = {Normal: "normal", StudentT: "t", NormalMixture: "mixture"}[type(d)]
    return {"type": name, **asdict(d)}


def error_dist_from_dict(d: dict) -> ErrorDist:
    d = dict(d)
    kind = d.pop("type", None)
    if kind not in _DISTS:
        raise ConfigError(f"error_dist.type must be one of {sorted(_DISTS)}, got {kind!r}")
    try:
        return _DISTS[kind](**d)
    except TypeError as exc:
        raise ConfigError(f"error_dist: {exc}") from None


DEFAULT_COV = ((1.0, 0.3, 0.3), (0.3, 1.0, 0.3), (0.3, 0.3, 1.0))


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario.

    Covariates ``(X1, Z1, Z2)`` are multivariate normal with mean zero;
    ``X* = a0 + a1 X1 + a2 Z1 + a3 Z2 + e`` and ``X** = X1 + eps`` on a
    random calibration subset of size ``n_c``.  Event times are exponential
    with rate ``baseline_hazards[k] * exp(x' beta_true)`` in stratum ``k``
    (subjects are split evenly across strata).
    """

    n: int = 1000
    n_c: int = 500
    covariate_covariance: tuple = DEFAULT_COV
    alpha: tuple = (1.0, 0.8, 0.3, 0.5)
    error_dist: ErrorDist = field(default_factory=lambda: Normal(0.59))
    epsilon_var: float = 0.06
    beta_true: tuple = (math.log(1.5), math.log(0.7), math.log(1.3))
    baseline_hazards: tuple = (0.012,)
    visit_times: tuple = (2.0, 5.0, 7.0, 8.0)
    se: float = 0.8
    sp: float = 0.9
    eta: float = 1.0
    p_miss: float = 0.0
    stop_after_first_positive: bool = False
    replications: int = 200
    rng_seed: int = 20240611
    name: str = ""

    def __post_init__(self):
        for name in ("covariate_covariance", "alpha", "beta_true", "baseline_hazards", "visit_times"):
            v = getattr(self, name)
            if name == "covariate_covariance":
                v = tuple(tuple(float(a) for a in row) for row in v)
            else:
                v = tuple(float(a) for a in v)
            object.__setattr__(self, name, v)
        if isinstance(self.error_dist, dict):
            object.__setattr__(self, "error_dist", error_dist_from_dict(self.error_dist))
        for p in ("se", "sp", "eta", "p_miss"):
            if not 0.0 <= getattr(self, p) <= 1.0:
                raise ConfigError(f"{p} must lie in [0, 1]")
        if self.se + self.sp <= 1.0:
            raise ConfigError("se + sp must exceed 1")
        if any(h <= 0 for h in self.baseline_hazards) or not self.baseline_hazards:
            raise ConfigError("baseline_hazards must be positive")
        if any(b <= a for a, b in zip(self.visit_times, self.visit_times[1:])) or not self.visit_times:
            raise ConfigError("visit_times must be strictly increasing")
        if self.visit_times[0] <= 0:
            raise ConfigError("visit_times must be positive")
        if len(self.alpha) != 4 or len(self.beta_true) != 3:
            raise ConfigError("alpha needs 4 entries and beta_true 3")
        cov = np.array(self.covariate_covariance)
        if cov.shape != (3, 3) or np.any(np.linalg.eigvalsh((cov + cov.T) / 2) <= 0):
            raise ConfigError("covariate_covariance must be a positive definite 3x3 matrix")
        if self.n < 1 or not 0 <= self.n_c <= self.n:
            raise ConfigError("need n >= 1 and 0 <= n_c <= n")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.epsilon_var < 0:
            raise ConfigError("epsilon_var must be non-negative")

    @property
    def n_strata(self) -> int:
        return len(self.baseline_hazards)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown scenario field(s): {sorted(unknown)}")
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["error_dist"] = error_dist_to_dict(self.error_dist)
        d["covariate_covariance"] = [list(r) for r in self.covariate_covariance]
        for k in ("alpha", "beta_true", "baseline_hazards", "visit_times"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario field(s): {sorted(unknown)}")
        d = dict(d)
        if "error_dist" in d:
            d["error_dist"] = error_dist_from_dict(d["error_dist"])
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def theoretical_attenuation(self) -> float:
        """Population slope of ``X1`` on ``X*`` given ``Z`` (the target of ``delta_1``)."""
        cov = np.array(self.covariate_covariance)
        # residual variance of X1 given Z
        s_xz = cov[0, 1:]
        v_x_z = cov[0, 0] - s_xz @ np.linalg.solve(cov[1:, 1:], s_xz)
        a1 = self.alpha[1]
        return a1 * v_x_z / (a1 ** 2 * v_x_z + self.error_dist.variance)


def load_scenario(path) -> ScenarioConfig:
    """Read a JSON scenario file; parse errors report line and column."""
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    base = raw.pop("preset", None)
    if base is not None:
        from .presets import get_preset
        return get_preset(base).with_overrides(**_coerce(raw))
    return ScenarioConfig.from_dict(raw)


def _coerce(d):
    d = dict(d)
    if "error_dist" in d and isinstance(d["error_dist"], dict):
        d["error_dist"] = error_dist_from_dict(d["error_dist"])
    return d
