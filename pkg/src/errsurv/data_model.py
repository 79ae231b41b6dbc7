"""Domain types and long-format ingestion.

A cohort is stored as a tuple of immutable :class:`SubjectRecord` objects on a
shared :class:`TimeGrid`.  Array views used by the numerical code are derived
lazily and cached on the :class:`Cohort` instance.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (
    CovariateDriftWithinSubject,
    EmptyCohort,
    GridMismatch,
    MissingCalibrationMeasure,
    ModeMismatch,
    NonmonotoneVisits,
    ValidationError,
)

logger = logging.getLogger(__name__)

X_STAR_RE = re.compile(r"^x_(\d+)_star$")
X_STARSTAR_RE = re.compile(r"^x_(\d+)_starstar$")
Z_RE = re.compile(r"^z_(\d+)$")


class FollowUpMode(str, enum.Enum):
    FULL_SCHEDULE = "full"
    STOP_AFTER_FIRST_POSITIVE = "stop"


@dataclass(frozen=True)
class TimeGrid:
    """Distinct visit times ``tau_1 < ... < tau_J``.

    ``tau_0 = 0`` and ``tau_{J+1} = inf`` are implicit.
    """

    taus: tuple

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        object.__setattr__(self, "taus", taus)
        if len(taus) < 1:
            raise ValidationError("time grid needs at least one visit time")
        if taus[0] <= 0:
            raise ValidationError("visit times must be positive")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValidationError("visit times must be strictly increasing")

    @property
    def n_visits(self) -> int:
        return len(self.taus)

    @property
    def n_intervals(self) -> int:
        return len(self.taus) + 1

    def index_of(self, t: float) -> int:
        """0-based grid position of visit time ``t`` (exact match required)."""
        try:
            return self._lookup[float(t)]
        except KeyError:
            raise GridMismatch(f"visit time {t!r} is not on the grid") from None

    @cached_property
    def _lookup(self) -> dict:
        return {t: k for k, t in enumerate(self.taus)}


@dataclass(frozen=True)
class SubjectRecord:
    id: Hashable
    y: tuple
    t: tuple
    x_star: tuple
    z: tuple = ()
    stratum: Hashable = 0
    in_calibration_subset: bool = False
    x_double_star: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(int(v) for v in self.y))
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))
        object.__setattr__(self, "x_star", tuple(float(v) for v in self.x_star))
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))
        if self.x_double_star is not None:
            object.__setattr__(
                self, "x_double_star", tuple(float(v) for v in self.x_double_star)
            )

    @property
    def n_visits(self) -> int:
        return len(self.y)

    def problems(self) -> list[str]:
        out = []
        if len(self.y) != len(self.t):
            out.append("y and t have different lengths")
        if len(self.y) < 1:
            out.append("no visits")
        if any(v not in (0, 1) for v in self.y):
            out.append("y entries must be 0 or 1")
        if any(b <= a for a, b in zip(self.t, self.t[1:])):
            out.append("visit times not strictly increasing")
        if self.in_calibration_subset and self.x_double_star is None:
            out.append("calibration subset member without x**")
        if not self.in_calibration_subset and self.x_double_star is not None:
            out.append("x** present outside the calibration subset")
        return out


@dataclass(frozen=True)
class OutcomeErrorModel:
    """Known misclassification rates of the error-prone test.

    ``stratum_rates`` optionally maps a stratum label to its own ``(se, sp)``.
    """

    se: float
    sp: float
    eta: float = 1.0
    stratum_rates: dict = field(default_factory=dict)

    def __post_init__(self):
        for se, sp in [(self.se, self.sp), *self.stratum_rates.values()]:
            _check_rates(se, sp)
        if not 0.0 < self.eta <= 1.0:
            raise ValidationError(f"eta must lie in (0, 1], got {self.eta}")

    def rates_for(self, stratum) -> tuple[float, float]:
        return self.stratum_rates.get(stratum, (self.se, self.sp))


def _check_rates(se, sp):
    if not (0.0 < se <= 1.0 and 0.0 < sp <= 1.0):
        raise ValidationError(f"sensitivity/specificity must lie in (0, 1]: {se}, {sp}")
    if se + sp <= 1.0:
        raise ValidationError(f"uninformative test: se + sp = {se + sp} <= 1")


@dataclass(frozen=True)
class CoefficientVector:
    beta_x: tuple
    beta_z: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "beta_x", tuple(float(v) for v in self.beta_x))
        object.__setattr__(self, "beta_z", tuple(float(v) for v in self.beta_z))
        if not np.all(np.isfinite(self.as_array())):
            raise ValidationError("coefficients must be finite")

    @classmethod
    def from_array(cls, beta, p: int) -> "CoefficientVector":
        beta = np.asarray(beta, dtype=float)
        return cls(tuple(beta[:p]), tuple(beta[p:]))

    def as_array(self) -> np.ndarray:
        return np.array(self.beta_x + self.beta_z, dtype=float)


@dataclass(frozen=True)
class SurvivalCurve:
    """Baseline survival ``(S_1, ..., S_{J+1})``; ``S_1 < 1`` only if ``s1_free``."""

    s: tuple
    s1_free: bool = False

    def __post_init__(self):
        object.__setattr__(self, "s", tuple(float(v) for v in self.s))

    def as_array(self) -> np.ndarray:
        return np.array(self.s, dtype=float)

    @property
    def theta(self) -> np.ndarray:
        s = self.as_array()
        return s - np.append(s[1:], 0.0)

    def problems(self) -> list[str]:
        s = self.as_array()
        out = []
        if len(s) < 2:
            out.append("need at least two survival values")
            return out
        if not self.s1_free and s[0] != 1.0:
            out.append("S_1 must equal 1 unless s1_free")
        if s[0] > 1.0:
            out.append("S_1 exceeds 1")
        if s[-1] <= 0.0:
            out.append("S_{J+1} must be positive")
        if np.any(np.diff(s) >= 0):
            out.append("survival values not strictly decreasing")
        return out


@dataclass(frozen=True)
class Cohort:
    grid: TimeGrid
    subjects: tuple
    follow_up_mode: FollowUpMode = FollowUpMode.FULL_SCHEDULE
    x_names: tuple = ("x_1",)
    z_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "follow_up_mode", FollowUpMode(self.follow_up_mode))
        object.__setattr__(self, "x_names", tuple(self.x_names))
        object.__setattr__(self, "z_names", tuple(self.z_names))

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.subjects == other.subjects
            and self.follow_up_mode == other.follow_up_mode
            and self.x_names == other.x_names
            and self.z_names == other.z_names
        )

    __hash__ = None

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def p(self) -> int:
        return len(self.x_names)

    @property
    def q(self) -> int:
        return len(self.z_names)

    @cached_property
    def strata_labels(self) -> tuple:
        labels = {s.stratum for s in self.subjects}
        try:
            return tuple(sorted(labels))
        except TypeError:
            return tuple(sorted(labels, key=str))

    @cached_property
    def strata_codes(self) -> np.ndarray:
        lookup = {lab: k for k, lab in enumerate(self.strata_labels)}
        return np.array([lookup[s.stratum] for s in self.subjects], dtype=int)

    @cached_property
    def x_star(self) -> np.ndarray:
        return np.array([s.x_star for s in self.subjects], dtype=float).reshape(self.n, self.p)

    @cached_property
    def z(self) -> np.ndarray:
        return np.array([s.z for s in self.subjects], dtype=float).reshape(self.n, self.q)

    @cached_property
    def design(self) -> np.ndarray:
        """``N x (p+q)`` matrix of error-prone then precise covariates."""
        return np.hstack([self.x_star, self.z])

    @cached_property
    def subset_mask(self) -> np.ndarray:
        return np.array([s.in_calibration_subset for s in self.subjects], dtype=bool)

    @cached_property
    def x_double_star(self) -> np.ndarray:
        out = np.full((self.n, self.p), np.nan)
        for i, s in enumerate(self.subjects):
            if s.x_double_star is not None:
                out[i] = s.x_double_star
        return out

    @cached_property
    def visit_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """``(observed, y)``, both ``N x J``; ``y`` is 0 where unobserved."""
        observed = np.zeros((self.n, self.grid.n_visits), dtype=bool)
        y = np.zeros((self.n, self.grid.n_visits), dtype=np.int8)
        for i, s in enumerate(self.subjects):
            idx = [self.grid.index_of(t) for t in s.t]
            observed[i, idx] = True
            y[i, idx] = s.y
        return observed, y

    def truncated_after_first_positive(self) -> "Cohort":
        """Drop every visit after each subject's first positive result."""
        subjects = []
        for s in self.subjects:
            if 1 in s.y:
                m = s.y.index(1) + 1
                s = SubjectRecord(
                    s.id, s.y[:m], s.t[:m], s.x_star, s.z, s.stratum,
                    s.in_calibration_subset, s.x_double_star,
                )
            subjects.append(s)
        return Cohort(
            self.grid, subjects, FollowUpMode.STOP_AFTER_FIRST_POSITIVE,
            self.x_names, self.z_names,
        )

    def with_covariates(self, x: np.ndarray) -> "Cohort":
        """Copy of the cohort with the error-prone columns replaced by ``x``."""
        x = np.asarray(x, dtype=float).reshape(self.n, self.p)
        subjects = [
            SubjectRecord(
                s.id, s.y, s.t, tuple(x[i]), s.z, s.stratum,
                s.in_calibration_subset, s.x_double_star,
            )
            for i, s in enumerate(self.subjects)
        ]
        return Cohort(self.grid, subjects, self.follow_up_mode, self.x_names, self.z_names)

    def summary(self) -> dict:
        n_positive = sum(1 for s in self.subjects if 1 in s.y)
        return {
            "subjects": self.n,
            "J": self.grid.n_visits,
            "grid": list(self.grid.taus),
            "event_positive": n_positive,
            "calibration_subset": int(self.subset_mask.sum()),
            "strata": len(self.strata_labels),
            "follow_up_mode": self.follow_up_mode.value,
            "x_columns": list(self.x_names),
            "z_columns": list(self.z_names),
        }


def is_stop_compatible(y: Sequence[int]) -> bool:
    ones = [k for k, v in enumerate(y) if v == 1]
    return not ones or (len(ones) == 1 and ones[0] == len(y) - 1)


def validate_cohort(c: Cohort) -> list[dict]:
    """Return one diagnostic per invariant violation (empty when valid)."""
    diags = []
    grid = set(c.grid.taus)
    for s in c.subjects:
        for reason in s.problems():
            diags.append({"id": s.id, "reason": reason})
        off = [t for t in s.t if t not in grid]
        if off:
            diags.append({"id": s.id, "reason": f"visit times not on grid: {off}"})
        if len(s.x_star) != c.p or len(s.z) != c.q:
            diags.append({"id": s.id, "reason": "covariate dimension mismatch"})
        if (
            c.follow_up_mode is FollowUpMode.STOP_AFTER_FIRST_POSITIVE
            and not is_stop_compatible(s.y)
        ):
            diags.append({"id": s.id, "reason": "visits continue after first positive"})
    return diags


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and np.isnan(v)) or v == "NA" or v == ""


def detect_columns(columns: Iterable[str]) -> tuple[list[str], list[str], list[str]]:
    """Find ``x_k_star``, ``x_k_starstar`` and ``z_k`` columns, ordered by ``k``."""
    columns = list(columns)

    def pick(pattern):
        found = [(int(m.group(1)), c) for c in columns if (m := pattern.match(c))]
        return [c for _, c in sorted(found)]

    return pick(X_STAR_RE), pick(X_STARSTAR_RE), pick(Z_RE)


def snap_to_grid(times, taus, tol: float) -> np.ndarray:
    """Round each time to the nearest of ``taus`` when within ``tol``."""
    times = np.asarray(times, dtype=float)
    taus = np.asarray(sorted(taus), dtype=float)
    nearest = taus[np.abs(times[:, None] - taus[None, :]).argmin(axis=1)]
    close = np.abs(nearest - times) <= tol
    moved = close & (nearest != times)
    if moved.any():
        logger.info("snapped %d visit times to grid (tol=%g)", int(moved.sum()), tol)
    return np.where(close, nearest, times)


def ingest_long(
    rows,
    follow_up_mode: FollowUpMode | str | None = None,
    x_star: Sequence[str] | None = None,
    z: Sequence[str] | None = None,
    x_double_star: Sequence[str] | None = None,
    stratum: str | None = "stratum",
    id_col: str = "ID",
) -> Cohort:
    """Build a :class:`Cohort` from long-format rows (one row per visit).

    Parameters
    ----------
    rows : DataFrame or iterable of mappings
        Columns ``ID, subset_ind, x_k_star, x_k_starstar, z_k, y, t`` and
        optionally a stratum column.
    follow_up_mode : FollowUpMode, optional
        When given, the data are checked against it; otherwise the mode is
        ``stop`` if every subject's only positive is its final visit and
        ``full`` otherwise.
    x_star, z, x_double_star : list of str, optional
        Explicit covariate columns; detected from the column names by default.
    stratum : str, optional
        Stratum column; all subjects share one stratum if absent.
    """
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    if len(df) == 0:
        raise EmptyCohort("no rows")
    if id_col not in df.columns and id_col.lower() in df.columns:
        id_col = id_col.lower()
    for col in (id_col, "y", "t"):
        if col not in df.columns:
            raise ValidationError(f"missing required column {col!r}")

    auto_x, auto_xx, auto_z = detect_columns(df.columns)
    x_cols = list(x_star) if x_star is not None else auto_x
    z_cols = list(z) if z is not None else auto_z
    if x_double_star is not None:
        xx_cols = list(x_double_star)
    else:
        xx_cols = [c[: -len("_star")] + "_starstar" if c.endswith("_star") else c + "_starstar"
                   for c in x_cols]
    if not x_cols:
        raise ValidationError("no error-prone covariate columns (x_k_star) found")
    for col in x_cols + z_cols:
        if col not in df.columns:
            raise ValidationError(f"missing covariate column {col!r}")
    has_subset = "subset_ind" in df.columns
    has_stratum = stratum is not None and stratum in df.columns

    subjects = []
    for sid, g in df.groupby(id_col, sort=False):
        g = g.reset_index(drop=True)
        t = g["t"].astype(float).to_numpy()
        if np.any(np.diff(t) <= 0):
            order = np.argsort(t, kind="stable")
            t_sorted = t[order]
            if np.any(np.diff(t_sorted) <= 0):
                raise NonmonotoneVisits(f"subject {sid!r}: repeated visit times")
            g = g.iloc[order].reset_index(drop=True)
            t = t_sorted
        y = g["y"].to_numpy()
        if any(_missing(v) for v in y) or not set(np.asarray(y, dtype=float)) <= {0.0, 1.0}:
            raise ValidationError(f"subject {sid!r}: y must be 0/1")

        def constant(cols, allow_missing=False):
            vals = []
            for c in cols:
                col = g[c].tolist()
                miss = [_missing(v) for v in col]
                if any(miss):
                    if allow_missing and all(miss):
                        return None
                    if not allow_missing:
                        raise ValidationError(f"subject {sid!r}: missing value in {c!r}")
                    raise CovariateDriftWithinSubject(
                        f"subject {sid!r}: {c!r} partially missing across rows"
                    )
                arr = np.asarray(col, dtype=float)
                if np.any(arr != arr[0]):
                    raise CovariateDriftWithinSubject(f"subject {sid!r}: {c!r} varies across rows")
                vals.append(float(arr[0]))
            return tuple(vals)

        in_subset = False
        if has_subset:
            flags = g["subset_ind"].to_numpy(dtype=float)
            if np.any(flags != flags[0]):
                raise CovariateDriftWithinSubject(f"subject {sid!r}: subset_ind varies")
            in_subset = bool(flags[0] == 1)
        xx = None
        present_xx = [c for c in xx_cols if c in df.columns]
        if in_subset:
            if len(present_xx) != len(xx_cols):
                missing = [c for c in xx_cols if c not in df.columns]
                raise MissingCalibrationMeasure(f"calibration column(s) absent: {missing}")
            xx = constant(xx_cols, allow_missing=True)
            if xx is None:
                raise MissingCalibrationMeasure(
                    f"subject {sid!r}: subset_ind=1 but {xx_cols} missing"
                )
        elif present_xx:
            extra = constant(present_xx, allow_missing=True)
            if extra is not None:
                raise ValidationError(f"subject {sid!r}: x** present but subset_ind=0")

        strat = 0
        if has_stratum:
            labels = g[stratum].tolist()
            if any(lab != labels[0] for lab in labels):
                raise CovariateDriftWithinSubject(f"subject {sid!r}: stratum varies")
            strat = labels[0]
            if isinstance(strat, np.generic):
                strat = strat.item()
        sid = sid.item() if isinstance(sid, np.generic) else sid
        subjects.append(
            SubjectRecord(
                sid, tuple(int(v) for v in y), tuple(t), constant(x_cols), constant(z_cols),
                strat, in_subset, xx,
            )
        )

    if not subjects:
        raise EmptyCohort("no subjects")
    grid = TimeGrid(tuple(sorted({t for s in subjects for t in s.t})))
    compatible = all(is_stop_compatible(s.y) for s in subjects)
    if follow_up_mode is None:
        mode = (FollowUpMode.STOP_AFTER_FIRST_POSITIVE if compatible
                else FollowUpMode.FULL_SCHEDULE)
        logger.info("follow-up mode inferred from data: %s", mode.value)
    else:
        mode = FollowUpMode(follow_up_mode)
        if mode is FollowUpMode.STOP_AFTER_FIRST_POSITIVE and not compatible:
            raise ModeMismatch("data contain visits after a first positive result")
    return Cohort(grid, subjects, mode, _base_names(x_cols, "_star"), tuple(z_cols))


def _base_names(cols, suffix):
    return tuple(c[: -len(suffix)] if c.endswith(suffix) else c for c in cols)


def to_long(c: Cohort) -> pd.DataFrame:
    """Inverse of :func:`ingest_long`: one row per observed visit."""
    records = []
    for s in c.subjects:
        base = {"ID": s.id, "subset_ind": int(s.in_calibration_subset)}
        for name, v in zip(c.x_names, s.x_star):
            base[f"{name}_star"] = v
        for k, name in enumerate(c.x_names):
            base[f"{name}_starstar"] = (
                s.x_double_star[k] if s.x_double_star is not None else np.nan
            )
        for name, v in zip(c.z_names, s.z):
            base[name] = v
        base["stratum"] = s.stratum
        for y, t in zip(s.y, s.t):
            records.append({**base, "y": y, "t": t})
    return pd.DataFrame.from_records(records)


def read_long_csv(path, **kwargs) -> Cohort:
    df = pd.read_csv(path, na_values=["NA", ""], keep_default_na=True)
    return ingest_long(df, **kwargs)
