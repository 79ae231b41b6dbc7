"""Named scenarios for every simulation table.

Row order inside each table follows its printed layout: the Se/Sp block,
then the attenuation level (0.60 before 0.30), then the varying column.
"""

from __future__ import annotations

import math
from itertools import product

import numpy as np

from ..data_model import Cohort, FollowUpMode, SubjectRecord, TimeGrid
from ..errors import ConfigError
from .config import Normal, NormalMixture, ScenarioConfig, StudentT

LOG15, LOG07, LOG13, LOG3 = math.log(1.5), math.log(0.7), math.log(1.3), math.log(3.0)

# error variance giving attenuation 0.60 / 0.30
SIGMA2 = {0.60: 0.59, 0.30: 1.72}
TESTS = ((0.80, 0.90), (0.90, 0.80))
VISITS = {0.90: (2.0, 5.0, 7.0, 8.0), 0.55: (1.0, 3.0, 4.0, 6.0)}
HAZARD = {  # (beta_x1, censoring rate) -> baseline hazard
    (LOG15, 0.90): (0.012,), (LOG15, 0.55): (0.094,),
    (LOG3, 0.90): (0.008,), (LOG3, 0.55): (0.076,),
    (0.0, 0.90): (0.012,), (0.0, 0.55): (0.094,),
}
STRATA_HAZARD = {0.90: (0.008, 0.010, 0.011, 0.019), 0.55: (0.090, 0.080, 0.075, 0.131)}
MIXTURE = NormalMixture(0.4, 0.0, 1.0, 2.0, 1.5)
WHI_VISITS = tuple(float(k) for k in range(1, 9))
WHI_HAZARD = 0.0056


def _base(se, sp, delta, cr, beta_x1=LOG15, **kw) -> ScenarioConfig:
    kw.setdefault("error_dist", Normal(SIGMA2[delta]))
    kw.setdefault("baseline_hazards", HAZARD[(beta_x1, cr)])
    return ScenarioConfig(
        se=se, sp=sp, visit_times=VISITS[cr], beta_true=(beta_x1, LOG07, LOG13), **kw
    )


def _build() -> dict:
    out = {}
    for k, ((se, sp), delta, cr) in enumerate(product(TESTS, (0.60, 0.30), (0.90, 0.55)), 1):
        out[f"table1_row{k}"] = _base(se, sp, delta, cr, name=f"table1_row{k}")
        out[f"table2_row{k}"] = _base(se, sp, delta, cr, LOG3, name=f"table2_row{k}")
        out[f"table4_row{k}"] = _base(se, sp, delta, cr, baseline_hazards=STRATA_HAZARD[cr],
                                      name=f"table4_row{k}")
    for k, ((se, sp), (label, dist), cr) in enumerate(
            product(TESTS, (("t", StudentT(4.0)), ("mix", MIXTURE)), (0.90, 0.55)), 1):
        out[f"table3_row{k}"] = _base(se, sp, 0.60, cr, error_dist=dist, name=f"table3_row{k}")
    # type I error table lists attenuation 0.30 first, then censoring 0.55 first
    for k, ((se, sp), delta, cr) in enumerate(product(TESTS, (0.30, 0.60), (0.55, 0.90)), 1):
        out[f"table5_row{k}"] = _base(se, sp, delta, cr, 0.0, name=f"table5_row{k}",
                                      replications=1000)
    for k, (delta, cr) in enumerate(product((0.60, 0.30), (0.90, 0.55)), 1):
        out[f"s1_row{k}"] = _base(0.80, 0.90, delta, cr, name=f"s1_row{k}")
    for k, ((se, sp), delta, eta) in enumerate(product(TESTS, (0.60, 0.30), (0.98, 0.90)), 1):
        out[f"s2_row{k}"] = _base(se, sp, delta, 0.90, eta=eta, name=f"s2_row{k}")
    for k, ((se, sp), delta, pm) in enumerate(product(TESTS, (0.60, 0.30), (0.10, 0.40)), 1):
        out[f"s3_row{k}"] = _base(se, sp, delta, 0.90, p_miss=pm, name=f"s3_row{k}")
    for k, delta in enumerate((0.60, 0.30), 1):
        out[f"s4_row{k}"] = ScenarioConfig(
            n=65000, n_c=500, error_dist=Normal(SIGMA2[delta]), se=0.61, sp=0.995, eta=0.96,
            visit_times=WHI_VISITS, baseline_hazards=(WHI_HAZARD,),
            stop_after_first_positive=True, replications=1000, name=f"s4_row{k}",
        )
    out["whi"] = out["s4_row1"].with_overrides(name="whi")
    return out


PRESETS = _build()


def preset_names() -> list[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}") from None


def example_dataset(seed: int = 2021, n: int = 10000, n_c: int = 500) -> Cohort:
    """A worked-example cohort: one error-prone covariate, four precise ones, four visits.

    ``z_1, z_2`` are continuous and ``z_3, z_4`` binary; tests have
    Se = 0.60, Sp = 0.98 and 5% of subjects already had the event at baseline.
    Follow-up stops after the first positive test.
    """
    rng = np.random.default_rng(seed)
    cov = np.full((3, 3), 0.3)
    np.fill_diagonal(cov, 1.0)
    xz = rng.multivariate_normal(np.zeros(3), cov, size=n)
    z34 = (rng.random((n, 2)) < np.array([0.5, 0.3])).astype(float)
    x = xz[:, 0]
    z = np.column_stack([xz[:, 1:], z34])
    x_star = 1.0 + 0.8 * x + z @ np.array([0.3, 0.5, 0.2, -0.2]) + rng.normal(0, math.sqrt(0.59), n)
    subset = np.zeros(n, dtype=bool)
    subset[rng.choice(n, n_c, replace=False)] = True
    x_ss = x + rng.normal(0, math.sqrt(0.06), n)
    beta = np.array([LOG15, LOG07, LOG13, math.log(1.2), math.log(0.9)])
    rate = 0.02 * np.exp(np.column_stack([x, z]) @ beta)
    t_event = rng.exponential(1 / rate)
    t_event[rng.random(n) < 0.05] = 0.0
    taus = np.array([1.0, 2.0, 3.0, 4.0])
    status = t_event[:, None] <= taus
    u = rng.random((n, 4))
    y = np.where(status, u < 0.60, u >= 0.98).astype(int)
    subjects = []
    for i in range(n):
        hit = np.flatnonzero(y[i])
        m = hit[0] + 1 if hit.size else 4
        subjects.append(SubjectRecord(
            id=i + 1, y=tuple(int(v) for v in y[i, :m]), t=tuple(taus[:m]),
            x_star=(float(x_star[i]),), z=tuple(float(v) for v in z[i]),
            in_calibration_subset=bool(subset[i]),
            x_double_star=(float(x_ss[i]),) if subset[i] else None,
        ))
    return Cohort(TimeGrid(tuple(taus)), subjects, FollowUpMode.STOP_AFTER_FIRST_POSITIVE,
                  ("x_1",), ("z_1", "z_2", "z_3", "z_4"))
