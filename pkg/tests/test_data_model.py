import math

import numpy as np
import pandas as pd
import pytest

from errsurv.data_model import (
    Cohort,
    CoefficientVector,
    FollowUpMode,
    OutcomeErrorModel,
    SubjectRecord,
    SurvivalCurve,
    TimeGrid,
    detect_columns,
    ingest_long,
    is_stop_compatible,
    snap_to_grid,
    to_long,
    validate_cohort,
)
from errsurv.errors import (
    CovariateDriftWithinSubject,
    EmptyCohort,
    GridMismatch,
    MissingCalibrationMeasure,
    ModeMismatch,
    NonmonotoneVisits,
    ValidationError,
)

from helpers import random_cohort


def long_rows(subjects):
    rows = []
    for sid, ts, ys, x, z, sub, xx in subjects:
        for t, y in zip(ts, ys):
            rows.append({"ID": sid, "subset_ind": sub, "x_1_star": x, "x_1_starstar": xx,
                         "z_1": z, "y": y, "t": t})
    return pd.DataFrame(rows)


def test_stop_mode_subject_with_final_positive():
    df = long_rows([(1, [1, 2, 3, 4], [0, 0, 0, 1], 0.5, 1.0, 0, np.nan)])
    c = ingest_long(df)
    assert c.follow_up_mode is FollowUpMode.STOP_AFTER_FIRST_POSITIVE
    assert c.subjects[0].n_visits == 4
    assert is_stop_compatible(c.subjects[0].y)


def test_single_visit_cohort():
    c = ingest_long(long_rows([(7, [3.0], [0], 0.1, 0.2, 0, np.nan)]))
    assert c.grid.n_visits == 1 and c.grid.n_intervals == 2
    assert c.subjects[0].n_visits == 1


def test_grid_is_union_of_visit_times():
    df = long_rows([(1, [2, 5], [0, 0], 0.1, 0.0, 0, np.nan),
                    (2, [5, 7, 8], [0, 0, 1], 0.3, 1.0, 0, np.nan)])
    c = ingest_long(df)
    assert c.grid.taus == (2.0, 5.0, 7.0, 8.0)
    observed, _ = c.visit_arrays
    assert observed.tolist() == [[True, True, False, False], [False, True, True, True]]


def test_unsorted_rows_are_sorted_and_repeats_rejected():
    df = long_rows([(1, [3, 1, 2], [1, 0, 0], 0.1, 0.0, 0, np.nan)])
    c = ingest_long(df)
    assert c.subjects[0].t == (1.0, 2.0, 3.0) and c.subjects[0].y == (0, 0, 1)
    with pytest.raises(NonmonotoneVisits):
        ingest_long(long_rows([(1, [1, 1], [0, 0], 0.1, 0.0, 0, np.nan)]))


def test_covariate_drift_rejected():
    df = long_rows([(1, [1, 2], [0, 0], 0.1, 0.0, 0, np.nan)])
    df.loc[1, "x_1_star"] = 0.2
    with pytest.raises(CovariateDriftWithinSubject):
        ingest_long(df)


def test_subset_member_needs_x_double_star():
    with pytest.raises(MissingCalibrationMeasure, match="x_1_starstar"):
        ingest_long(long_rows([(1, [1, 2], [0, 0], 0.1, 0.0, 1, np.nan)]))


def test_mode_mismatch_and_inference():
    df = long_rows([(1, [1, 2], [1, 0], 0.1, 0.0, 0, np.nan)])
    assert ingest_long(df).follow_up_mode is FollowUpMode.FULL_SCHEDULE
    with pytest.raises(ModeMismatch):
        ingest_long(df, follow_up_mode="stop")


def test_empty_and_bad_y():
    with pytest.raises(EmptyCohort):
        ingest_long(pd.DataFrame(columns=["ID", "y", "t", "x_1_star"]))
    df = long_rows([(1, [1], [2], 0.1, 0.0, 0, np.nan)])
    with pytest.raises(ValidationError):
        ingest_long(df)


def test_roundtrip_through_long_format():
    c = random_cohort(np.random.default_rng(0), n=30, p_miss=0.3, subset=10)
    back = ingest_long(to_long(c), follow_up_mode=c.follow_up_mode)
    assert back.n == c.n
    assert [s.y for s in back.subjects] == [s.y for s in c.subjects]
    np.testing.assert_allclose(back.design, c.design)
    assert back.subset_mask.sum() == 10
    np.testing.assert_allclose(back.x_double_star[back.subset_mask],
                               c.x_double_star[c.subset_mask])


def test_detect_columns_orders_by_index():
    xs, xxs, zs = detect_columns(["z_10", "x_2_star", "z_2", "x_1_star", "x_1_starstar", "y"])
    assert xs == ["x_1_star", "x_2_star"] and xxs == ["x_1_starstar"] and zs == ["z_2", "z_10"]


def test_validate_cohort_diagnostics():
    grid = TimeGrid((1.0, 2.0))
    good = Cohort(grid, [SubjectRecord(1, (0, 1), (1.0, 2.0), (0.0,))],
                  FollowUpMode.STOP_AFTER_FIRST_POSITIVE)
    assert validate_cohort(good) == []
    bad = Cohort(grid, [SubjectRecord(1, (1, 0), (1.0, 2.0), (0.0,))],
                 FollowUpMode.STOP_AFTER_FIRST_POSITIVE)
    assert len(validate_cohort(bad)) == 1
    off_grid = Cohort(grid, [SubjectRecord(1, (0,), (3.5,), (0.0,))])
    assert len(validate_cohort(off_grid)) == 1


def test_grid_lookup():
    g = TimeGrid((2.0, 5.0, 7.0))
    assert g.index_of(5.0) == 1
    with pytest.raises(GridMismatch):
        g.index_of(4.0)
    with pytest.raises(ValidationError):
        TimeGrid((2.0, 2.0))


def test_snap_to_grid():
    out = snap_to_grid([0.98, 2.04, 2.5], [1.0, 2.0, 3.0], tol=0.05)
    np.testing.assert_allclose(out, [1.0, 2.0, 2.5])


def test_truncation_after_first_positive():
    c = random_cohort(np.random.default_rng(1), n=40, se=0.7, sp=0.7)
    t = c.truncated_after_first_positive()
    assert t.follow_up_mode is FollowUpMode.STOP_AFTER_FIRST_POSITIVE
    assert all(is_stop_compatible(s.y) for s in t.subjects)
    assert validate_cohort(t) == []


def test_error_model_and_coefficients():
    with pytest.raises(ValidationError):
        OutcomeErrorModel(0.5, 0.5)
    with pytest.raises(ValidationError):
        OutcomeErrorModel(0.9, 0.9, eta=0.0)
    m = OutcomeErrorModel(0.8, 0.9, stratum_rates={"a": (0.7, 0.95)})
    assert m.rates_for("a") == (0.7, 0.95) and m.rates_for("b") == (0.8, 0.9)
    b = CoefficientVector.from_array([1.0, 2.0, 3.0], 1)
    assert b.beta_x == (1.0,) and b.beta_z == (2.0, 3.0)
    with pytest.raises(ValidationError):
        CoefficientVector((math.nan,))


def test_survival_curve_theta():
    s = SurvivalCurve((1.0, 0.6, 0.3))
    np.testing.assert_allclose(s.theta, [0.4, 0.3, 0.3])
    assert s.problems() == []
    assert SurvivalCurve((1.0, 0.5, 0.5)).problems()
