import json

import numpy as np
import pytest

from errsurv.errors import ConfigError
from errsurv.simulation import (
    Normal,
    NormalMixture,
    ScenarioConfig,
    StudentT,
    example_dataset,
    generate_cohort,
    get_preset,
    load_scenario,
    preset_names,
    run_scenario,
    summarize,
)
from errsurv.simulation.run import Estimate


def censoring_oracle(cfg):
    """P(no event by the last visit), integrating over the linear predictor."""
    b = np.array(cfg.beta_true)
    sd = np.sqrt(b @ np.array(cfg.covariate_covariance) @ b)
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    lam, tau = cfg.baseline_hazards[0], cfg.visit_times[-1]
    return float(weights @ np.exp(-lam * tau * np.exp(sd * nodes)) / weights.sum())


# the preset hazard for beta_x1 = log 3 at the heavier event rate lands at 0.577
@pytest.mark.parametrize("name,target,tol", [("table1_row1", 0.90, 0.02), ("table1_row2", 0.55, 0.02),
                                             ("table2_row1", 0.90, 0.02), ("table2_row2", 0.55, 0.03)])
def test_preset_censoring_rates(name, target, tol):
    cfg = get_preset(name)
    exact = censoring_oracle(cfg)
    assert exact == pytest.approx(target, abs=tol)
    _, truth = generate_cohort(cfg.with_overrides(n=40000), 0)
    assert truth.censoring_rate == pytest.approx(exact, abs=0.01)


def test_whi_mimic_censoring_among_event_free_at_baseline():
    cfg = get_preset("whi").with_overrides(n=20000)
    _, truth = generate_cohort(cfg, 0)
    cr = np.mean(~truth.true_status[~truth.prevalent, -1].astype(bool))
    assert cr == pytest.approx(censoring_oracle(cfg), abs=0.01)
    assert cr == pytest.approx(0.95, abs=0.01)


@pytest.mark.parametrize("var,target", [(0.59, 0.60), (1.72, 0.30)])
def test_theoretical_attenuation(var, target):
    cfg = ScenarioConfig(error_dist=Normal(var))
    # 0.8 * v / (0.64 v + var) with v = 1 - 2 * 0.09 / 1.3
    v = 1 - 0.18 / 1.3
    assert cfg.theoretical_attenuation() == pytest.approx(0.8 * v / (0.64 * v + var), rel=1e-12)
    assert cfg.theoretical_attenuation() == pytest.approx(target, abs=0.005)


def test_attenuation_matches_large_sample_regression():
    cfg = ScenarioConfig(n=60000, n_c=60000, epsilon_var=0.0)
    cohort, truth = generate_cohort(cfg, 3)
    reg = np.column_stack([np.ones(cohort.n), cohort.x_star, cohort.z])
    coef = np.linalg.lstsq(reg, truth.x[:, 0], rcond=None)[0]
    assert coef[1] == pytest.approx(cfg.theoretical_attenuation(), abs=0.01)


def test_error_distribution_variances():
    rng = np.random.default_rng(0)
    for dist, var in ((Normal(0.59), 0.59), (StudentT(4.0), 2.0),
                      (NormalMixture(0.4, 0.0, 1.0, 2.0, 1.5), 0.4 + 0.6 * 2.25 + 0.24 * 4)):
        assert dist.variance == pytest.approx(var)
        assert np.var(dist.sample(rng, 400000)) == pytest.approx(var, rel=0.03)


def test_attenuation_under_non_normal_errors():
    assert get_preset("table3_row1").theoretical_attenuation() == pytest.approx(0.270, abs=0.005)
    assert get_preset("table3_row3").theoretical_attenuation() == pytest.approx(0.211, abs=0.005)


def test_generation_is_reproducible():
    cfg = ScenarioConfig(n=200, n_c=50)
    a, _ = generate_cohort(cfg, 5)
    b, _ = generate_cohort(cfg, 5)
    c, _ = generate_cohort(cfg, 6)
    assert [s.y for s in a.subjects] == [s.y for s in b.subjects]
    np.testing.assert_array_equal(a.design, b.design)
    assert not np.array_equal(a.design, c.design)


def test_perfect_test_reproduces_true_status():
    cfg = ScenarioConfig(n=500, se=1.0, sp=1.0)
    cohort, truth = generate_cohort(cfg, 0)
    observed, y = cohort.visit_arrays
    np.testing.assert_array_equal(y[observed], truth.true_status[observed])


def test_empirical_sensitivity_and_specificity():
    cfg = ScenarioConfig(n=20000, se=0.8, sp=0.9, baseline_hazards=(0.1,))
    _, truth = generate_cohort(cfg, 1)
    pos = truth.true_status == 1
    assert truth.y_full[pos].mean() == pytest.approx(0.8, abs=0.01)
    assert 1 - truth.y_full[~pos].mean() == pytest.approx(0.9, abs=0.01)


def test_missed_visits_and_subset_size():
    cfg = ScenarioConfig(n=5000, n_c=300, p_miss=0.4)
    cohort, truth = generate_cohort(cfg, 0)
    assert truth.observed.mean() == pytest.approx(0.6, abs=0.02)
    assert all(s.n_visits > 0 for s in cohort.subjects)
    assert cohort.n == len(truth.kept) <= 5000
    assert cohort.subset_mask.sum() <= 300


def test_stop_mode_truncates_after_first_positive():
    cohort, _ = generate_cohort(ScenarioConfig(n=300, n_c=50, stop_after_first_positive=True), 0)
    assert all(1 not in s.y[:-1] for s in cohort.subjects)


def test_prevalent_subjects_excluded_from_truth_fit():
    cfg = ScenarioConfig(n=1000, eta=0.9)
    cohort, truth = generate_cohort(cfg, 0)
    assert truth.prevalent.mean() == pytest.approx(0.1, abs=0.03)
    assert truth.truth_cohort(cohort.grid).n == int((~truth.prevalent).sum())


def test_summarize_metrics_by_hand():
    est = [Estimate(np.array([0.5]), np.array([0.1])), Estimate(np.array([0.3]), np.array([0.1]))]
    m = summarize("x", est, [0.4], n_failed=1, params=("b",))
    assert m.mean_estimate[0] == pytest.approx(0.4)
    assert m.pct_bias[0] == pytest.approx(0.0, abs=1e-12)
    assert m.ese[0] == pytest.approx(np.std([0.5, 0.3], ddof=1))
    assert m.cp[0] == 1.0 and m.rejection_rate[0] == 1.0
    assert m.n_failed == 1
    single = summarize("x", est[:1], [0.4], params=("b",))
    assert single.ese is None and single.rows()[0]["ESE"] is None


def test_single_replication_run_and_output_files(tmp_path):
    cfg = get_preset("table1_row1").with_overrides(replications=1, n=600, n_c=200)
    res = run_scenario(cfg, ("naive", "proposed"))
    assert res.metrics["proposed"].ese is None
    paths = res.write(tmp_path)
    assert {p.name for p in paths} == {"metrics_naive.csv", "metrics_proposed.csv", "manifest.json"}
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["rng_seed"] == cfg.rng_seed and man["config_hash"] == cfg.config_hash()
    header = (tmp_path / "metrics_proposed.csv").read_text().splitlines()[0]
    assert header.startswith("parameter,true,mean,%Bias,ASE,ESE,CP")


def test_failures_are_counted_not_averaged():
    # no calibration subset: every corrected estimator fails, naive still runs
    cfg = ScenarioConfig(n=300, n_c=0, replications=2)
    res = run_scenario(cfg, ("naive", "proposed"))
    assert res.metrics["proposed"].n_failed == 2 and res.metrics["proposed"].n_success == 0
    assert res.metrics["naive"].n_success == 2


def test_threads_do_not_change_results():
    cfg = ScenarioConfig(n=300, n_c=100, replications=3)
    a = run_scenario(cfg, ("naive",))
    b = run_scenario(cfg, ("naive",), threads=3)
    np.testing.assert_array_equal(a.metrics["naive"].mean_estimate, b.metrics["naive"].mean_estimate)


def test_unknown_estimator_rejected():
    with pytest.raises(ValueError):
        run_scenario(ScenarioConfig(replications=1), ("bogus",))


@pytest.mark.parametrize("kw", [dict(se=0.4, sp=0.5), dict(baseline_hazards=(-1.0,)),
                                dict(visit_times=(2.0, 1.0)), dict(replications=0),
                                dict(n_c=5000), dict(eta=1.5),
                                dict(covariate_covariance=((1, 2, 0), (2, 1, 0), (0, 0, 1)))])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kw)


def test_config_roundtrip_and_hash():
    cfg = get_preset("table3_row3")
    back = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg and back.config_hash() == cfg.config_hash()
    assert cfg.with_overrides(n=900).config_hash() != cfg.config_hash()
    with pytest.raises(ConfigError):
        cfg.with_overrides(bogus=1)


def test_load_scenario(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"preset": "table1_row2", "replications": 7}))
    cfg = load_scenario(p)
    assert cfg.replications == 7 and cfg.visit_times == get_preset("table1_row2").visit_times
    p.write_text('{"n": 10,\n  "se": }')
    with pytest.raises(ConfigError, match="line 2"):
        load_scenario(p)


def test_presets():
    names = preset_names()
    for table, rows in (("table1", 8), ("table2", 8), ("table3", 8), ("table4", 8), ("table5", 8)):
        assert sum(n.startswith(table + "_") for n in names) == rows
    with pytest.raises(ConfigError, match="table1_row1"):
        get_preset("table9_row1")
    t5 = get_preset("table5_row4")
    assert t5.beta_true[0] == 0.0 and t5.replications == 1000
    assert (t5.se, t5.sp, t5.visit_times) == (0.8, 0.9, (2.0, 5.0, 7.0, 8.0))
    assert get_preset("table4_row1").n_strata == 4


def test_example_dataset_shape():
    c = example_dataset(n=500, n_c=50)
    assert c.n == 500 and c.subset_mask.sum() == 50
    assert c.x_names == ("x_1",) and len(c.z_names) == 4
    assert max(len(s.t) for s in c.subjects) <= 4
