import json
import math

import numpy as np
import pandas as pd
import pytest

from errsurv.calibration import CalibrationModel
from errsurv.cli import main


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ex.csv"
    assert main(["example-data", "--out", str(path), "--n", "1500"]) == 0
    return path


def test_example_data_columns(data):
    df = pd.read_csv(data)
    assert list(df.columns) == ["ID", "subset_ind", "x_1_star", "x_1_starstar",
                                "z_1", "z_2", "z_3", "z_4", "y", "t"]
    assert df["ID"].nunique() == 1500
    assert df.loc[df.subset_ind == 1, "x_1_starstar"].notna().all()


def test_summary_reports_cohort(data, capsys):
    assert main(["summary", "--input", str(data)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["subjects"] == 1500 and out["J"] == 4


def test_fit_naive_writes_outputs(data, tmp_path):
    out = tmp_path / "naive"
    assert main(["fit", "--input", str(data), "--method", "naive", "--out", str(out)]) == 0
    coef = pd.read_csv(out / "coefficients.csv")
    assert list(coef.parameter) == ["x_1", "z_1", "z_2", "z_3", "z_4"]
    row = coef.iloc[0]
    assert row.hr == pytest.approx(math.exp(row.beta))
    assert row.ci_lower == pytest.approx(math.exp(row.beta - 1.959963984540054 * row.se))
    assert (out / "survival.csv").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["methods"]["naive"]["converged"]


def test_increment_scales_hazard_ratio(data, tmp_path):
    out = tmp_path / "inc"
    assert main(["fit", "--input", str(data), "--method", "naive", "--increment", "0.5",
                 "--out", str(out)]) == 0
    row = pd.read_csv(out / "coefficients.csv").iloc[0]
    assert row.hr == pytest.approx(math.exp(0.5 * row.beta))


def test_pipeline_composes_calibration_and_outcome_fit(data, tmp_path):
    cal = tmp_path / "cal.json"
    assert main(["calibrate", "--input", str(data), "--out", str(cal)]) == 0
    out = tmp_path / "both"
    assert main(["fit", "--input", str(data), "--method", "outcome_only,proposed",
                 "--se", "0.6", "--sp", "0.98", "--calibration", str(cal),
                 "--out", str(out)]) == 0
    coef = pd.read_csv(out / "coefficients.csv")
    outcome = coef[coef.method == "outcome_only"].beta.to_numpy()
    proposed = coef[coef.method == "proposed"].beta.to_numpy()
    a = CalibrationModel.load(cal).correction().a
    np.testing.assert_allclose(proposed, outcome @ a, atol=1e-10)


def test_proposed_needs_error_rates(data, tmp_path, capsys):
    code = main(["fit", "--input", str(data), "--method", "proposed", "--out", str(tmp_path)])
    assert code == 2
    assert "--se" in capsys.readouterr().err


def test_missing_calibration_column_names_it(data, tmp_path, capsys):
    df = pd.read_csv(data).drop(columns=["x_1_starstar", "subset_ind"])
    path = tmp_path / "nocal.csv"
    df.to_csv(path, index=False)
    code = main(["fit", "--input", str(path), "--method", "proposed", "--se", "0.6",
                 "--sp", "0.98", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "x_1_starstar" in capsys.readouterr().err


def test_unknown_method_and_preset(data, tmp_path):
    assert main(["fit", "--input", str(data), "--method", "bogus", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--preset", "nope", "--out", str(tmp_path)]) == 2


def test_zero_replications_rejected(tmp_path):
    assert main(["simulate", "--preset", "table1_row1", "-R", "0", "--out", str(tmp_path)]) == 2


def test_missing_input_is_io_error(tmp_path):
    assert main(["summary", "--input", str(tmp_path / "absent.csv")]) == 5


def test_list_presets(capsys):
    assert main(["simulate", "--list-presets"]) == 0
    names = capsys.readouterr().out.split()
    assert "table1_row1" in names and "whi" in names


def test_simulate_small_run(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--preset", "table1_row1", "-R", "2", "--n", "500", "--n-c", "150",
                 "--estimators", "naive,proposed", "--quiet", "--out", str(out)])
    assert code == 0
    assert (out / "metrics_proposed.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["replications"] == 2 and man["config"]["n"] == 500
