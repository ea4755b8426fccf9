import logging
from pathlib import Path
from typing import List

import pandas as pd
import pytest
import yaml

from main import main
from models.value_curve import ValueFunctionSeries
from services import mlp
from services.metrics import read_reports
from utils.logger import Logger

ALIGNED = ["--power", "2.4", "--eta", "0.8", "--grid-segments", "100"]


def _run(args: List[str]) -> int:
    return main([str(arg) for arg in args])


@pytest.fixture
def prices(tmp_path) -> Path:
    path = tmp_path / "rtp.csv"
    assert _run(["synth", "--out", path, "--days", 2, "--seed", 5]) == 0
    return path


def test_synth_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert _run(["synth", "--out", tmp_path / f"{name}.csv", "--days", 1, "--seed", 1]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.dap.csv").read_bytes() == (tmp_path / "b.dap.csv").read_bytes()
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 289


def test_gen_values_writes_one_curve_per_boundary(tmp_path, capsys):
    rtp = tmp_path / "rtp.csv"
    _run(["synth", "--out", rtp, "--days", 1])
    out = tmp_path / "values.npz"
    assert _run(["gen-values", "--rtp", rtp, "--out", out, "--grid-segments", 201, "--segments", 50]) == 0
    series = ValueFunctionSeries.load(out)
    assert len(series) == 289
    assert series.num_segments == 50
    assert "wrote 289 curves" in capsys.readouterr().out


def test_missing_input_exits_with_input_status(tmp_path):
    assert _run(["gen-values", "--rtp", tmp_path / "absent.csv", "--out", tmp_path / "values.npz"]) == 2


def test_invalid_asset_exits_with_config_status(prices, tmp_path):
    assert _run(["gen-values", "--rtp", prices, "--out", tmp_path / "v.npz", "--eta", "1.5"]) == 4


def test_usage_errors_exit_with_config_status(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["backtest", "--rtp", "x.csv"])
    assert info.value.code == 4
    with pytest.raises(SystemExit) as info:
        main(["backtest", "--model", "m.json", "--myopic", "--out", "r.csv"])
    assert info.value.code == 4


def test_hindsight_backtest_reaches_full_ratio(prices, tmp_path):
    values = tmp_path / "values.npz"
    report = tmp_path / "report.csv"
    assert _run(["gen-values", "--rtp", prices, "--out", values, *ALIGNED]) == 0
    assert _run(["backtest", "--rtp", prices, "--hindsight", values, "--out", report, *ALIGNED]) == 0
    row = read_reports(report).iloc[0]
    assert row["setting"] == "hindsight"
    assert row["profit_ratio"] == pytest.approx(100.0, rel=1e-6)
    log = pd.read_csv(tmp_path / "report.dispatch.csv")
    assert len(log) == 576
    assert log["profit"].sum() == pytest.approx(row["profit"])


def test_train_then_backtest(prices, tmp_path):
    model_path = tmp_path / "model.json"
    assert _run(["train", "--rtp", prices, "--out", model_path, "--setting", 1, "--seeds", 2,
                 "--grid-segments", 101]) == 0
    model = mlp.load(model_path)
    assert model.layer_dims == [36, 60, 60, 50]
    assert model.metadata["setting"] == "1"
    seeds = pd.read_csv(tmp_path / "model.seeds.csv")
    assert seeds["seed"].tolist() == [0, 1]
    assert seeds["selected"].sum() == 1
    assert len(pd.read_csv(tmp_path / "model.epochs.csv")) == 20

    report = tmp_path / "report.csv"
    assert _run(["backtest", "--rtp", prices, "--model", model_path, "--out", report,
                 "--grid-segments", 101]) == 0
    row = read_reports(report).iloc[0]
    assert row["setting"] == "1"
    assert row["train_zone"] == row["zone"]


def test_day_ahead_setting_needs_dap_file(prices, tmp_path):
    assert _run(["train", "--rtp", prices, "--out", tmp_path / "model.json", "--setting", 3, "--seeds", 1]) == 4


def test_myopic_and_compare(prices, tmp_path, capsys):
    reports = []
    for cost in (0, 10):
        report = tmp_path / f"myopic_{cost}.csv"
        assert _run(["backtest", "--rtp", prices, "--myopic", "--out", report, "--marginal-cost", cost,
                     "--grid-segments", 101]) == 0
        reports.append(report)
    merged = tmp_path / "merged.csv"
    capsys.readouterr()
    assert _run(["compare", "--reports", *reports, "--out", merged]) == 0
    assert len(pd.read_csv(merged)) == 2
    assert "profit_ratio" in capsys.readouterr().out


def test_flags_override_config_file(prices, tmp_path):
    config = tmp_path / "run.yaml"
    config.write_text(yaml.safe_dump({
        "storage": {"power_rating": 2.4, "eta_charge": 0.8, "eta_discharge": 0.8},
        "segments": 100,
        "paths": {"rtp": str(prices)},
    }), encoding="utf-8")
    saved = tmp_path / "effective.yaml"
    assert _run(["gen-values", "--config", config, "--marginal-cost", 0, "--out", tmp_path / "v.npz",
                 "--save-config", saved]) == 0
    effective = yaml.safe_load(saved.read_text(encoding="utf-8"))
    assert effective["storage"]["power_rating"] == 2.4
    assert effective["storage"]["marginal_cost"] == 0.0
    assert effective["segments"] == 100
    assert effective["paths"]["rtp"] == str(prices)


@pytest.mark.slow
def test_learned_policy_beats_myopic_out_of_sample(tmp_path):
    rtp = tmp_path / "rtp.csv"
    dap = tmp_path / "dap.csv"
    assert _run(["synth", "--out", rtp, "--dap-out", dap, "--days", 243, "--seed", 2019]) == 0
    model = tmp_path / "model.json"
    assert _run(["train", "--rtp", rtp, "--dap", dap, "--end", "2019-07-01", "--setting", 3, "--seeds", 3,
                 "--grid-segments", 201, "--out", model]) == 0

    test_window = ["--rtp", rtp, "--dap", dap, "--start", "2019-07-01", "--grid-segments", 201]
    learned = tmp_path / "learned.csv"
    myopic = tmp_path / "myopic.csv"
    assert _run(["backtest", *test_window, "--model", model, "--out", learned]) == 0
    assert _run(["backtest", *test_window, "--myopic", "--out", myopic]) == 0
    learned_ratio = read_reports(learned).iloc[0]["profit_ratio"]
    myopic_ratio = read_reports(myopic).iloc[0]["profit_ratio"]
    assert learned_ratio >= 50.0
    assert learned_ratio > myopic_ratio


def test_quiet_flag_silences_pipeline_info(tmp_path):
    try:
        assert _run(["synth", "-q", "--out", tmp_path / "rtp.csv", "--days", 1]) == 0
        pipeline_logger = Logger.get_instance("Pipeline")
        assert not pipeline_logger.isEnabledFor(logging.INFO)
        assert pipeline_logger.isEnabledFor(logging.WARNING)
    finally:
        Logger.set_global_level(None)


def test_hindsight_ratio_is_exact_with_default_asset(tmp_path):
    rtp = tmp_path / "rtp.csv"
    values = tmp_path / "values.npz"
    report = tmp_path / "report.csv"
    assert _run(["synth", "--out", rtp, "--days", 1, "--seed", 11]) == 0
    assert _run(["gen-values", "--rtp", rtp, "--out", values]) == 0
    assert _run(["backtest", "--rtp", rtp, "--hindsight", values, "--out", report]) == 0
    row = read_reports(report).iloc[0]
    assert row["profit"] > 0
    assert row["profit_ratio"] == pytest.approx(100.0, rel=1e-9)


def test_zone_defaults_to_price_file_stem(tmp_path, capsys):
    reports = []
    for zone in ("north", "west"):
        rtp = tmp_path / f"{zone}.csv"
        assert _run(["synth", "--out", rtp, "--days", 1, "--seed", 3]) == 0
        report = tmp_path / f"{zone}_report.csv"
        assert _run(["backtest", "--rtp", rtp, "--myopic", "--out", report, "--grid-segments", 101]) == 0
        assert read_reports(report).iloc[0]["zone"] == zone
        reports.append(report)
    capsys.readouterr()
    assert _run(["compare", "--reports", *reports]) == 0
    out = capsys.readouterr().out
    assert "north" in out and "west" in out


def test_train_with_test_window_logs_test_profit(prices, tmp_path):
    model_path = tmp_path / "model.json"
    assert _run(["train", "--rtp", prices, "--end", "2019-01-02", "--test-start", "2019-01-02",
                 "--out", model_path, "--setting", 1, "--seeds", 2, "--grid-segments", 101]) == 0
    seeds = pd.read_csv(tmp_path / "model.seeds.csv")
    assert seeds["test_profit"].notna().all()

    report = tmp_path / "report.csv"
    assert _run(["backtest", "--rtp", prices, "--start", "2019-01-02", "--model", model_path, "--out", report,
                 "--grid-segments", 101]) == 0
    selected = seeds.loc[seeds["selected"]].iloc[0]
    assert read_reports(report).iloc[0]["profit"] == pytest.approx(selected["test_profit"])
