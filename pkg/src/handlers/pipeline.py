import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import pandas as pd

from handlers.trainer import ModelTrainer, SelectionResult, build_dataset, write_training_logs
from models.prices import PriceSeries
from models.value_curve import ValueFunctionSeries
from services import mlp
from services.controller import (ConstantCurve, ControlState, CurveSource, HindsightCurves, ModelCurves,
                                 run_backtest, write_dispatch_log)
from services.dp_engine import generate_series, perfect_foresight_profit
from services.metrics import MetricsReport, compare_reports, compute_metrics, pivot_reports, read_reports, write_report
from services.price_loader import PriceSchema, load_prices, synth_prices, write_prices
from utils.exceptions import ConfigurationError, DimensionMismatchError
from utils.logger import Logger
from utils.run_config import RunConfig


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}{suffix}")


@dataclass(frozen=True, eq=False)
class BacktestOutcome:
    state: ControlState
    report: MetricsReport
    report_path: Path
    dispatch_log_path: Path


class Pipeline:
    """
    Workflows behind the command-line subcommands.

    Each method validates the paths it touches before loading anything, then runs
    the underlying services with the asset, schema and training settings of the
    run configuration.
    """

    def __init__(self, config: RunConfig, logger: Optional[logging.Logger] = None):
        """
        Args:
            config (RunConfig): Effective configuration after file and flag merging.
            logger (Optional[logging.Logger]): Defaults to the shared "Pipeline" logger.
        """
        self.config = config
        self.logger = logger or Logger.get_instance("Pipeline")

    def _load_prices(self, need_dap: bool = False) -> PriceSeries:
        config = self.config
        if need_dap and config.path("dap") is None:
            raise ConfigurationError("day-ahead features need a day-ahead price file (--dap)")
        return self._read(config.require("rtp"), config.path("dap"), config.schema)

    def _read(self, rtp: Path, dap: Optional[Path], schema: PriceSchema) -> PriceSeries:
        # Unlabelled files take their stem as zone
        return load_prices(rtp, dap, schema, self.config.zone or schema.zone or rtp.stem)

    def _load_test_prices(self, need_dap: bool) -> Optional[PriceSeries]:
        """Prices of the per-seed test backtest, or None without a test window."""
        config = self.config
        if not config.has_test_window:
            return None
        rtp = config.path("test_rtp") or config.require("rtp")
        dap = config.path("test_dap") or config.path("dap")
        if need_dap and dap is None:
            raise ConfigurationError("day-ahead features need a day-ahead price file for the test window")
        return self._read(rtp, dap, replace(config.schema, start=config.test_start, end=config.test_end))

    def gen_values(self) -> ValueFunctionSeries:
        """Hindsight value functions of the real-time prices, written to ``out``."""
        config = self.config
        config.require("rtp")
        out = config.require("out")
        config.validate_paths(inputs=["rtp", "dap"], outputs=["out"])
        prices = self._load_prices()
        series = generate_series(prices, config.storage, config.segments, config.store_segments)
        series.save(out)
        self.logger.info("Wrote value functions", extra={"fields": {
            "path": str(out), "curves": len(series), "segments": series.num_segments}})
        return series

    def _labels(self, prices: PriceSeries) -> ValueFunctionSeries:
        config = self.config
        values_path = config.path("values")
        if values_path is None:
            self.logger.info("No value file given; generating labels from the training prices")
            return generate_series(prices, config.storage, config.segments, config.train.label_segments)
        series = ValueFunctionSeries.load(values_path)
        if series.params != config.storage:
            self.logger.warning("Value file was generated for a different asset", extra={"fields": {
                "file_params": series.params.to_dict(), "run_params": config.storage.to_dict()}})
        return series

    def train(self) -> SelectionResult:
        """
        Build the dataset, train every seed and write the selected model with its logs.

        With a test window every seed is also backtested on the test prices, which
        shows whether training profit ranks seeds the way test profit does.
        """
        config = self.config
        config.require("rtp")
        out = config.require("out")
        config.validate_paths(inputs=["rtp", "dap", "values", "test_rtp", "test_dap"],
                             outputs=["out", "seed_log", "epoch_log"])
        prices = self._load_prices(need_dap=config.train.n_dap > 0)
        test_prices = self._load_test_prices(need_dap=config.train.n_dap > 0)
        dataset = build_dataset(prices, self._labels(prices), config.train.feature_spec(prices.period_hours),
                                config.train.label_segments)
        self.logger.info("Built training set", extra={"fields": {
            "samples": len(dataset), "features": dataset.feature_spec.length, "setting": config.train.setting_label}})
        result = ModelTrainer(config.train, config.storage).train_select(dataset, prices, test_prices)
        mlp.save(result.model, out)
        write_training_logs(result, config.path("seed_log") or _sibling(out, ".seeds.csv"),
                            config.path("epoch_log") or _sibling(out, ".epochs.csv"))
        return result

    def _curve_source(self, prices: PriceSeries, myopic: bool) -> Tuple[CurveSource, str, str]:
        """Return (source, setting label, training zone)."""
        config = self.config
        model_path = config.path("model")
        zone = prices.zone
        if myopic:
            return ConstantCurve(0.0, config.train.label_segments), "myopic", zone
        if model_path is not None:
            model = mlp.load(model_path)
            if model.feature_spec.n_dap and config.path("dap") is None:
                raise DimensionMismatchError("model uses day-ahead features but no --dap file was given")
            return ModelCurves(model), model.metadata.get("setting", ""), model.metadata.get("zone", "")
        hindsight = config.path("hindsight")
        if hindsight is None:
            raise ConfigurationError("backtest needs --model, --hindsight or --myopic")
        return HindsightCurves(ValueFunctionSeries.load(hindsight, config.storage)), "hindsight", zone

    def _optimal_profit(self, prices: PriceSeries) -> float:
        """Realised hindsight profit at the run's grid, the denominator of every profit ratio."""
        config = self.config
        return perfect_foresight_profit(prices, config.storage, config.e_0, config.segments)

    def backtest(self, myopic: bool = False) -> BacktestOutcome:
        """Dispatch against model, hindsight or flat curves and report against perfect foresight."""
        config = self.config
        config.require("rtp")
        out = config.require("out")
        config.validate_paths(inputs=["rtp", "dap", "model", "hindsight"], outputs=["out", "dispatch_log"])
        prices = self._load_prices()
        source, setting, train_zone = self._curve_source(prices, myopic)
        state = run_backtest(prices, config.storage, source, config.e_0)
        optimal = self._optimal_profit(prices)
        assert state.log is not None
        report = compute_metrics(state.log, optimal, prices.period_hours, zone=prices.zone,
                                 train_zone=train_zone or prices.zone, setting=setting,
                                 duration_hours=config.storage.duration_hours,
                                 marginal_cost=config.storage.marginal_cost)
        write_report(report, out)
        dispatch_path = config.path("dispatch_log") or _sibling(out, ".dispatch.csv")
        write_dispatch_log(state.log, str(dispatch_path))
        ratio = "n/a" if report.profit_ratio is None or math.isnan(report.profit_ratio) else report.profit_ratio
        self.logger.info("Backtest report written", extra={"fields": {
            "path": str(out), "profit": report.profit, "profit_ratio": ratio}})
        return BacktestOutcome(state, report, out, dispatch_path)

    def synth(self, days: int, start: str = "2019-01-01") -> PriceSeries:
        """Write a synthetic real-time file to ``out`` and its day-ahead file to ``dap_out``."""
        config = self.config
        out = config.require("out")
        dap_out = config.path("dap_out") or _sibling(out, ".dap.csv")
        config.validate_paths(outputs=["out", "dap_out"])
        series = synth_prices(config.seed, days, config.storage.period_hours, config.synth, start,
                              config.zone or "SYNTH")
        write_prices(series, out, dap_out)
        self.logger.info("Wrote synthetic prices", extra={"fields": {
            "rtp": str(out), "dap": str(dap_out), "periods": len(series), "seed": config.seed}})
        return series


def compare(report_paths: Sequence[Union[str, Path]], out: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """Merge report files in the given order; returns the zone x duration x cost table."""
    frames: List[pd.DataFrame] = [read_reports(path) for path in report_paths]
    merged = compare_reports(frames)
    if out is not None:
        merged.to_csv(out, index=False, float_format="%.17g")
    return pivot_reports(merged)
