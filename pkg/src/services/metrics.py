"""
Evaluation metrics of a backtest and multi-run comparison tables.

Annual discharge prorates the horizon to a 365-day year: sum(p) * 8760 / (T * period_hours).
"""
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from utils.exceptions import FileOperationError, PriceDataError
from utils.logger import Logger

logger = Logger.get_instance("Metrics")

HOURS_PER_YEAR = 8760.0
REPORT_KEY = ["zone", "train_zone", "setting", "duration_hours", "marginal_cost"]
COMPARE_VALUES = ["profit_ratio", "profit", "annual_discharge_mwh", "revenue_per_mwh"]


@dataclass(frozen=True)
class MetricsReport:
    """One backtest summarised; ratio and revenue per MWh are None when undefined."""

    zone: str
    train_zone: str
    setting: str
    duration_hours: float
    marginal_cost: float
    periods: int
    period_hours: float
    profit: float
    optimal_profit: Optional[float]
    profit_ratio: Optional[float]
    discharged_mwh: float
    annual_discharge_mwh: float
    revenue_per_mwh: Optional[float]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(self)], columns=report_columns())


def report_columns() -> List[str]:
    return [f.name for f in fields(MetricsReport)]


def compute_metrics(log: pd.DataFrame, optimal_profit: Optional[float], period_hours: float,
                    zone: str = "", train_zone: str = "", setting: str = "",
                    duration_hours: float = float("nan"), marginal_cost: float = float("nan")) -> MetricsReport:
    """
    Metrics of a dispatch log.

    ``optimal_profit`` must come from the same prices, asset and initial SoC. The
    ratio is 100 * profit / optimal_profit when optimal_profit > 0 and absent
    otherwise, with a warning if the policy still made money.
    """
    periods = len(log)
    profit = float(log["profit"].sum())
    discharged = float(log["discharge"].sum())
    annual = discharged * HOURS_PER_YEAR / (periods * period_hours) if periods else 0.0

    ratio: Optional[float] = None
    if optimal_profit is not None:
        if optimal_profit > 0:
            ratio = 100.0 * profit / optimal_profit
        elif profit > 0:
            logger.warning("Optimal profit is not positive; profit ratio left undefined", extra={"fields": {
                "profit": profit, "optimal_profit": optimal_profit}})
    revenue = profit / discharged if discharged > 0 else None

    return MetricsReport(
        zone=zone, train_zone=train_zone or zone, setting=setting,
        duration_hours=float(duration_hours), marginal_cost=float(marginal_cost),
        periods=periods, period_hours=float(period_hours),
        profit=profit, optimal_profit=None if optimal_profit is None else float(optimal_profit),
        profit_ratio=ratio, discharged_mwh=discharged, annual_discharge_mwh=annual,
        revenue_per_mwh=revenue,
    )


def write_report(report: MetricsReport, path: Union[str, Path]) -> None:
    report.to_frame().to_csv(path, index=False, float_format="%.17g")


def read_reports(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise FileOperationError(f"report not found: {path}", data={"path": str(path)})
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=True,
                        dtype={"zone": str, "train_zone": str, "setting": str})
    missing = [column for column in report_columns() if column not in frame.columns]
    if missing:
        raise PriceDataError(f"report {path} lacks columns {missing}", data={"path": str(path)})
    return frame[report_columns()].fillna({"zone": "", "train_zone": "", "setting": ""})


def _fmt(value: object, digits: int) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.{digits}f}"


def render(reports: pd.DataFrame) -> str:
    """Human-readable table of report rows."""
    table = pd.DataFrame({
        "zone": reports["zone"],
        "train": reports["train_zone"],
        "setting": reports["setting"],
        "hours": reports["duration_hours"].map(lambda v: _fmt(v, 1)),
        "MC $/MWh": reports["marginal_cost"].map(lambda v: _fmt(v, 1)),
        "profit k$": (reports["profit"] / 1000.0).map(lambda v: _fmt(v, 2)),
        "ratio %": reports["profit_ratio"].map(lambda v: _fmt(v, 2)),
        "disch. GWh/yr": (reports["annual_discharge_mwh"] / 1000.0).map(lambda v: _fmt(v, 2)),
        "$/MWh": reports["revenue_per_mwh"].map(lambda v: _fmt(v, 2)),
    })
    return table.to_string(index=False)


def compare_reports(frames: Iterable[pd.DataFrame]) -> pd.DataFrame:
    """
    Merge report rows into one table keyed by zone, model origin, setting, duration
    and marginal cost. A later row with an existing key replaces the earlier one.
    """
    merged = pd.concat(list(frames), ignore_index=True)
    if merged.empty:
        return merged
    duplicated = merged.duplicated(REPORT_KEY, keep="last")
    if duplicated.any():
        logger.warning("Duplicate report labels; keeping the later report", extra={"fields": {
            "labels": merged.loc[duplicated, REPORT_KEY].astype(str).agg("/".join, axis=1).tolist()}})
        merged = merged[~duplicated]
    horizons = merged["periods"].astype(float) * merged["period_hours"].astype(float)
    if horizons.nunique() > 1:
        logger.warning("Reports cover different horizons", extra={"fields": {
            "hours": sorted(set(np.round(horizons, 6).tolist()))}})
    return merged.sort_values(["zone", "duration_hours", "marginal_cost"], kind="stable").reset_index(drop=True)


def pivot_reports(merged: pd.DataFrame) -> pd.DataFrame:
    """Zone x duration rows with one column group per marginal cost."""
    values = merged.set_index(REPORT_KEY)[COMPARE_VALUES].astype(float)
    table = values.unstack("marginal_cost")
    return table.reorder_levels([1, 0], axis=1).sort_index(axis=1, level=0, sort_remaining=False)
