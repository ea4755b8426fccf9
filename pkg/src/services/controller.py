"""
Single-period arbitrage against a marginal value curve, and the backtest loop.

Each period the storage observes the real-time price, takes the curve valuing its
end-of-period SoC, and solves the one-period problem through its first-order
conditions: charge while the marginal value of the next stored MWh beats
price/eta_charge, discharge while it falls short of (price - c) * eta_discharge.
"""
import math
import time
from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import numpy as np
import pandas as pd

from models.prices import PriceSeries
from models.storage import Dispatch, StorageParams
from models.value_curve import MarginalValueCurve, ValueFunctionSeries
from services.features import build_feature_matrix
from services.mlp import MlpModel, forward
from utils.exceptions import DimensionMismatchError, PreconditionError
from utils.logger import Logger

logger = Logger.get_instance("Controller")

# Rows per batched forward pass
PREDICT_CHUNK = 8192

# Grid-snapping slack, in units of segment width
_INDEX_EPS = 1e-9
_MOVE_EPS = 1e-12

DISPATCH_LOG_COLUMNS = ["timestamp", "price", "charge", "discharge", "soc", "profit"]


def dispatch_on_segments(values: np.ndarray, capacity: float, price: float,
                         params: StorageParams, e_prev: float) -> Tuple[float, float, float]:
    """
    Solve one period against a piecewise-constant curve; returns (charge, discharge, soc_end).

    The charge walks segments upward from e_prev while their value exceeds the charge
    threshold and stops at the first failing segment boundary, the power limit or E.
    Discharge mirrors it downward. A positive charge excludes any discharge.
    """
    num_segments = values.shape[0]
    width = capacity / num_segments
    charge_threshold, discharge_threshold = params.thresholds(price)

    e_top = min(capacity, e_prev + params.charge_shift)
    if e_top > e_prev + _MOVE_EPS:
        first = min(max(int(math.floor(e_prev / width + _INDEX_EPS)), 0), num_segments - 1)
        last = min(max(int(math.ceil(e_top / width - _INDEX_EPS)), first + 1), num_segments)
        failing = values[first:last] <= charge_threshold
        if not failing[0]:
            e_end = e_top
            if failing.any():
                e_end = min(e_top, (first + int(np.argmax(failing))) * width)
            if e_end > e_prev + _MOVE_EPS:
                charge = min((e_end - e_prev) / params.eta_charge, params.max_energy_per_period)
                return charge, 0.0, e_end

    if price >= 0:
        e_bottom = max(0.0, e_prev - params.discharge_shift)
        if e_bottom < e_prev - _MOVE_EPS:
            first = min(max(int(math.ceil(e_prev / width - _INDEX_EPS)) - 1, 0), num_segments - 1)
            last = min(max(int(math.floor(e_bottom / width + _INDEX_EPS)), 0), first)
            failing = values[last:first + 1][::-1] >= discharge_threshold
            if not failing[0]:
                e_end = e_bottom
                if failing.any():
                    e_end = max(e_bottom, (first + 1 - int(np.argmax(failing))) * width)
                if e_end < e_prev - _MOVE_EPS:
                    discharge = min((e_prev - e_end) * params.eta_discharge, params.max_energy_per_period)
                    return 0.0, discharge, e_end

    return 0.0, 0.0, e_prev


def single_period_dispatch(curve: MarginalValueCurve, price: float, params: StorageParams,
                           e_prev: float) -> Dispatch:
    """Optimal one-period dispatch valuing the end SoC with ``curve``."""
    curve.check_soc(e_prev)
    charge, discharge, soc = dispatch_on_segments(curve.segment_values, curve.capacity, price, params, e_prev)
    return Dispatch(charge, discharge, soc)


def run_dispatch(rtp: np.ndarray, curves: np.ndarray, available: np.ndarray, capacity: float,
                 params: StorageParams, e_0: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sequential dispatch over arrays; row k of ``curves`` values the SoC at the end of period k."""
    periods = rtp.shape[0]
    charge = np.zeros(periods)
    discharge = np.zeros(periods)
    soc = np.empty(periods)
    e = float(e_0)
    for k in range(periods):
        if available[k]:
            charge[k], discharge[k], e = dispatch_on_segments(curves[k], capacity, float(rtp[k]), params, e)
        soc[k] = e
    return charge, discharge, soc


class CurveSource(Protocol):
    """Supplies one marginal value curve per period of a price series."""

    def curves(self, prices: PriceSeries) -> Tuple[np.ndarray, np.ndarray]:
        """Return (curves of shape (T, K), boolean mask of periods that have a curve)."""
        ...


@dataclass(frozen=True, eq=False)
class HindsightCurves:
    """Curves from the backward recursion on the same prices: period t uses v_t."""

    series: ValueFunctionSeries

    def curves(self, prices: PriceSeries) -> Tuple[np.ndarray, np.ndarray]:
        if self.series.horizon != len(prices):
            raise PreconditionError(
                f"value series covers {self.series.horizon} periods but prices have {len(prices)}",
                data={"series_horizon": self.series.horizon, "periods": len(prices)},
            )
        return self.series.values[1:], np.ones(len(prices), dtype=bool)


@dataclass(frozen=True, eq=False)
class ModelCurves:
    """
    Curves predicted by a trained network from lagged prices.

    Features never depend on SoC, so every period is predicted in one batched pass
    before dispatch. The first ``n_rtp_lags`` periods lack history and idle.
    """

    model: MlpModel

    def curves(self, prices: PriceSeries) -> Tuple[np.ndarray, np.ndarray]:
        spec = self.model.feature_spec
        if not math.isclose(spec.period_hours, prices.period_hours, rel_tol=1e-9):
            raise DimensionMismatchError(
                f"model expects {spec.period_hours} h periods but prices have {prices.period_hours} h",
                data={"model_period_hours": spec.period_hours, "price_period_hours": prices.period_hours},
            )
        periods = len(prices)
        warmup = min(spec.n_rtp_lags, periods)
        curves = np.zeros((periods, self.model.output_dim))
        available = np.zeros(periods, dtype=bool)
        for start in range(warmup, periods, PREDICT_CHUNK):
            stop = min(start + PREDICT_CHUNK, periods)
            curves[start:stop] = forward(self.model, build_feature_matrix(prices, spec, start, stop))
        available[warmup:] = True
        return curves, available


@dataclass(frozen=True)
class ConstantCurve:
    """The same flat curve every period; value 0 gives the myopic baseline."""

    value: float = 0.0
    num_segments: int = 50

    def curves(self, prices: PriceSeries) -> Tuple[np.ndarray, np.ndarray]:
        row = np.full(self.num_segments, float(self.value))
        return np.broadcast_to(row, (len(prices), self.num_segments)), np.ones(len(prices), dtype=bool)


@dataclass
class ControlState:
    """Running state of a backtest and its per-period dispatch log."""

    soc: float
    profit: float = 0.0
    discharged: float = 0.0
    log: Optional[pd.DataFrame] = None

    @property
    def periods(self) -> int:
        return 0 if self.log is None else len(self.log)


def dispatch_log(prices: PriceSeries, charge: np.ndarray, discharge: np.ndarray, soc: np.ndarray,
                 marginal_cost: float) -> pd.DataFrame:
    profit = prices.rtp * (discharge - charge) - marginal_cost * discharge
    return pd.DataFrame({
        "timestamp": prices.timestamps,
        "price": prices.rtp,
        "charge": charge,
        "discharge": discharge,
        "soc": soc,
        "profit": profit,
    }, columns=DISPATCH_LOG_COLUMNS)


def run_backtest(prices: PriceSeries, params: StorageParams, source: CurveSource,
                 e_0: float = 0.0) -> ControlState:
    """Dispatch every period in order; periods without a curve idle."""
    if not 0.0 <= e_0 <= params.energy_capacity:
        raise PreconditionError(f"initial SoC {e_0} outside [0, {params.energy_capacity}]")
    started = time.perf_counter()
    curves, available = source.curves(prices)
    warmup = int(np.argmax(available)) if available.any() else len(prices)
    if warmup:
        logger.info("Idling through warm-up periods without a curve", extra={"fields": {"periods": warmup}})
    charge, discharge, soc = run_dispatch(prices.rtp, curves, available, params.energy_capacity, params, e_0)
    log = dispatch_log(prices, charge, discharge, soc, params.marginal_cost)
    state = ControlState(
        soc=float(soc[-1]) if len(soc) else float(e_0),
        profit=float(log["profit"].sum()),
        discharged=float(discharge.sum()),
        log=log,
    )
    logger.info("Backtest finished", extra={"fields": {
        "source": type(source).__name__, "periods": len(prices), "profit": state.profit,
        "discharged_mwh": state.discharged, "seconds": round(time.perf_counter() - started, 3)}})
    return state


def write_dispatch_log(log: pd.DataFrame, path: str) -> None:
    log.to_csv(path, index=False, date_format="%Y-%m-%d %H:%M:%S", float_format="%.17g")


def read_dispatch_log(path: str) -> pd.DataFrame:
    return pd.read_csv(path, parse_dates=["timestamp"], float_precision="round_trip")
