"""Aligned real-time and day-ahead price streams."""
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from models.storage import PriceSignal
from utils.exceptions import PriceDataError

HOURS_PER_DAY = 24


def period_timedelta(period_hours: float) -> pd.Timedelta:
    """Period length rounded to whole nanoseconds so 1/12 h is exactly five minutes."""
    return pd.Timedelta(int(round(period_hours * 3600 * 1e9)), unit="ns")


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """
    Real-time prices on a uniform period grid plus the day-ahead prices of every
    operating day the grid touches.

    ``day_index[k]`` is the row of ``dap_days`` holding the 24 hourly day-ahead prices
    of period k's operating day; timestamps are naive market-local period starts.
    """

    timestamps: pd.DatetimeIndex
    rtp: np.ndarray
    dap_days: np.ndarray
    day_index: np.ndarray
    period_hours: float
    zone: str = ""

    def __post_init__(self) -> None:
        # Frozen private copies; the caller's arrays stay writeable
        rtp = np.array(self.rtp, dtype=np.float64)
        dap_days = np.array(self.dap_days, dtype=np.float64).reshape(-1, HOURS_PER_DAY)
        day_index = np.array(self.day_index, dtype=np.int64)
        if len(self.timestamps) != rtp.size or day_index.size != rtp.size:
            raise PriceDataError("timestamps, prices and day index must have equal length",
                                 data={"timestamps": len(self.timestamps), "rtp": rtp.size})
        if rtp.size > 1:
            steps = np.diff(self.timestamps.asi8)
            expected = period_timedelta(self.period_hours).value
            if np.any(steps != expected):
                raise PriceDataError("timestamps must be strictly increasing with uniform spacing",
                                     data={"first_bad": str(self.timestamps[int(np.argmax(steps != expected)) + 1])})
        if day_index.size and (day_index.min() < 0 or day_index.max() >= dap_days.shape[0]):
            raise PriceDataError("day index points outside the day-ahead table")
        if not (np.all(np.isfinite(rtp)) and np.all(np.isfinite(dap_days))):
            raise PriceDataError("price series contains missing or non-finite values")
        for array in (rtp, dap_days, day_index):
            array.setflags(write=False)
        object.__setattr__(self, "rtp", rtp)
        object.__setattr__(self, "dap_days", dap_days)
        object.__setattr__(self, "day_index", day_index)

    @classmethod
    def from_arrays(cls, rtp: Sequence[float], dap_days: Optional[np.ndarray] = None,
                    start: Union[str, pd.Timestamp] = "2019-01-01", period_hours: float = 1.0 / 12.0,
                    zone: str = "") -> "PriceSeries":
        """Build a series on a uniform grid from ``start``; missing day-ahead prices default to zero."""
        rtp = np.asarray(rtp, dtype=np.float64)
        freq = period_timedelta(period_hours)
        timestamps = pd.date_range(pd.Timestamp(start), periods=rtp.size, freq=freq)
        dates = timestamps.normalize()
        days = dates.unique()
        day_index = days.get_indexer(dates)
        if dap_days is None:
            dap_days = np.zeros((max(len(days), 1), HOURS_PER_DAY))
        return cls(timestamps, rtp, dap_days, day_index, period_hours, zone)

    def __len__(self) -> int:
        return int(self.rtp.size)

    @property
    def days(self) -> pd.DatetimeIndex:
        return self.timestamps.normalize().unique()

    def dap_for_period(self, k: int) -> np.ndarray:
        return self.dap_days[self.day_index[k]]

    def signal(self, k: int) -> PriceSignal:
        """What is known when deciding period k: its real-time price and its day-ahead day."""
        return PriceSignal(float(self.rtp[k]), tuple(self.dap_for_period(k).tolist()),
                           self.timestamps[k].to_pydatetime())

    def slice(self, start: int, stop: Optional[int] = None) -> "PriceSeries":
        """Sub-series of periods [start, stop) with its day-ahead table re-indexed."""
        day_index = self.day_index[start:stop]
        used = np.unique(day_index)
        remap = np.searchsorted(used, day_index)
        return PriceSeries(self.timestamps[start:stop], self.rtp[start:stop], self.dap_days[used],
                           remap, self.period_hours, self.zone)

    def between(self, start: Optional[str] = None, end: Optional[str] = None) -> "PriceSeries":
        """Periods whose timestamps fall in [start, end); either bound may be omitted."""
        mask = np.ones(len(self), dtype=bool)
        if start is not None:
            mask &= self.timestamps >= pd.Timestamp(start)
        if end is not None:
            mask &= self.timestamps < pd.Timestamp(end)
        positions = np.nonzero(mask)[0]
        if positions.size == 0:
            raise PriceDataError(f"no periods between {start} and {end}")
        return self.slice(int(positions[0]), int(positions[-1]) + 1)
