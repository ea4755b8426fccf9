"""
Price file ingestion and synthetic price generation.

Both price files are comma-separated with a header row. The schema names the
timestamp and price columns, an optional zone column and value to filter on (for
multi-zone exports such as NYISO's), the timestamp format, the date range to keep
and the real-time period length. Timestamps are read as naive market-local period
starts.
"""
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from models.prices import HOURS_PER_DAY, PriceSeries, period_timedelta
from utils.config_validator import ConfigValidator
from utils.exceptions import FileOperationError, PriceDataError
from utils.logger import Logger

logger = Logger.get_instance("PriceLoader")

PathLike = Union[str, Path]
DEFAULT_TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"


@dataclass(frozen=True)
class PriceSchema:
    """Column mapping, date range and grid settings for price CSV files."""

    timestamp_column: str = "timestamp"
    price_column: str = "price"
    zone_column: Optional[str] = None
    zone: Optional[str] = None
    timestamp_format: Optional[str] = DEFAULT_TIMESTAMP_FORMAT
    start: Optional[str] = None
    end: Optional[str] = None
    period_minutes: int = 5
    max_gap_minutes: int = 60

    @property
    def period_hours(self) -> float:
        return self.period_minutes / 60.0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PriceSchema":
        ConfigValidator.validate(data, [], {
            "timestamp_column": ConfigValidator.is_non_empty_string,
            "price_column": ConfigValidator.is_non_empty_string,
            "period_minutes": ConfigValidator.is_positive_integer,
            "max_gap_minutes": ConfigValidator.is_positive_integer,
        }, allowed_keys={f.name for f in fields(cls)})
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class SynthProfile:
    """
    Shape of synthetic prices: a daily sinusoid around a per-day level, bounded
    uniform noise, occasional upward spikes and occasional negative prices.
    """

    base_price: float = 35.0
    day_level_spread: float = 5.0
    daily_amplitude: float = 15.0
    peak_hour: float = 15.0
    noise: float = 3.0
    spike_prob: float = 0.01
    spike_magnitude: float = 150.0
    negative_prob: float = 0.005
    negative_magnitude: float = 30.0
    dap_noise: float = 2.0

    @property
    def upper_envelope(self) -> float:
        """Highest price reachable without a spike."""
        return self.base_price + self.day_level_spread + self.daily_amplitude + self.noise

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SynthProfile":
        probability = ConfigValidator.create_range_validator(0.0, 1.0)
        validators = {f.name: ConfigValidator.is_non_negative_number for f in fields(cls)}
        validators.update(spike_prob=probability, negative_prob=probability,
                          base_price=ConfigValidator.is_finite_number,
                          peak_hour=ConfigValidator.create_range_validator(0.0, 24.0))
        ConfigValidator.validate(data, [], validators, allowed_keys={f.name for f in fields(cls)})
        return cls(**{key: float(value) for key, value in data.items()})

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        return float("nan")


def _read_prices(path: PathLike, schema: PriceSchema, kind: str) -> pd.DataFrame:
    """Read one price file into (timestamp, price, line) rows, rejecting unparseable lines."""
    path = Path(path)
    if not path.is_file():
        raise FileOperationError(f"{kind} price file not found: {path}", data={"path": str(path)})
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise PriceDataError(f"{kind} price file {path} is empty", data={"path": str(path)}) from exc
    wanted: List[str] = [schema.timestamp_column, schema.price_column]
    if schema.zone_column:
        wanted.append(schema.zone_column)
    missing = [column for column in wanted if column not in frame.columns]
    if missing:
        raise PriceDataError(f"{kind} price file {path} lacks columns {missing}",
                             data={"path": str(path), "columns": list(frame.columns)})

    frame["line"] = np.arange(len(frame)) + 2
    if schema.zone_column and schema.zone is not None:
        frame = frame[frame[schema.zone_column].str.strip() == schema.zone]
    if frame.empty:
        raise PriceDataError(f"{kind} price file {path} has no rows", data={"path": str(path)})

    timestamps = pd.to_datetime(frame[schema.timestamp_column].str.strip(), format=schema.timestamp_format,
                                errors="coerce")
    prices = frame[schema.price_column].map(_parse_float)
    bad = timestamps.isna() | prices.isna()
    if bad.any():
        row = frame.loc[bad.idxmax()]
        raise PriceDataError(
            f"unparseable row in {kind} price file {path} at line {int(row['line'])}",
            data={"path": str(path), "line": int(row["line"]),
                  "timestamp": row[schema.timestamp_column], "price": row[schema.price_column]},
        )
    parsed = pd.DataFrame({"timestamp": timestamps.to_numpy(), "price": prices.to_numpy(dtype=np.float64),
                           "line": frame["line"].to_numpy()})

    if schema.start is not None:
        parsed = parsed[parsed["timestamp"] >= pd.Timestamp(schema.start)]
    if schema.end is not None:
        parsed = parsed[parsed["timestamp"] < pd.Timestamp(schema.end)]
    if parsed.empty:
        raise PriceDataError(f"{kind} price file {path} has no rows in the requested date range",
                             data={"start": schema.start, "end": schema.end})

    duplicated = parsed["timestamp"].duplicated(keep=False)
    if duplicated.any():
        stamps = sorted({str(stamp) for stamp in parsed.loc[duplicated, "timestamp"]})
        raise PriceDataError(f"duplicate timestamps in {kind} price file {path}",
                             data={"timestamps": stamps[:10], "count": len(stamps)})
    return parsed.sort_values("timestamp").reset_index(drop=True)


def _align_realtime(frame: pd.DataFrame, schema: PriceSchema) -> pd.Series:
    """Place real-time prices on a uniform grid, carrying short gaps forward."""
    step = period_timedelta(schema.period_hours)
    first = frame["timestamp"].iloc[0]
    off_grid = ((frame["timestamp"] - first) % step) != pd.Timedelta(0)
    if off_grid.any():
        row = frame[off_grid].iloc[0]
        raise PriceDataError(f"timestamp {row['timestamp']} at line {int(row['line'])} is off the "
                             f"{schema.period_minutes}-minute grid", data={"line": int(row["line"])})

    grid = pd.date_range(first, frame["timestamp"].iloc[-1], freq=step)
    series = frame.set_index("timestamp")["price"].reindex(grid)
    missing = series.isna().to_numpy()
    if missing.any():
        run_starts = np.flatnonzero(missing & ~np.r_[False, missing[:-1]])
        run_ends = np.flatnonzero(missing & ~np.r_[missing[1:], False])
        lengths = run_ends - run_starts + 1
        longest = int(lengths.max())
        if longest * schema.period_minutes > schema.max_gap_minutes:
            at = int(run_starts[int(np.argmax(lengths))])
            raise PriceDataError(
                f"real-time gap of {longest} periods starting {grid[at]} exceeds {schema.max_gap_minutes} minutes",
                data={"start": str(grid[at]), "periods": longest},
            )
        logger.warning("Filled missing real-time periods by carry-forward", extra={"fields": {
            "filled": int(missing.sum()), "gaps": int(lengths.size), "first": str(grid[int(run_starts[0])])}})
        series = series.ffill()
    return series


def _day_ahead_table(frame: pd.DataFrame, days: pd.DatetimeIndex) -> np.ndarray:
    """24 hourly prices per operating day, in the order of ``days``."""
    stamps = frame["timestamp"]
    off_hour = stamps != stamps.dt.floor("h")
    if off_hour.any():
        row = frame[off_hour].iloc[0]
        raise PriceDataError(f"day-ahead timestamp {row['timestamp']} at line {int(row['line'])} is not on the hour",
                             data={"line": int(row["line"])})
    table = pd.DataFrame({"day": stamps.dt.normalize(), "hour": stamps.dt.hour, "price": frame["price"]})
    pivot = table.pivot(index="day", columns="hour", values="price").reindex(index=days,
                                                                              columns=range(HOURS_PER_DAY))
    incomplete = pivot.isna().any(axis=1)
    if incomplete.any():
        dates = [day.strftime("%Y-%m-%d") for day in pivot.index[incomplete]]
        raise PriceDataError(f"missing day-ahead prices for {len(dates)} operating day(s): {', '.join(dates[:10])}",
                             data={"dates": dates})
    return pivot.to_numpy(dtype=np.float64)


def load_prices(rtp_path: PathLike, dap_path: Optional[PathLike] = None,
                schema: Optional[PriceSchema] = None, zone_label: str = "") -> PriceSeries:
    """
    Read and align real-time and day-ahead price files.

    Without a day-ahead file every operating day gets zero day-ahead prices, which
    is enough for value-function generation but not for DAP features.
    """
    schema = schema or PriceSchema()
    realtime = _align_realtime(_read_prices(rtp_path, schema, "real-time"), schema)
    timestamps = pd.DatetimeIndex(realtime.index)
    dates = timestamps.normalize()
    days = dates.unique()
    if dap_path is not None:
        dap_days = _day_ahead_table(_read_prices(dap_path, schema, "day-ahead"), days)
    else:
        logger.info("No day-ahead file given; using zero day-ahead prices")
        dap_days = np.zeros((len(days), HOURS_PER_DAY))
    series = PriceSeries(timestamps, realtime.to_numpy(dtype=np.float64), dap_days, days.get_indexer(dates),
                         schema.period_hours, zone_label or (schema.zone or ""))
    logger.info("Loaded prices", extra={"fields": {
        "path": str(rtp_path), "periods": len(series), "days": len(days),
        "first": str(timestamps[0]), "last": str(timestamps[-1])}})
    return series


def write_prices(series: PriceSeries, rtp_path: PathLike, dap_path: PathLike) -> None:
    """Write a series in the default schema; ``load_prices`` reads it back unchanged."""
    realtime = pd.DataFrame({
        "timestamp": series.timestamps.strftime(DEFAULT_TIMESTAMP_FORMAT),
        "price": [repr(float(value)) for value in series.rtp],
    })
    realtime.to_csv(rtp_path, index=False)
    hours = pd.to_timedelta(np.tile(np.arange(HOURS_PER_DAY), len(series.days)), unit="h")
    stamps = series.days.repeat(HOURS_PER_DAY) + hours
    order = np.unique(series.day_index)
    day_ahead = pd.DataFrame({
        "timestamp": stamps.strftime(DEFAULT_TIMESTAMP_FORMAT),
        "price": [repr(float(value)) for value in series.dap_days[order].reshape(-1)],
    })
    day_ahead.to_csv(dap_path, index=False)


def synth_prices(seed: int, days: int, period_hours: float = 1.0 / 12.0,
                 profile: Optional[SynthProfile] = None, start: str = "2019-01-01",
                 zone: str = "SYNTH") -> PriceSeries:
    """Deterministic synthetic real-time and day-ahead prices; equal seeds give equal series."""
    if days < 1:
        raise PriceDataError(f"synthetic series needs at least one day, got {days}")
    profile = profile or SynthProfile()
    rng = np.random.default_rng(seed)
    per_day = int(round(24 / period_hours))
    periods = days * per_day

    levels = profile.base_price + rng.uniform(-profile.day_level_spread, profile.day_level_spread, size=days)
    hour_of_day = (np.arange(periods) % per_day) * period_hours
    shape = profile.daily_amplitude * np.sin(2 * np.pi * (hour_of_day - profile.peak_hour + 6.0) / 24.0)
    rtp = np.repeat(levels, per_day) + shape + rng.uniform(-profile.noise, profile.noise, size=periods)

    spikes = rng.random(periods) < profile.spike_prob
    rtp[spikes] += profile.spike_magnitude * rng.uniform(0.5, 1.5, size=int(spikes.sum()))
    negatives = rng.random(periods) < profile.negative_prob
    rtp[negatives] = -rng.uniform(1.0, max(profile.negative_magnitude, 1.0), size=int(negatives.sum()))

    dap_hours = np.arange(HOURS_PER_DAY) + 0.5
    dap_shape = profile.daily_amplitude * np.sin(2 * np.pi * (dap_hours - profile.peak_hour + 6.0) / 24.0)
    dap_days = levels[:, None] + dap_shape[None, :] + rng.normal(0.0, profile.dap_noise, size=(days, HOURS_PER_DAY))

    timestamps = pd.date_range(pd.Timestamp(start), periods=periods, freq=period_timedelta(period_hours))
    return PriceSeries(timestamps, rtp, dap_days, np.repeat(np.arange(days), per_day), period_hours, zone)
