"""
Predictor vectors built from price history.

The vector for period k holds the W most recent real-time prices, newest first,
followed by the 24 day-ahead prices of period k's operating day when day-ahead
features are enabled. Nothing from period k's own real-time price or later is used.
"""
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional

import numpy as np

from models.prices import HOURS_PER_DAY, PriceSeries
from utils.config_validator import ConfigValidator
from utils.exceptions import DimensionMismatchError, DomainError, InsufficientHistoryError, PreconditionError

# Standard deviations below this are treated as constant features
STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class FeatureSpec:
    """Look-back window, day-ahead switch and the z-score statistics fit on training data."""

    n_rtp_lags: int
    n_dap: int = 0
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    period_hours: float = 1.0 / 12.0

    def __post_init__(self) -> None:
        ConfigValidator.validate({"n_rtp_lags": self.n_rtp_lags, "n_dap": self.n_dap,
                                  "period_hours": self.period_hours}, [], {
            "n_rtp_lags": ConfigValidator.is_positive_integer,
            "n_dap": ConfigValidator.create_choice_validator((0, HOURS_PER_DAY)),
            "period_hours": ConfigValidator.is_positive_number,
        })
        if (self.mean is None) != (self.std is None):
            raise PreconditionError("normalization needs both mean and std")
        for name in ("mean", "std"):
            stats = getattr(self, name)
            if stats is None:
                continue
            stats = np.array(stats, dtype=np.float64).reshape(-1)
            if stats.size != self.length:
                raise DimensionMismatchError(f"{name} has {stats.size} entries, expected {self.length}")
            stats.setflags(write=False)
            object.__setattr__(self, name, stats)

    @property
    def length(self) -> int:
        return self.n_rtp_lags + self.n_dap

    @property
    def normalized(self) -> bool:
        return self.mean is not None

    def with_statistics(self, mean: np.ndarray, std: np.ndarray) -> "FeatureSpec":
        return replace(self, mean=mean, std=std)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_rtp_lags": self.n_rtp_lags,
            "n_dap": self.n_dap,
            "period_hours": self.period_hours,
            "mean": None if self.mean is None else self.mean.tolist(),
            "std": None if self.std is None else self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureSpec":
        ConfigValidator.validate(data, ["n_rtp_lags", "n_dap"],
                                 allowed_keys={"n_rtp_lags", "n_dap", "period_hours", "mean", "std"})
        mean, std = data.get("mean"), data.get("std")
        return cls(
            n_rtp_lags=data["n_rtp_lags"],
            n_dap=data["n_dap"],
            mean=None if mean is None else np.asarray(mean, dtype=np.float64),
            std=None if std is None else np.asarray(std, dtype=np.float64),
            period_hours=float(data.get("period_hours", 1.0 / 12.0)),
        )


def raw_features(series: PriceSeries, t: int, spec: FeatureSpec) -> np.ndarray:
    """Un-normalized predictor vector for period ``t``."""
    if t >= len(series):
        raise DomainError(f"period {t} outside a series of {len(series)} periods")
    if t < spec.n_rtp_lags:
        raise InsufficientHistoryError(
            f"period {t} lacks {spec.n_rtp_lags} periods of history",
            first_valid_t=spec.n_rtp_lags,
            data={"t": t, "periods": len(series)},
        )
    lags = series.rtp[t - spec.n_rtp_lags:t][::-1]
    if spec.n_dap == 0:
        return lags.copy()
    return np.concatenate([lags, np.asarray(series.signal(t).dap_day)])


def normalize(spec: FeatureSpec, features: np.ndarray) -> np.ndarray:
    if not spec.normalized:
        return np.asarray(features, dtype=np.float64)
    return (features - spec.mean) / spec.std


def build_features(series: PriceSeries, t: int, spec: FeatureSpec) -> np.ndarray:
    """Normalized predictor vector for period ``t``; needs t >= n_rtp_lags."""
    return normalize(spec, raw_features(series, t, spec))


def build_feature_matrix(series: PriceSeries, spec: FeatureSpec, start: Optional[int] = None,
                         stop: Optional[int] = None, normalized: bool = True) -> np.ndarray:
    """Rows are the predictor vectors of periods start..stop-1, stacked without a Python loop."""
    start = spec.n_rtp_lags if start is None else start
    stop = len(series) if stop is None else stop
    if stop > len(series):
        raise DomainError(f"stop {stop} beyond a series of {len(series)} periods")
    if start < spec.n_rtp_lags:
        raise InsufficientHistoryError(f"period {start} lacks {spec.n_rtp_lags} periods of history",
                                       first_valid_t=spec.n_rtp_lags)
    if stop <= start:
        return np.empty((0, spec.length))
    windows = np.lib.stride_tricks.sliding_window_view(series.rtp[:stop - 1], spec.n_rtp_lags)
    lags = windows[start - spec.n_rtp_lags:][:, ::-1]
    if spec.n_dap:
        matrix = np.hstack([lags, series.dap_days[series.day_index[start:stop]]])
    else:
        matrix = np.ascontiguousarray(lags)
    return normalize(spec, matrix) if normalized else matrix


def fit_normalization(features: np.ndarray, spec: FeatureSpec) -> FeatureSpec:
    """Per-feature mean and population std of the training rows; near-constant features get std 1."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise PreconditionError("normalization needs at least two training samples",
                                data={"shape": list(features.shape)})
    if features.shape[1] != spec.length:
        raise DimensionMismatchError(f"features have {features.shape[1]} columns, spec expects {spec.length}")
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return spec.with_statistics(mean, std)
