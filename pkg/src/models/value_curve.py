"""
Piecewise-constant marginal value curves over equal SoC segments.

Segment i of a curve with K segments covers [i*w, (i+1)*w) with w = E/K. The
curve is the derivative v(e) of a piecewise-linear opportunity value V(e); for
optimal curves it is non-increasing in SoC.

Value-function series are stored as numpy ``.npz`` archives with the arrays

    values        float64 (T+1, K)  row t is v_t, the curve at the end of period t
    header        float64 (4,)      [E, K, T, period_hours]
    origin_value  float64 ()        V_0(0), the optimal value of an empty store
    params        str               StorageParams as JSON
"""
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np

from models.storage import SOC_TOLERANCE, StorageParams
from utils.exceptions import DomainError, ModelFormatError, PreconditionError


@lru_cache(maxsize=32)
def downsample_matrix(num_segments: int, target_segments: int) -> np.ndarray:
    """Width-weighted averaging matrix mapping K source segments onto K_target segments."""
    if target_segments <= 0:
        raise DomainError(f"target segment count must be positive, got {target_segments}")
    if target_segments > num_segments:
        raise DomainError(
            f"cannot downsample {num_segments} segments to {target_segments}",
            data={"num_segments": num_segments, "target_segments": target_segments},
        )
    # Boundaries in units of source segments
    ratio = num_segments / target_segments
    lower = np.arange(target_segments)[:, None] * ratio
    upper = lower + ratio
    source = np.arange(num_segments)[None, :]
    overlap = np.clip(np.minimum(upper, source + 1) - np.maximum(lower, source), 0.0, None)
    matrix = overlap / ratio
    matrix.setflags(write=False)
    return matrix


def is_non_increasing(values: np.ndarray, tolerance: float = 0.0) -> bool:
    return bool(np.all(np.diff(values, axis=-1) <= tolerance))


@dataclass(frozen=True, eq=False)
class MarginalValueCurve:
    """Marginal opportunity value in $/MWh on each of K equal SoC segments."""

    segment_values: np.ndarray
    capacity: float

    def __post_init__(self) -> None:
        values = np.array(self.segment_values, dtype=np.float64).reshape(-1)
        if values.size < 1:
            raise DomainError("a curve needs at least one segment")
        if not np.all(np.isfinite(values)):
            raise DomainError("curve values must be finite")
        if not self.capacity > 0:
            raise DomainError(f"capacity must be positive, got {self.capacity}")
        values.setflags(write=False)
        object.__setattr__(self, "segment_values", values)

    @classmethod
    def constant(cls, value: float, capacity: float, num_segments: int) -> "MarginalValueCurve":
        return cls(np.full(num_segments, float(value)), capacity)

    @property
    def num_segments(self) -> int:
        return int(self.segment_values.size)

    @property
    def segment_width(self) -> float:
        return self.capacity / self.num_segments

    def check_soc(self, e: float) -> None:
        """Raise DomainError unless e lies in [0, E] up to SOC_TOLERANCE."""
        if not (-SOC_TOLERANCE <= e <= self.capacity + SOC_TOLERANCE):
            raise DomainError(f"SoC {e} outside [0, {self.capacity}]", data={"soc": e})

    def eval_marginal(self, e: float) -> float:
        """Value of the segment containing e; a boundary belongs to the lower segment."""
        self.check_soc(e)
        index = int(np.ceil(e / self.segment_width)) - 1
        return float(self.segment_values[min(max(index, 0), self.num_segments - 1)])

    def _antiderivative(self, e: float) -> float:
        width = self.segment_width
        index = min(int(np.floor(e / width)), self.num_segments - 1)
        index = max(index, 0)
        full = width * float(np.sum(self.segment_values[:index]))
        return full + (e - index * width) * float(self.segment_values[index])

    def integrate(self, e_from: float, e_to: float) -> float:
        """Signed integral of v between two SoC levels, in $."""
        self.check_soc(e_from)
        self.check_soc(e_to)
        if e_from == e_to:
            return 0.0
        return self._antiderivative(e_to) - self._antiderivative(e_from)

    def downsample(self, target_segments: int) -> "MarginalValueCurve":
        matrix = downsample_matrix(self.num_segments, target_segments)
        return MarginalValueCurve(matrix @ self.segment_values, self.capacity)

    def is_non_increasing(self, tolerance: float = 0.0) -> bool:
        return is_non_increasing(self.segment_values, tolerance)


@dataclass(frozen=True, eq=False)
class ValueFunctionSeries:
    """
    One marginal value curve per period boundary t = 0..T.

    ``values[t]`` is v_t. ``origin_value`` is V_0(0) when the series came out of the
    backward recursion and lets callers recover V_0 at any SoC.
    """

    values: np.ndarray
    params: StorageParams
    origin_value: float = 0.0
    _curves: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        # Read-only view: the caller's matrix stays writeable and is not duplicated
        values = np.asarray(self.values, dtype=np.float64).view()
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DomainError(f"value series must be a (T+1, K) matrix, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @property
    def num_segments(self) -> int:
        return self.values.shape[1]

    @property
    def capacity(self) -> float:
        return self.params.energy_capacity

    def curve(self, t: int) -> MarginalValueCurve:
        if t not in self._curves:
            self._curves[t] = MarginalValueCurve(self.values[t], self.capacity)
        return self._curves[t]

    def __len__(self) -> int:
        return self.values.shape[0]

    def downsample(self, target_segments: int) -> "ValueFunctionSeries":
        if target_segments == self.num_segments:
            return self
        matrix = downsample_matrix(self.num_segments, target_segments)
        return ValueFunctionSeries(self.values @ matrix.T, self.params, self.origin_value)

    def optimal_value(self, e_0: float) -> float:
        """V_0(e_0): the hindsight-optimal profit from initial SoC e_0."""
        return self.origin_value + self.curve(0).integrate(0.0, e_0)

    def check_concave(self, tolerance: float = 1e-9) -> None:
        if not is_non_increasing(self.values, tolerance):
            bad = np.nonzero(np.any(np.diff(self.values, axis=1) > tolerance, axis=1))[0]
            raise PreconditionError("value curves must be non-increasing in SoC",
                                    data={"first_bad_t": int(bad[0])})

    def save(self, path: Union[str, Path]) -> None:
        header = np.array([self.capacity, self.num_segments, self.horizon, self.params.period_hours])
        with open(path, "wb") as handle:
            np.savez_compressed(
                handle,
                values=self.values,
                header=header,
                origin_value=np.float64(self.origin_value),
                params=np.array(json.dumps(self.params.to_dict(), sort_keys=True)),
            )

    @classmethod
    def load(cls, path: Union[str, Path], params: Optional[StorageParams] = None) -> "ValueFunctionSeries":
        try:
            archive = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise ModelFormatError(f"cannot read value series {path}: {exc}", section="archive") from exc
        with archive:
            for section in ("values", "header", "origin_value", "params"):
                if section not in archive.files:
                    raise ModelFormatError(f"value series {path} lacks '{section}'", section=section)
            values = archive["values"]
            header = archive["header"]
            stored = StorageParams.from_dict(json.loads(str(archive["params"])))
            origin_value = float(archive["origin_value"])
        if header.shape != (4,) or values.shape != (int(header[2]) + 1, int(header[1])):
            raise ModelFormatError(
                f"value series {path} header {header.tolist()} disagrees with matrix {values.shape}",
                section="header",
            )
        return cls(values, params or stored, origin_value)
