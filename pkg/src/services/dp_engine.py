"""
Deterministic backward recursion for historically optimal SoC value functions.

Given v_t, the marginal value of stored energy at the end of period t, the curve
one period earlier follows from the first-order conditions of

    V_{t-1}(e) = max  price_t * (p - b) - c * p + V_t(e - p / eta_p + b * eta_b)

over the feasible charge b and discharge p. With charge threshold
theta_c = price / eta_b and discharge threshold theta_d = (price - c) * eta_p,

    v_{t-1}(e) = min(max(clip(v_t(e), theta_d, theta_c), v_t(e + eta_b * P)), v_t(e - P / eta_p))

where SoC above E is worth -inf and SoC below zero +inf, so capacity limits turn into
partial moves priced at the threshold. The recursion starts from v_T = 0.

Each stored segment value is the average of that marginal over the segment, so
V_{t-1} matches the exact one-period optimum at every segment boundary. A reach
that is not a whole number of segments splits each segment into at most three
pieces with constant lookups.
"""
import time
import warnings
from typing import Iterator, Optional, Tuple

import numpy as np

from models.prices import PriceSeries
from models.storage import StorageParams
from models.value_curve import MarginalValueCurve, ValueFunctionSeries, downsample_matrix, is_non_increasing
from services.controller import run_dispatch
from utils.exceptions import DomainError, PreconditionError, PriceDataError
from utils.logger import Logger

logger = Logger.get_instance("DpEngine")

DEFAULT_SEGMENTS = 1001
DEFAULT_BLOCK = 8640
_MONOTONE_TOLERANCE = 1e-9
_FRACTION_EPS = 1e-9

# (whole segments, fraction of the next segment)
Reach = Tuple[int, float]


def split_reach(shift: float, width: float, num_segments: int) -> Reach:
    """Per-period SoC reach as whole segments plus the fraction of one more."""
    ratio = shift / width
    whole = int(np.floor(ratio + _FRACTION_EPS))
    if whole >= num_segments:
        return num_segments, 0.0
    fraction = ratio - whole
    return whole, fraction if fraction > _FRACTION_EPS else 0.0


def segment_reach(params: StorageParams, num_segments: int) -> Tuple[Reach, Reach]:
    """Charge and discharge reach of one period on a grid of ``num_segments``."""
    width = params.energy_capacity / num_segments
    return (split_reach(params.charge_shift, width, num_segments),
            split_reach(params.discharge_shift, width, num_segments))


def _update(values: np.ndarray, charge_threshold: float, discharge_threshold: float,
            charge_reach: Reach, discharge_reach: Reach) -> np.ndarray:
    size = values.shape[0]
    up_whole, up_fraction = charge_reach
    down_whole, down_fraction = discharge_reach
    padded = np.concatenate((np.full(down_whole + 1, np.inf), values, np.full(up_whole + 2, -np.inf)))
    top = down_whole + 1 + up_whole
    up_low, up_high = padded[top:top + size], padded[top + 1:top + 1 + size]
    down_low, down_high = padded[:size], padded[1:1 + size]
    idle = np.clip(values, discharge_threshold, charge_threshold)

    # Within a segment the charge lookup steps up at 1 - up_fraction and the
    # discharge lookup at down_fraction.
    up_switch = 1.0 - up_fraction
    first, second = min(up_switch, down_fraction), max(up_switch, down_fraction)
    middle = (up_high, down_low) if up_switch < down_fraction else (up_low, down_high)
    pieces = [(first, up_low, down_low), (second - first, *middle), (1.0 - second, up_high, down_high)]
    weighted = [(weight, np.minimum(np.maximum(idle, up), down)) for weight, up, down in pieces if weight > 0.0]

    # Offsets from the first piece keep flat stretches exact
    base = weighted[0][1]
    updated = base
    for weight, marginal in weighted[1:]:
        updated = updated + weight * (marginal - base)
    return updated


def _origin_gain(values: np.ndarray, charge_threshold: float, charge_reach: Reach, width: float) -> float:
    """Gain of the best charge from an empty store, which is all an empty store can do."""
    whole, fraction = charge_reach
    surplus = np.maximum(values - charge_threshold, 0.0)
    gain = float(np.sum(surplus[:whole]))
    if fraction:
        gain += fraction * float(surplus[whole])
    return width * gain


def backward_update(v_next: MarginalValueCurve, price: float, params: StorageParams) -> MarginalValueCurve:
    """One step of the recursion: v_t and price_t give v_{t-1}."""
    if not np.isfinite(price):
        raise PreconditionError(f"price must be finite, got {price}")
    if not v_next.is_non_increasing(_MONOTONE_TOLERANCE):
        raise PreconditionError("v_next must be non-increasing in SoC")
    charge_reach, discharge_reach = segment_reach(params, v_next.num_segments)
    charge_threshold, discharge_threshold = params.thresholds(price)
    values = _update(v_next.segment_values, charge_threshold, discharge_threshold, charge_reach, discharge_reach)
    return MarginalValueCurve(values, v_next.capacity)


def iter_backward(rtp: np.ndarray, params: StorageParams, num_segments: int = DEFAULT_SEGMENTS,
                  terminal: Optional[np.ndarray] = None, stop: int = 0) -> Iterator[Tuple[int, np.ndarray, float]]:
    """
    Yield (t, v_t, V_t(0) - V_T(0)) for t = T down to ``stop``.

    ``terminal`` replaces v_T = 0, which lets callers restart the recursion from a
    stored checkpoint with T = len(rtp).
    """
    if num_segments < 1:
        raise DomainError(f"segment count must be positive, got {num_segments}")
    width = params.energy_capacity / num_segments
    charge_reach, discharge_reach = segment_reach(params, num_segments)
    values = np.zeros(num_segments) if terminal is None else np.array(terminal, dtype=np.float64)
    level = 0.0
    horizon = rtp.shape[0]
    yield horizon, values, level
    for t in range(horizon, stop, -1):
        price = float(rtp[t - 1])
        charge_threshold, discharge_threshold = params.thresholds(price)
        level += _origin_gain(values, charge_threshold, charge_reach, width)
        values = _update(values, charge_threshold, discharge_threshold, charge_reach, discharge_reach)
        yield t - 1, values, level


def generate_curves(rtp: np.ndarray, params: StorageParams, num_segments: int = DEFAULT_SEGMENTS,
                    store_segments: Optional[int] = None) -> ValueFunctionSeries:
    """Backward recursion over a raw price array; T = 0 yields only the terminal curve."""
    rtp = np.asarray(rtp, dtype=np.float64)
    if not np.all(np.isfinite(rtp)):
        raise PriceDataError("prices must be finite")
    stored = num_segments if store_segments is None else store_segments
    matrix = None if stored == num_segments else downsample_matrix(num_segments, stored)
    out = np.empty((rtp.shape[0] + 1, stored))
    origin = 0.0
    for t, values, level in iter_backward(rtp, params, num_segments):
        out[t] = values if matrix is None else matrix @ values
        origin = level
    if not is_non_increasing(out, _MONOTONE_TOLERANCE):
        raise PreconditionError("backward recursion produced a non-concave value function")
    return ValueFunctionSeries(out, params, origin)


def generate_series(prices: PriceSeries, params: StorageParams, num_segments: int = DEFAULT_SEGMENTS,
                    store_segments: Optional[int] = None) -> ValueFunctionSeries:
    """
    Historically optimal value functions for every period of ``prices``.

    The recursion always runs at ``num_segments``; ``store_segments`` keeps only
    down-sampled curves, which bounds memory for multi-year horizons.
    """
    if len(prices) == 0:
        raise PriceDataError("cannot generate value functions from an empty price series")
    started = time.perf_counter()
    series = generate_curves(prices.rtp, params, num_segments, store_segments)
    logger.info("Generated value functions", extra={"fields": {
        "periods": len(prices), "segments": num_segments, "stored_segments": series.num_segments,
        "seconds": round(time.perf_counter() - started, 3)}})
    return series


def perfect_foresight_profit(prices: PriceSeries, params: StorageParams, e_0: float = 0.0,
                             num_segments: int = DEFAULT_SEGMENTS, block_size: int = DEFAULT_BLOCK) -> float:
    """
    Realised profit of dispatching against the true value functions.

    The backward pass keeps a checkpoint curve every ``block_size`` periods; each
    block is then regenerated from its checkpoint and replayed forward, so memory
    stays proportional to (T / block_size + block_size) curves.
    """
    if len(prices) == 0:
        raise PriceDataError("cannot value an empty price series")
    if not 0.0 <= e_0 <= params.energy_capacity:
        raise PreconditionError(f"initial SoC {e_0} outside [0, {params.energy_capacity}]")
    started = time.perf_counter()
    rtp = prices.rtp
    horizon = rtp.shape[0]
    checkpoints = {}
    for t, values, _ in iter_backward(rtp, params, num_segments):
        if t % block_size == 0 or t == horizon:
            checkpoints[t] = values.copy()

    e = float(e_0)
    profit = 0.0
    for start in range(0, horizon, block_size):
        end = min(start + block_size, horizon)
        block = np.empty((end - start, num_segments))
        for t, values, _ in iter_backward(rtp[:end], params, num_segments, terminal=checkpoints[end], stop=start + 1):
            if t > start:
                block[t - start - 1] = values
        prices_block = rtp[start:end]
        charge, discharge, soc = run_dispatch(prices_block, block, np.ones(end - start, dtype=bool),
                                              params.energy_capacity, params, e)
        profit += float(np.sum(prices_block * (discharge - charge) - params.marginal_cost * discharge))
        e = float(soc[-1])
    logger.info("Computed perfect-foresight profit", extra={"fields": {
        "periods": horizon, "profit": profit, "seconds": round(time.perf_counter() - started, 3)}})
    return profit


def oracle_dp(prices: PriceSeries, params: StorageParams, soc_grid_n: int, action_grid_n: int,
              e_0: float = 0.0) -> Tuple[float, ValueFunctionSeries]:
    """
    Tabular brute-force recursion used to check the analytic update.

    V is tabulated on ``soc_grid_n`` evenly spaced SoC points. Each state considers
    every grid point within one period's reach plus ``action_grid_n`` evenly spaced
    charge and discharge amounts in [0, P], valuing off-grid landings by linear
    interpolation. Returns V_0(e_0) and the marginal curves (V[j+1] - V[j]) / w.
    """
    if soc_grid_n < 2 or action_grid_n < 2:
        raise DomainError("oracle grids need at least two points",
                          data={"soc_grid_n": soc_grid_n, "action_grid_n": action_grid_n})
    capacity = params.energy_capacity
    grid = np.linspace(0.0, capacity, soc_grid_n)
    width = grid[1] - grid[0]
    if params.charge_shift < width or params.discharge_shift < width:
        warnings.warn("oracle SoC grid is coarser than one period's energy limit", RuntimeWarning, stacklevel=2)
        logger.warning("Oracle SoC grid cannot represent the per-period energy limit",
                       extra={"fields": {"grid_width": width, "charge_shift": params.charge_shift}})

    up = int(np.floor(params.charge_shift / width + 1e-9))
    down = int(np.floor(params.discharge_shift / width + 1e-9))
    offsets = np.arange(-down, up + 1)
    targets = np.arange(soc_grid_n)[:, None] + offsets[None, :]
    on_grid = (targets >= 0) & (targets < soc_grid_n)
    targets = np.clip(targets, 0, soc_grid_n - 1)
    moves = offsets * width

    amounts = np.linspace(0.0, params.max_energy_per_period, action_grid_n)
    charge_landing = grid[:, None] + amounts[None, :] * params.eta_charge
    discharge_landing = grid[:, None] - amounts[None, :] / params.eta_discharge
    charge_ok = charge_landing <= capacity + 1e-12
    discharge_ok = discharge_landing >= -1e-12

    rtp = prices.rtp
    horizon = rtp.shape[0]
    tables = np.zeros((horizon + 1, soc_grid_n))
    for t in range(horizon, 0, -1):
        price = float(rtp[t - 1])
        future = tables[t]
        charge_threshold, _ = params.thresholds(price)
        sell_value = (price - params.marginal_cost) * params.eta_discharge

        reward = np.where(moves > 0, -charge_threshold * moves, -sell_value * moves)
        if price < 0:
            reward = np.where(moves < 0, -np.inf, reward)
        grid_total = np.where(on_grid, reward[None, :] + future[targets], -np.inf)

        charge_total = np.where(
            charge_ok, -price * amounts[None, :] + np.interp(np.minimum(charge_landing, capacity), grid, future),
            -np.inf)
        best = np.maximum(grid_total.max(axis=1), charge_total.max(axis=1))
        if price >= 0:
            discharge_total = np.where(
                discharge_ok,
                (price - params.marginal_cost) * amounts[None, :]
                + np.interp(np.maximum(discharge_landing, 0.0), grid, future),
                -np.inf)
            best = np.maximum(best, discharge_total.max(axis=1))
        tables[t - 1] = best

    profit = float(np.interp(e_0, grid, tables[0]))
    marginals = np.diff(tables, axis=1) / width
    return profit, ValueFunctionSeries(marginals, params, float(tables[0, 0]))
