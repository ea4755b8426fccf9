import time

import numpy as np
import pytest

from models.prices import PriceSeries
from models.storage import StorageParams
from models.value_curve import MarginalValueCurve
from services.controller import HindsightCurves, run_backtest
from services.dp_engine import (backward_update, generate_curves, generate_series, oracle_dp,
                                perfect_foresight_profit, segment_reach, split_reach)
from utils.exceptions import DomainError, PreconditionError, PriceDataError


def _one_period_optimum(curve: MarginalValueCurve, price: float, params: StorageParams) -> np.ndarray:
    """max over actions of revenue plus the interpolated future value, on the curve's boundaries."""
    boundaries = np.linspace(0.0, curve.capacity, curve.num_segments + 1)
    future = np.concatenate([[0.0], np.cumsum(curve.segment_values) * curve.segment_width])
    best = np.empty_like(boundaries)
    for index, e in enumerate(boundaries):
        candidates = [0.0]
        up = min(params.charge_shift, curve.capacity - e)
        targets = list(boundaries[(boundaries > e) & (boundaries <= e + up)]) + [e + up]
        candidates += [-price * (target - e) / params.eta_charge + np.interp(target, boundaries, future)
                       - np.interp(e, boundaries, future) for target in targets]
        if price >= 0:
            down = min(params.discharge_shift, e)
            targets = list(boundaries[(boundaries < e) & (boundaries >= e - down)]) + [e - down]
            candidates += [(price - params.marginal_cost) * (e - target) * params.eta_discharge
                           + np.interp(target, boundaries, future) - np.interp(e, boundaries, future)
                           for target in targets]
        best[index] = np.interp(e, boundaries, future) + max(candidates)
    return best


class TestBackwardUpdate:
    def test_default_reach_is_fractional(self, params):
        (up_whole, up_fraction), (down_whole, down_fraction) = segment_reach(params, 1001)
        assert (up_whole, down_whole) == (37, 46)
        assert up_fraction == pytest.approx(0.5375)
        assert down_fraction == pytest.approx(1001 * 0.5 / 12 / 0.9 - 46)

    def test_reach_beyond_capacity_is_capped(self):
        assert split_reach(2.0, 0.1, 10) == (10, 0.0)
        assert split_reach(0.3, 0.1, 10) == (3, 0.0)

    def test_high_price_makes_bottom_energy_worth_discharge_threshold(self, params):
        curve = backward_update(MarginalValueCurve.constant(0.0, 1.0, 1001), 100.0, params)
        _, (down_whole, down_fraction) = segment_reach(params, 1001)
        values = curve.segment_values
        np.testing.assert_allclose(values[:down_whole], 81.0)
        assert values[down_whole] == pytest.approx(81.0 * down_fraction)
        np.testing.assert_allclose(values[down_whole + 1:], 0.0)

    def test_negative_price_only_devalues_capped_charge(self, params):
        curve = backward_update(MarginalValueCurve.constant(0.0, 1.0, 1001), -5.0, params)
        (up_whole, up_fraction), _ = segment_reach(params, 1001)
        edge = 1001 - up_whole - 1
        values = curve.segment_values
        np.testing.assert_allclose(values[:edge], 0.0)
        assert values[edge] == pytest.approx(-5.0 / 0.9 * up_fraction)
        np.testing.assert_allclose(values[edge + 1:], -5.0 / 0.9)

    def test_integral_matches_exact_one_period_optimum(self, params, rng):
        # Each segment averages the exact marginal, so V agrees at every boundary
        values = np.sort(rng.normal(30.0, 20.0, 200))[::-1]
        curve = MarginalValueCurve(values, 1.0)
        price = 45.0
        updated = backward_update(curve, price, params)
        oracle = _one_period_optimum(curve, price, params)
        cumulative = np.concatenate([[0.0], np.cumsum(updated.segment_values) / 200])
        np.testing.assert_allclose(cumulative, oracle - oracle[0], atol=1e-8)

    def test_idle_band_keeps_curve(self, params):
        curve = backward_update(MarginalValueCurve.constant(50.0, 1.0, 1001), 50.0, params)
        np.testing.assert_allclose(curve.segment_values, 50.0)

    def test_rejects_increasing_curve(self, params):
        with pytest.raises(PreconditionError):
            backward_update(MarginalValueCurve(np.array([1.0, 2.0]), 1.0), 30.0, params)

    def test_rejects_non_finite_price(self, params):
        with pytest.raises(PreconditionError):
            backward_update(MarginalValueCurve.constant(0.0, 1.0, 10), float("nan"), params)

    def test_preserves_monotonicity(self, params, rng):
        values = np.sort(rng.normal(30.0, 20.0, 501))[::-1]
        curve = MarginalValueCurve(values, 1.0)
        for price in rng.normal(30.0, 40.0, 20):
            curve = backward_update(curve, float(price), params)
            assert curve.is_non_increasing()


class TestGenerateSeries:
    def test_zero_horizon_is_terminal_curve(self, params):
        series = generate_curves(np.array([]), params, 11)
        assert series.horizon == 0
        np.testing.assert_array_equal(series.values, np.zeros((1, 11)))

    def test_empty_series_rejected(self, params):
        with pytest.raises(PriceDataError):
            generate_series(PriceSeries.from_arrays([]), params)

    def test_two_period_toy(self, toy_prices, toy_params):
        series = generate_series(toy_prices, toy_params, 100)
        np.testing.assert_allclose(series.values[2], 0.0)
        np.testing.assert_allclose(series.values[1, :50], 50.0)
        np.testing.assert_allclose(series.values[1, 50:], 0.0)
        np.testing.assert_allclose(series.values[0], 10.0)
        assert series.optimal_value(0.0) == pytest.approx(20.0)

    def test_store_segments(self, small_prices, params):
        full = generate_series(small_prices.slice(0, 100), params, 1000)
        stored = generate_series(small_prices.slice(0, 100), params, 1000, store_segments=50)
        assert stored.num_segments == 50
        np.testing.assert_allclose(stored.values, full.downsample(50).values)
        assert stored.origin_value == full.origin_value

    def test_value_bounds_and_concavity(self, small_prices, params):
        prices = small_prices.slice(0, 288)
        series = generate_series(prices, params, 201)
        series.check_concave()
        lower = min(0.0, float(prices.rtp.min()) / params.eta_charge)
        upper = max(0.0, float((prices.rtp.max() - params.marginal_cost) * params.eta_discharge))
        assert series.values.min() >= lower - 1e-9
        assert series.values.max() <= upper + 1e-9

    def test_constant_price_bound(self, params):
        series = generate_series(PriceSeries.from_arrays([30.0] * 50), params, 101)
        assert series.values.max() <= 30.0 / params.eta_charge


class TestPerfectForesight:
    def test_toy_profit(self, toy_prices, toy_params):
        assert perfect_foresight_profit(toy_prices, toy_params, 0.0, 100) == pytest.approx(20.0)

    def test_negative_prices_pay_to_charge(self):
        params = StorageParams(power_rating=0.5, eta_charge=1.0, eta_discharge=1.0, marginal_cost=0.0,
                               period_hours=1.0)
        prices = PriceSeries.from_arrays([-5.0] * 4, period_hours=1.0)
        assert perfect_foresight_profit(prices, params, 0.0, 100) == pytest.approx(5.0)

    def test_constant_prices_without_cost(self):
        params = StorageParams(eta_charge=1.0, eta_discharge=1.0, marginal_cost=0.0)
        assert perfect_foresight_profit(PriceSeries.from_arrays([30.0] * 24), params, 0.0, 100) \
            == pytest.approx(0.0, abs=1e-9)

    def test_block_size_does_not_change_profit(self, small_prices, aligned_params):
        prices = small_prices.slice(0, 300)
        reference = perfect_foresight_profit(prices, aligned_params, 0.3, 100)
        for block in (1, 7, 64):
            assert perfect_foresight_profit(prices, aligned_params, 0.3, 100, block) == pytest.approx(reference)

    def test_matches_value_function_when_aligned(self, small_prices, aligned_params):
        prices = small_prices.slice(0, 400)
        series = generate_series(prices, aligned_params, 100)
        for e_0 in (0.0, 0.48, 1.0):
            assert perfect_foresight_profit(prices, aligned_params, e_0, 100, 50) \
                == pytest.approx(series.optimal_value(e_0), rel=1e-8, abs=1e-8)

    def test_replays_hindsight_dispatch_with_fractional_reach(self, rng, random_factory):
        for _ in range(5):
            params = random_factory(rng)
            prices = PriceSeries.from_arrays(rng.normal(30.0, 25.0, 200))
            series = generate_series(prices, params, 1001)
            e_0 = float(rng.uniform(0.0, params.energy_capacity))
            state = run_backtest(prices, params, HindsightCurves(series), e_0)
            profit = perfect_foresight_profit(prices, params, e_0, 1001, 64)
            assert profit == pytest.approx(state.profit, rel=1e-12, abs=1e-9)
            assert profit >= series.optimal_value(e_0) - 1e-7 * (1.0 + abs(profit))

    def test_rejects_bad_initial_soc(self, toy_prices, toy_params):
        with pytest.raises(PreconditionError):
            perfect_foresight_profit(toy_prices, toy_params, 1.5, 100)

    def test_empty_series_rejected(self, params):
        with pytest.raises(PriceDataError):
            perfect_foresight_profit(PriceSeries.from_arrays([]), params)


class TestOracle:
    def test_zero_prices(self, params):
        profit, _ = oracle_dp(PriceSeries.from_arrays([0.0] * 12), params, 101, 11)
        assert profit == pytest.approx(0.0, abs=1e-12)

    def test_toy_profit(self, toy_prices, toy_params):
        profit, series = oracle_dp(toy_prices, toy_params, 101, 51)
        assert profit == pytest.approx(20.0)
        assert series.num_segments == 100

    def test_single_period_sell(self):
        params = StorageParams(power_rating=0.5, eta_charge=1.0, eta_discharge=1.0, marginal_cost=0.0,
                               period_hours=1.0)
        profit, _ = oracle_dp(PriceSeries.from_arrays([100.0], period_hours=1.0), params, 101, 51, e_0=1.0)
        assert profit == pytest.approx(50.0)

    def test_coarse_grid_warns(self, params):
        with pytest.warns(RuntimeWarning):
            oracle_dp(PriceSeries.from_arrays([10.0, 50.0]), params, 5, 5)

    def test_grid_too_small(self, params):
        with pytest.raises(DomainError):
            oracle_dp(PriceSeries.from_arrays([10.0]), params, 1, 5)

    def test_matches_analytic_recursion(self, rng, aligned_factory):
        for _ in range(10):
            params = aligned_factory(rng)
            prices = PriceSeries.from_arrays(rng.normal(30.0, 25.0, 36))
            series = generate_series(prices, params, 100)
            profit, oracle = oracle_dp(prices, params, 101, 11)
            assert profit == pytest.approx(series.optimal_value(0.0), rel=1e-9, abs=1e-9)
            assert oracle.origin_value == pytest.approx(series.origin_value, rel=1e-9, abs=1e-9)
            np.testing.assert_allclose(oracle.values, series.values, rtol=1e-7, atol=1e-6)

    def test_matches_recursion_with_fractional_reach(self, rng, random_factory):
        for _ in range(5):
            params = random_factory(rng)
            prices = PriceSeries.from_arrays(rng.normal(30.0, 25.0, int(rng.integers(10, 40))))
            series = generate_series(prices, params, 1000)
            e_0 = float(rng.uniform(0.0, params.energy_capacity))
            profit, oracle = oracle_dp(prices, params, 1001, 5, e_0)
            assert profit == pytest.approx(series.optimal_value(e_0), rel=1e-8, abs=1e-8)
            np.testing.assert_allclose(oracle.values, series.values, rtol=1e-7, atol=1e-6)


@pytest.mark.slow
def test_year_of_five_minute_prices_is_fast(params, rng):
    rtp = rng.normal(35.0, 15.0, 105_120)
    started = time.perf_counter()
    series = generate_curves(rtp, params, 1001, store_segments=50)
    assert time.perf_counter() - started < 60.0
    assert series.values.shape == (105_121, 50)
