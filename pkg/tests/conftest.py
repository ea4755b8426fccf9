from typing import Callable

import numpy as np
import pytest

from models.prices import PriceSeries
from models.storage import StorageParams
from services.price_loader import synth_prices

ALIGNED_SEGMENTS = 100


@pytest.fixture
def params() -> StorageParams:
    return StorageParams()


@pytest.fixture
def aligned_params() -> StorageParams:
    """One period moves SoC by exactly 16 segments charging and 25 discharging at K=100."""
    return StorageParams(power_rating=2.4, energy_capacity=1.0, eta_charge=0.8, eta_discharge=0.8,
                         marginal_cost=5.0)


def make_aligned_params(rng: np.random.Generator, num_segments: int = ALIGNED_SEGMENTS) -> StorageParams:
    """Random asset whose per-period SoC reach is a whole number of segments."""
    capacity = float(rng.uniform(0.5, 2.0))
    width = capacity / num_segments
    if rng.random() < 0.5:
        eta = 1.0
        energy = int(rng.integers(1, 41)) * width
    else:
        eta = 0.8
        energy = int(rng.choice([16, 32])) * width / eta
    return StorageParams(power_rating=energy * 12.0, energy_capacity=capacity, eta_charge=eta,
                         eta_discharge=eta, marginal_cost=float(rng.uniform(0.0, 20.0)))


@pytest.fixture
def aligned_factory() -> Callable[[np.random.Generator], StorageParams]:
    return make_aligned_params


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_prices() -> PriceSeries:
    """Three days of five-minute synthetic prices with spikes and negative prices."""
    return synth_prices(seed=7, days=3)


@pytest.fixture
def toy_prices() -> PriceSeries:
    return PriceSeries.from_arrays([10.0, 50.0], period_hours=1.0)


@pytest.fixture
def toy_params() -> StorageParams:
    return StorageParams(power_rating=0.5, energy_capacity=1.0, eta_charge=1.0, eta_discharge=1.0,
                         marginal_cost=0.0, period_hours=1.0)


def make_random_params(rng: np.random.Generator) -> StorageParams:
    """Random asset with no relation between its per-period reach and any grid."""
    return StorageParams(power_rating=float(rng.uniform(0.1, 2.0)), energy_capacity=float(rng.uniform(0.5, 4.0)),
                         eta_charge=float(rng.uniform(0.7, 1.0)), eta_discharge=float(rng.uniform(0.7, 1.0)),
                         marginal_cost=float(rng.uniform(0.0, 20.0)))


@pytest.fixture
def random_factory() -> Callable[[np.random.Generator], StorageParams]:
    return make_random_params
