"""Storage asset description, dispatch decisions and the per-period feasibility set."""
from dataclasses import asdict, dataclass, fields
from datetime import datetime
from typing import Any, Dict, Tuple

from utils.config_validator import ConfigValidator
from utils.exceptions import DomainError

# Absolute slack, in MWh, for SoC balance and bound checks
SOC_TOLERANCE = 1e-9

_STORAGE_VALIDATORS = {
    "power_rating": ConfigValidator.is_positive_number,
    "energy_capacity": ConfigValidator.is_positive_number,
    "eta_charge": ConfigValidator.create_range_validator(0.0, 1.0, include_min=False),
    "eta_discharge": ConfigValidator.create_range_validator(0.0, 1.0, include_min=False),
    "marginal_cost": ConfigValidator.is_non_negative_number,
    "period_hours": ConfigValidator.is_positive_number,
}


@dataclass(frozen=True)
class StorageParams:
    """
    Physical description of a storage asset.

    power_rating is in MW, energy_capacity in MWh, marginal_cost in $/MWh discharged
    and period_hours is the market period length (1/12 for five-minute markets).
    Charge and discharge amounts are expressed as MWh per period, so the power
    bound becomes ``max_energy_per_period = power_rating * period_hours``.
    """

    power_rating: float = 0.5
    energy_capacity: float = 1.0
    eta_charge: float = 0.9
    eta_discharge: float = 0.9
    marginal_cost: float = 10.0
    period_hours: float = 1.0 / 12.0

    def __post_init__(self) -> None:
        ConfigValidator.validate(asdict(self), [], _STORAGE_VALIDATORS)

    @property
    def max_energy_per_period(self) -> float:
        return self.power_rating * self.period_hours

    @property
    def duration_hours(self) -> float:
        return self.energy_capacity / self.power_rating

    @property
    def charge_shift(self) -> float:
        """SoC gained by one full period of charging."""
        return self.eta_charge * self.max_energy_per_period

    @property
    def discharge_shift(self) -> float:
        """SoC spent by one full period of discharging."""
        return self.max_energy_per_period / self.eta_discharge

    def thresholds(self, price: float) -> Tuple[float, float]:
        """
        Return (charge threshold, discharge threshold) in $/MWh of stored energy.

        Storage charges where the marginal value exceeds price/eta_charge and discharges
        where it falls below (price - c) * eta_discharge. Discharging is disabled at
        negative prices, encoded as a threshold of -inf.
        """
        charge = price / self.eta_charge
        discharge = (price - self.marginal_cost) * self.eta_discharge if price >= 0 else float("-inf")
        return charge, discharge

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StorageParams":
        names = {f.name for f in fields(cls)}
        ConfigValidator.validate(data, [], _STORAGE_VALIDATORS, allowed_keys=names)
        return cls(**{key: float(value) for key, value in data.items()})

    @classmethod
    def from_duration(cls, duration_hours: float, power_rating: float = 0.5, **kwargs: float) -> "StorageParams":
        return cls(power_rating=power_rating, energy_capacity=power_rating * duration_hours, **kwargs)


@dataclass(frozen=True)
class Dispatch:
    """One period's decision: MWh charged, MWh discharged and SoC at period end."""

    charge: float
    discharge: float
    soc_end: float

    @property
    def net_output(self) -> float:
        return self.discharge - self.charge


@dataclass(frozen=True)
class PriceSignal:
    """Price information available when deciding one period."""

    rtp: float
    dap_day: Tuple[float, ...]
    timestamp: datetime

    def __post_init__(self) -> None:
        if len(self.dap_day) != 24:
            raise DomainError(f"dap_day must hold 24 hourly prices, got {len(self.dap_day)}")


def step_soc(params: StorageParams, e_prev: float, charge: float, discharge: float) -> float:
    """SoC after one period; bounds are the caller's concern."""
    return e_prev - discharge / params.eta_discharge + charge * params.eta_charge


def feasible(params: StorageParams, e_prev: float, dispatch: Dispatch, price: float) -> bool:
    """Check a dispatch against power, balance, capacity and negative-price constraints."""
    cap = params.max_energy_per_period + SOC_TOLERANCE
    if not (-SOC_TOLERANCE <= dispatch.charge <= cap and -SOC_TOLERANCE <= dispatch.discharge <= cap):
        return False
    if price < 0 and dispatch.discharge > 0:
        return False
    if abs(step_soc(params, e_prev, dispatch.charge, dispatch.discharge) - dispatch.soc_end) > SOC_TOLERANCE:
        return False
    return -SOC_TOLERANCE <= dispatch.soc_end <= params.energy_capacity + SOC_TOLERANCE
