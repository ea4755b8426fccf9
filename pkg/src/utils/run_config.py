"""
Run configuration: asset, training, schema and synthetic-profile settings plus paths.

A YAML file supplies the base values and command-line flags override them. The file
form is the ``to_dict`` layout::

    storage: {power_rating: 0.5, energy_capacity: 1.0, ...}
    train: {setting: 3, n_seeds: 10, ...}
    schema: {timestamp_column: timestamp, price_column: price, ...}
    synth: {base_price: 35.0, ...}
    e_0: 0.0
    segments: 1001
    store_segments: null
    seed: 0
    zone: ""
    test_start: null
    test_end: null
    paths: {rtp: prices.csv, dap: dap.csv, ...}

The test window selects the prices on which training also backtests every seed;
it reads test_rtp and test_dap when given and the training files otherwise.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import yaml

from handlers.trainer import TrainConfig
from models.storage import StorageParams
from services.price_loader import PriceSchema, SynthProfile
from utils.config_validator import ConfigValidator
from utils.exceptions import ConfigurationError, FileOperationError

PATH_KEYS = ("rtp", "dap", "values", "model", "hindsight", "out", "dispatch_log", "seed_log", "epoch_log",
             "dap_out", "test_rtp", "test_dap")
_TOP_LEVEL_KEYS = {"storage", "train", "schema", "synth", "e_0", "segments", "store_segments", "seed", "zone",
                   "test_start", "test_end", "paths"}


@dataclass(frozen=True)
class RunConfig:
    storage: StorageParams = field(default_factory=StorageParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    schema: PriceSchema = field(default_factory=PriceSchema)
    synth: SynthProfile = field(default_factory=SynthProfile)
    e_0: float = 0.0
    segments: int = 1001
    store_segments: Optional[int] = None
    seed: int = 0
    zone: str = ""
    test_start: Optional[str] = None
    test_end: Optional[str] = None
    paths: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ConfigValidator.validate({"e_0": self.e_0, "segments": self.segments, "seed": self.seed,
                                  "store_segments": self.store_segments, "paths": self.paths}, [], {
            "e_0": ConfigValidator.create_range_validator(0.0, self.storage.energy_capacity),
            "segments": ConfigValidator.is_positive_integer,
            "seed": lambda value: isinstance(value, int) and not isinstance(value, bool) and value >= 0,
            "store_segments": lambda value: value is None or (
                ConfigValidator.is_positive_integer(value) and value <= self.segments),
        })
        ConfigValidator.validate(self.paths, [], allowed_keys=PATH_KEYS)
        if not math.isclose(self.storage.period_hours, self.schema.period_hours, rel_tol=1e-9):
            raise ConfigurationError(
                f"storage period of {self.storage.period_hours} h disagrees with the {self.schema.period_minutes}-minute "
                "price grid", data={"period_hours": self.storage.period_hours})

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        ConfigValidator.validate(data, [], allowed_keys=_TOP_LEVEL_KEYS)
        storage = StorageParams.from_dict(data.get("storage") or {})
        train = TrainConfig.from_dict(data.get("train") or {})
        schema = PriceSchema.from_dict(data.get("schema") or {})
        synth = SynthProfile.from_dict(data.get("synth") or {})
        paths = {key: str(value) for key, value in (data.get("paths") or {}).items() if value is not None}
        scalar_keys = ("e_0", "segments", "store_segments", "seed", "zone", "test_start", "test_end")
        scalars = {key: data[key] for key in scalar_keys if key in data}
        if "e_0" in scalars:
            scalars["e_0"] = float(scalars["e_0"])
        # YAML reads bare dates as date objects
        for key in ("test_start", "test_end"):
            if scalars.get(key) is not None:
                scalars[key] = str(scalars[key])
        return cls(storage=storage, train=train, schema=schema, synth=synth, paths=paths, **scalars)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "storage": self.storage.to_dict(),
            "train": self.train.to_dict(),
            "schema": self.schema.to_dict(),
            "synth": self.synth.to_dict(),
            "e_0": self.e_0,
            "segments": self.segments,
            "store_segments": self.store_segments,
            "seed": self.seed,
            "zone": self.zone,
            "test_start": self.test_start,
            "test_end": self.test_end,
            "paths": dict(sorted(self.paths.items())),
        }

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileOperationError(f"config file not found: {path}", data={"path": str(path)})
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"config file {path} must hold a mapping")
        return cls.from_dict(data)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")

    def with_overrides(self, storage: Optional[Dict[str, Any]] = None, train: Optional[Dict[str, Any]] = None,
                       schema: Optional[Dict[str, Any]] = None, paths: Optional[Dict[str, Any]] = None,
                       **scalars: Any) -> "RunConfig":
        """Apply flag values on top of this config; None means the flag was not given."""
        def merged(base: Dict[str, Any], extra: Optional[Dict[str, Any]]) -> Dict[str, Any]:
            return {**base, **{k: v for k, v in (extra or {}).items() if v is not None}}

        data = self.to_dict()
        data["storage"] = merged(data["storage"], storage)
        train_overrides = {k: v for k, v in (train or {}).items() if v is not None}
        if "setting" in train_overrides:
            # A new setting replaces the network shape of the old one
            for key in ("n_rtp_lags", "n_dap", "hidden", "epochs"):
                data["train"].pop(key, None)
        data["train"] = merged(data["train"], train_overrides)
        data["schema"] = merged(data["schema"], schema)
        data["paths"] = merged(data["paths"], paths)
        data.update({k: v for k, v in scalars.items() if v is not None})
        return RunConfig.from_dict(data)

    @property
    def has_test_window(self) -> bool:
        return any(value is not None for value in (self.test_start, self.test_end, self.path("test_rtp")))

    def path(self, key: str) -> Optional[Path]:
        value = self.paths.get(key)
        return Path(value) if value else None

    def require(self, key: str) -> Path:
        path = self.path(key)
        if path is None:
            raise ConfigurationError(f"missing required path '--{key.replace('_', '-')}'", data={"key": key})
        return path

    def validate_paths(self, inputs: Iterable[str] = (), outputs: Iterable[str] = ()) -> None:
        """Inputs must exist; outputs need an existing parent directory."""
        for key in inputs:
            path = self.path(key)
            if path is not None and not path.is_file():
                raise FileOperationError(f"input file not found: {path}", data={"key": key, "path": str(path)})
        for key in outputs:
            path = self.path(key)
            if path is not None and not path.resolve().parent.is_dir():
                raise FileOperationError(f"output directory does not exist: {path.parent}",
                                         data={"key": key, "path": str(path)})
