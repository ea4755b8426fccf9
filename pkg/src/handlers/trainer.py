import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from models.prices import PriceSeries
from models.storage import StorageParams
from models.value_curve import ValueFunctionSeries, is_non_increasing
from services.controller import ModelCurves, run_backtest
from services.features import STD_FLOOR, FeatureSpec, build_feature_matrix, fit_normalization, normalize
from services.mlp import AdamState, MlpModel, adam_update, init_model, loss_and_grad_normalized
from utils.config_validator import ConfigValidator
from utils.exceptions import DimensionMismatchError, NumericError, PreconditionError, TrainingDivergedError
from utils.logger import Logger

# (RTP lags, DAP values, hidden width, epochs) per predefined setting
TABLE_SETTINGS = {
    1: (36, 0, 60, 10),
    2: (288, 0, 256, 20),
    3: (36, 24, 60, 10),
    4: (288, 24, 256, 20),
}

SEED_LOG_COLUMNS = ["seed", "status", "final_loss", "training_profit", "test_profit", "selected"]
EPOCH_LOG_COLUMNS = ["seed", "epoch", "loss"]


@dataclass(frozen=True)
class TrainConfig:
    """Network shape, optimiser settings and seed count for one training run."""

    n_rtp_lags: int = 36
    n_dap: int = 24
    hidden: int = 60
    epochs: int = 10
    setting: Optional[int] = 3
    n_seeds: int = 10
    label_segments: int = 50
    batch_size: int = 512
    learning_rate: float = 1e-3
    normalize: bool = True
    max_workers: int = 1
    e_0: float = 0.0

    def __post_init__(self) -> None:
        ConfigValidator.validate(asdict(self), [], {
            "n_rtp_lags": ConfigValidator.is_positive_integer,
            "n_dap": ConfigValidator.create_choice_validator((0, 24)),
            "hidden": ConfigValidator.is_positive_integer,
            "epochs": ConfigValidator.is_positive_integer,
            "setting": lambda value: value is None or value in TABLE_SETTINGS,
            "n_seeds": ConfigValidator.is_positive_integer,
            "label_segments": ConfigValidator.is_positive_integer,
            "batch_size": ConfigValidator.is_positive_integer,
            "learning_rate": ConfigValidator.is_positive_number,
            "normalize": ConfigValidator.is_boolean,
            "max_workers": ConfigValidator.is_positive_integer,
            "e_0": ConfigValidator.is_non_negative_number,
        })
        if self.setting is not None and TABLE_SETTINGS[self.setting] != (
                self.n_rtp_lags, self.n_dap, self.hidden, self.epochs):
            raise DimensionMismatchError(
                f"setting {self.setting} fixes (lags, dap, hidden, epochs) = {TABLE_SETTINGS[self.setting]}",
                data={"setting": self.setting})

    @classmethod
    def from_setting(cls, setting: int, **overrides: Any) -> "TrainConfig":
        """Config for one of the predefined settings; other fields may be overridden."""
        if setting not in TABLE_SETTINGS:
            raise PreconditionError(f"unknown setting {setting}; choose one of {sorted(TABLE_SETTINGS)}")
        lags, dap, hidden, epochs = TABLE_SETTINGS[setting]
        return cls(n_rtp_lags=lags, n_dap=dap, hidden=hidden, epochs=epochs, setting=setting, **overrides)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        ConfigValidator.validate(data, [], allowed_keys={f.name for f in fields(cls)})
        data = dict(data)
        if data.get("setting") is not None and not {"n_rtp_lags", "n_dap", "hidden", "epochs"} & data.keys():
            return cls.from_setting(data.pop("setting"), **data)
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def setting_label(self) -> str:
        return str(self.setting) if self.setting is not None else "custom"

    def feature_spec(self, period_hours: float) -> FeatureSpec:
        return FeatureSpec(self.n_rtp_lags, self.n_dap, period_hours=period_hours)


@dataclass(frozen=True, eq=False)
class TrainingDataset:
    """Raw feature rows and $/MWh label curves; row i belongs to period ``periods[i]``."""

    features: np.ndarray
    labels: np.ndarray
    periods: np.ndarray
    feature_spec: FeatureSpec

    def __len__(self) -> int:
        return int(self.features.shape[0])


@dataclass(frozen=True, eq=False)
class SeedResult:
    seed: int
    model: Optional[MlpModel]
    training_profit: float
    epoch_losses: List[float] = field(default_factory=list)
    diverged_epoch: Optional[int] = None

    @property
    def diverged(self) -> bool:
        return self.diverged_epoch is not None


@dataclass(frozen=True, eq=False)
class SelectionResult:
    best: SeedResult
    seed_log: pd.DataFrame
    epoch_log: pd.DataFrame

    @property
    def model(self) -> MlpModel:
        assert self.best.model is not None
        return self.best.model


def build_dataset(prices: PriceSeries, value_series: ValueFunctionSeries, spec: FeatureSpec,
                  label_segments: int = 50) -> TrainingDataset:
    """
    Pair each period's features with the down-sampled curve valuing its end SoC.

    Args:
        prices (PriceSeries): Prices the value series was generated from.
        value_series (ValueFunctionSeries): Hindsight curves at any resolution of at least ``label_segments``.
        spec (FeatureSpec): Look-back window and day-ahead switch; statistics are ignored.
        label_segments (int): Label resolution.

    Returns:
        TrainingDataset: One sample per period k >= n_rtp_lags, labelled with v_{k+1}.

    Raises:
        PreconditionError: If the horizons differ, no period has enough history or a label
            is not non-increasing.
    """
    if value_series.horizon != len(prices):
        raise PreconditionError(
            f"value series covers {value_series.horizon} periods but prices have {len(prices)}",
            data={"series_horizon": value_series.horizon, "periods": len(prices)},
        )
    lags = spec.n_rtp_lags
    if len(prices) <= lags:
        raise PreconditionError(f"{len(prices)} periods leave no sample after a {lags}-period look-back")
    labels = value_series.downsample(label_segments).values[lags + 1:]
    if not is_non_increasing(labels, 1e-9):
        raise PreconditionError("training labels must be non-increasing in SoC")
    base = FeatureSpec(spec.n_rtp_lags, spec.n_dap, period_hours=prices.period_hours)
    features = build_feature_matrix(prices, base, lags, len(prices), normalized=False)
    return TrainingDataset(features, np.array(labels), np.arange(lags, len(prices)), base)


def _target_statistics(labels: np.ndarray, enabled: bool) -> Tuple[np.ndarray, np.ndarray]:
    if not enabled or labels.shape[0] < 2:
        return np.zeros(labels.shape[1]), np.ones(labels.shape[1])
    std = labels.std(axis=0)
    return labels.mean(axis=0), np.where(std < STD_FLOOR, 1.0, std)


class ModelTrainer:
    """
    Trains value-curve predictors and picks the seed with the best training-period profit.

    Selection uses arbitrage profit on the training prices, not the fit loss; the loss
    is only logged.
    """

    def __init__(self, config: TrainConfig, params: StorageParams, logger: Optional[logging.Logger] = None):
        """
        Args:
            config (TrainConfig): Network and optimiser settings.
            params (StorageParams): Asset used to backtest each trained model.
            logger (Optional[logging.Logger]): Defaults to the shared "Trainer" logger.
        """
        self.config = config
        self.params = params
        self.logger = logger or Logger.get_instance("Trainer")

    def _fit(self, dataset: TrainingDataset, seed: int) -> SeedResult:
        config = self.config
        if len(dataset) == 0:
            raise PreconditionError("training dataset is empty")
        spec = dataset.feature_spec
        if config.normalize and len(dataset) >= 2:
            spec = fit_normalization(dataset.features, spec)
        target_mean, target_std = _target_statistics(dataset.labels, config.normalize)
        x = normalize(spec, dataset.features)
        y = (dataset.labels - target_mean) / target_std

        model = init_model(spec, config.hidden, dataset.labels.shape[1], seed, target_mean, target_std)
        params = model.parameters
        state = AdamState.zeros_like(params, learning_rate=config.learning_rate)
        rng = np.random.default_rng([seed, 1])
        samples = len(dataset)
        losses: List[float] = []
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(samples)
            total = 0.0
            for start in range(0, samples, config.batch_size):
                batch = order[start:start + config.batch_size]
                loss, grads = loss_and_grad_normalized(params, x[batch], y[batch])
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"loss became {loss} in epoch {epoch}", epoch=epoch, seed=seed)
                params, state = adam_update(params, state, grads)
                total += loss * batch.size
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingDivergedError(f"parameters became non-finite in epoch {epoch}", epoch=epoch, seed=seed)
            losses.append(total / samples)
            self.logger.debug("Epoch finished", extra={"fields": {"seed": seed, "epoch": epoch, "loss": losses[-1]}})
        return SeedResult(seed, model.with_parameters(params), float("nan"), losses)

    def train_one(self, dataset: TrainingDataset, prices: PriceSeries, seed: int) -> SeedResult:
        """
        Train one model and backtest it on the training prices.

        Args:
            dataset (TrainingDataset): Samples built from ``prices``.
            prices (PriceSeries): Training-period prices for the profit backtest.
            seed (int): Initialisation and shuffling seed.

        Returns:
            SeedResult: The model, its training-period profit and per-epoch losses.

        Raises:
            TrainingDivergedError: If the loss or any parameter becomes non-finite.
        """
        fitted = self._fit(dataset, seed)
        assert fitted.model is not None
        model = MlpModel(fitted.model.weights, fitted.model.biases, fitted.model.feature_spec,
                         fitted.model.target_mean, fitted.model.target_std, seed,
                         {"zone": prices.zone, "setting": self.config.setting_label})
        profit = run_backtest(prices, self.params, ModelCurves(model), self.config.e_0).profit
        self.logger.info("Seed trained", extra={"fields": {
            "seed": seed, "final_loss": fitted.epoch_losses[-1], "training_profit": profit}})
        return SeedResult(seed, model, profit, fitted.epoch_losses)

    def _train_or_record(self, dataset: TrainingDataset, prices: PriceSeries, seed: int) -> SeedResult:
        try:
            return self.train_one(dataset, prices, seed)
        except TrainingDivergedError as exc:
            self.logger.warning("Seed diverged", extra={"fields": {"seed": seed, "epoch": exc.epoch}})
            return SeedResult(seed, None, float("nan"), [], exc.epoch)

    def _test_profits(self, results: List[SeedResult], test_prices: Optional[PriceSeries]) -> Dict[int, float]:
        if test_prices is None:
            return {}
        profits = {r.seed: run_backtest(test_prices, self.params, ModelCurves(r.model), self.config.e_0).profit
                   for r in results if r.model is not None}
        ranked = pd.DataFrame([(r.training_profit, profits[r.seed]) for r in results if r.seed in profits],
                              columns=["training_profit", "test_profit"])
        correlation = ranked["training_profit"].corr(ranked["test_profit"]) if len(ranked) > 1 else float("nan")
        self.logger.info("Backtested every seed on the test window", extra={"fields": {
            "periods": len(test_prices), "seeds": len(profits), "profit_correlation": correlation}})
        return profits

    def train_select(self, dataset: TrainingDataset, prices: PriceSeries,
                     test_prices: Optional[PriceSeries] = None) -> SelectionResult:
        """
        Train seeds 0..n_seeds-1 and keep the one with the highest training profit.

        Seeds may run in a process pool; the reduction always walks seeds in order, so
        the lower seed wins a tie whatever the worker count. ``test_prices`` only adds
        each seed's test profit to the seed log; it never affects the selection.

        Raises:
            NumericError: If every seed diverges.
        """
        seeds = list(range(self.config.n_seeds))
        if self.config.max_workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=min(self.config.max_workers, len(seeds))) as pool:
                results = list(pool.map(_train_seed, [(self.config, self.params, dataset, prices, s) for s in seeds]))
        else:
            results = [self._train_or_record(dataset, prices, seed) for seed in seeds]

        best: Optional[SeedResult] = None
        for result in results:
            if not result.diverged and (best is None or result.training_profit > best.training_profit):
                best = result
        if best is None:
            raise NumericError(f"all {len(seeds)} seeds diverged", data={"seeds": seeds})
        test_profits = self._test_profits(results, test_prices)

        seed_log = pd.DataFrame([{
            "seed": r.seed,
            "status": "diverged" if r.diverged else "ok",
            "final_loss": r.epoch_losses[-1] if r.epoch_losses else float("nan"),
            "training_profit": r.training_profit,
            "test_profit": test_profits.get(r.seed, float("nan")),
            "selected": r.seed == best.seed,
        } for r in results], columns=SEED_LOG_COLUMNS)
        epoch_log = pd.DataFrame([{"seed": r.seed, "epoch": epoch, "loss": loss}
                                  for r in results for epoch, loss in enumerate(r.epoch_losses, start=1)],
                                 columns=EPOCH_LOG_COLUMNS)
        self.logger.info("Selected model", extra={"fields": {
            "seed": best.seed, "training_profit": best.training_profit, "seeds": len(seeds)}})
        return SelectionResult(best, seed_log, epoch_log)


def _train_seed(job: tuple) -> SeedResult:
    config, params, dataset, prices, seed = job
    return ModelTrainer(config, params)._train_or_record(dataset, prices, seed)


def write_training_logs(result: SelectionResult, seed_log_path: Union[str, Path],
                        epoch_log_path: Optional[Union[str, Path]] = None) -> None:
    result.seed_log.to_csv(seed_log_path, index=False, float_format="%.17g")
    if epoch_log_path is not None:
        result.epoch_log.to_csv(epoch_log_path, index=False, float_format="%.17g")
