"""
Baseline predictors and walk-forward backtesting.

Models are fitted on a leading training segment whose min-max scaler is
then frozen; every evaluation day t is predicted from the window ending
at day t - horizon, using nothing dated after that day. Metrics are
reported in price units; directional accuracy compares
sign(prediction - today) with sign(actual - today).
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.linear_model import LinearRegression, Ridge
from sklearn.metrics import mean_absolute_error, mean_squared_error

from backend.adversarial import (
    AdjusterModel,
    GanConfig,
    GanHistory,
    apply_adjustment,
    calibrate_readout,
    gan_train,
    residual_trajectories,
    trend_state,
)
from backend.errors import InputError, ParameterError
from backend.fdes import TrainConfig, init_network, train
from backend.market_data import (
    DEFAULT_WINDOW,
    PriceSeries,
    RollingWindowSample,
    Scaler,
    rolling_windows,
)

logger = logging.getLogger(__name__)

MIN_TRAIN_DAYS = 60
MIN_EVAL_DAYS = 10
BREAK_EVEN = 0.5


def predict_martingale(window) -> float:
    """Tomorrow's expected value is today's."""
    values = np.asarray(window, dtype=float)
    if values.size == 0:
        raise InputError("martingale prediction needs a non-empty window")
    return float(values.ravel()[-1])


class WeightedLinearPredictor:
    """
    Least-squares fit of the target on decay-weighted window components.

    Feature k is weight_k * window_k. With ridge = 0 ordinary least squares
    is used and a rank-deficient design falls back to the martingale; with
    ridge > 0 the L2 penalty shrinks low-weight (old) lags hardest.
    """

    def __init__(self, ridge: float = 0.0):
        if not np.isfinite(ridge) or ridge < 0:
            raise ParameterError(f"ridge penalty must be non-negative, got {ridge}")
        self.ridge = ridge
        self.model = None
        self.weights: Optional[np.ndarray] = None
        self.fallback = False
        self.warnings: List[str] = []

    def fit(self, samples: Sequence[RollingWindowSample]) -> "WeightedLinearPredictor":
        if not samples:
            raise InputError("weighted-linear fit needs training samples")
        width = samples[0].window.size
        if len(samples) < width + 1:
            raise InputError(f"weighted-linear fit needs at least {width + 1} samples, got {len(samples)}")

        self.weights = np.asarray(samples[0].weights, dtype=float)
        features = np.stack([s.window for s in samples]) * self.weights
        targets = np.array([s.target for s in samples])
        self.fallback = False
        self.warnings = []

        if self.ridge > 0:
            self.model = Ridge(alpha=self.ridge).fit(features, targets)
        else:
            self.model = LinearRegression().fit(features, targets)
            if self.model.rank_ < width:
                message = f"singular design (rank {self.model.rank_} < {width}); using martingale fallback"
                logger.warning(f"⚠️ Weighted-linear {message}")
                self.warnings.append(message)
                self.fallback = True
        return self

    def predict(self, window) -> float:
        if self.model is None:
            raise InputError("predictor has not been fitted")
        if self.fallback:
            return predict_martingale(window)
        values = np.asarray(window, dtype=float)
        return float(self.model.predict((values * self.weights)[None, :])[0])


def predict_weighted_linear(samples: Sequence[RollingWindowSample], window, ridge: float = 0.0) -> float:
    return WeightedLinearPredictor(ridge).fit(samples).predict(window)


class Strategy(ABC):
    """A one-day-ahead predictor in normalized units."""

    name: str = "strategy"

    def fit(self, samples: Sequence[RollingWindowSample]) -> None:
        pass

    @abstractmethod
    def predict(self, window: np.ndarray) -> float:
        ...

    @property
    def warnings(self) -> List[str]:
        return []


class MartingaleStrategy(Strategy):
    name = "martingale"

    def predict(self, window: np.ndarray) -> float:
        return predict_martingale(window)


class WeightedLinearStrategy(Strategy):
    name = "weighted_linear"

    def __init__(self, ridge: float = 0.0):
        self.predictor = WeightedLinearPredictor(ridge)

    def fit(self, samples: Sequence[RollingWindowSample]) -> None:
        self.predictor.fit(samples)

    def predict(self, window: np.ndarray) -> float:
        return self.predictor.predict(window)

    @property
    def warnings(self) -> List[str]:
        return self.predictor.warnings


def fit_adjuster(
    samples: Sequence[RollingWindowSample],
    config: GanConfig,
    scaler: Optional[Scaler] = None,
    pretrain: Optional[TrainConfig] = None,
) -> Tuple[AdjusterModel, GanHistory]:
    """
    Train an adjuster on the day-over-day moves of the training samples.

    Sample s (s >= W-1) seeds the generator with its window; its real
    trajectory is 0.5 plus the moves of samples s-W+1 .. s, i.e. the
    residuals of the martingale reference. With `pretrain`, the generator
    is first fitted to those trajectories by plain FDES backpropagation,
    then refined adversarially. The readout gain is then calibrated on
    every training sample and `config.blend` is stored with the model.
    """
    if not samples:
        raise InputError("adjuster training needs samples")
    width = samples[0].window.size
    if len(samples) < width:
        raise InputError(f"adjuster training needs at least {width} samples, got {len(samples)}")
    moves = np.array([s.target - predict_martingale(s.window) for s in samples])
    trajectories = residual_trajectories(moves, width)
    windows = np.stack([s.window for s in samples[width - 1:]])

    initial = None
    if pretrain is not None:
        start = init_network(
            width, config.layers, config.seed, config.sharpness, pretrain.trainable_sharpness, config.labels
        )
        fitted = train(start, [(q, t, 1.0) for q, t in zip(trend_state(windows, width), trajectories)], pretrain)
        initial = fitted.network
    model, history = gan_train(config, windows, trajectories, scaler, initial)
    every_window = np.stack([s.window for s in samples])
    return calibrate_readout(model, every_window, moves, config.blend), history


class AdjustedStrategy(Strategy):
    """
    Baseline plus the adjuster's deviation from its neutral output.

    Built from a GAN config, the strategy owns its adjuster and retrains
    it on every fit, walk-forward refits included; a supplied adjuster
    stays frozen.
    """

    name = "adjusted"

    def __init__(
        self,
        baseline: Strategy,
        adjuster: Optional[AdjusterModel] = None,
        gan_config: Optional[GanConfig] = None,
        pretrain: Optional[TrainConfig] = None,
    ):
        if adjuster is None and gan_config is None:
            raise ParameterError("adjusted strategy needs a trained adjuster or a GAN config")
        self.baseline = baseline
        self.adjuster = adjuster
        self.gan_config = gan_config
        self.pretrain = pretrain
        self.trains_adjuster = adjuster is None
        self.history: Optional[GanHistory] = None
        self._neutral: Optional[float] = None

    def fit(self, samples: Sequence[RollingWindowSample]) -> None:
        self.baseline.fit(samples)
        if self.trains_adjuster:
            self.adjuster, self.history = fit_adjuster(samples, self.gan_config, pretrain=self.pretrain)
        self._neutral = self.adjuster.neutral

    def predict(self, window: np.ndarray) -> float:
        if self.adjuster is None:
            raise InputError("adjusted strategy has not been fitted")
        if self._neutral is None:
            self._neutral = self.adjuster.neutral
        baseline = self.baseline.predict(window)
        return apply_adjustment(baseline, self.adjuster.adjust(window, baseline), self._neutral)

    @property
    def warnings(self) -> List[str]:
        return self.baseline.warnings


def build_baseline(name: str, ridge: float = 0.0) -> Strategy:
    if name == MartingaleStrategy.name:
        return MartingaleStrategy()
    if name == WeightedLinearStrategy.name:
        return WeightedLinearStrategy(ridge)
    raise ParameterError(f"unknown baseline {name!r}; expected martingale or weighted_linear")


@dataclass(frozen=True)
class BacktestConfig:
    train_days: int = 250
    window: int = DEFAULT_WINDOW
    horizon: int = 1
    scheme: str = "linear"
    rate: float = 0.8
    refit_interval: int = 0

    def __post_init__(self):
        if self.train_days < MIN_TRAIN_DAYS:
            raise InputError(f"training segment needs at least {MIN_TRAIN_DAYS} days, got {self.train_days}")
        if self.refit_interval < 0:
            raise ParameterError(f"refit_interval must be >= 0, got {self.refit_interval}")
        if self.window < 1 or self.horizon < 1:
            raise ParameterError("window and horizon must be >= 1")


@dataclass(frozen=True)
class StrategyMetrics:
    rmse: float
    mae: float
    directional_accuracy: float
    count: int

    @property
    def directional_stderr(self) -> float:
        """Binomial standard error of a fair coin over `count` days."""
        return float(np.sqrt(BREAK_EVEN * (1 - BREAK_EVEN) / self.count))


@dataclass
class BacktestReport:
    ticker: str
    records: pd.DataFrame
    metrics: Dict[str, StrategyMetrics]
    config: Dict[str, str] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def strategies(self) -> List[str]:
        return list(self.metrics)

    def metrics_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(name, m.rmse, m.mae, m.directional_accuracy, m.count) for name, m in self.metrics.items()],
            columns=["strategy", "rmse", "mae", "directional_accuracy", "count"],
        )


def compute_metrics(records: pd.DataFrame, strategies: Sequence[str]) -> Dict[str, StrategyMetrics]:
    """Price-unit metrics from per-day records (date, previous, actual, <strategy>...)."""
    if records.empty:
        raise InputError("no evaluated days")
    actual = records["actual"].to_numpy(dtype=float)
    previous = records["previous"].to_numpy(dtype=float)
    truth = np.sign(actual - previous)
    metrics = {}
    for name in strategies:
        predicted = records[name].to_numpy(dtype=float)
        metrics[name] = StrategyMetrics(
            rmse=float(np.sqrt(mean_squared_error(actual, predicted))),
            mae=float(mean_absolute_error(actual, predicted)),
            directional_accuracy=float(np.mean(np.sign(predicted - previous) == truth)),
            count=int(actual.size),
        )
    return metrics


def backtest(
    series: PriceSeries,
    strategies: Sequence[Strategy],
    split: BacktestConfig = BacktestConfig(),
    config_echo: Optional[Dict[str, str]] = None,
) -> BacktestReport:
    """
    Walk-forward one-day-ahead evaluation of each strategy.

    A normalized prediction p for day t becomes the price
    close[t-h] + (p - v[t-h]) * span, i.e. the predicted change is
    denormalized and added to the last known close.
    """
    if not strategies:
        raise InputError("backtest needs at least one strategy")
    names = [s.name for s in strategies]
    if len(set(names)) != len(names):
        raise ParameterError(f"strategy names must be unique, got {names}")

    total = len(series)
    eval_days = total - split.train_days
    if eval_days < MIN_EVAL_DAYS:
        raise InputError(
            f"{series.ticker}: {total} days leave {max(eval_days, 0)} for evaluation after "
            f"{split.train_days} training days; need at least {MIN_EVAL_DAYS}"
        )

    scaler = Scaler.fit(series.closes[:split.train_days])
    values = scaler.transform(series.closes)

    def samples_until(end: int) -> List[RollingWindowSample]:
        return rolling_windows(values[:end], split.window, split.horizon, split.scheme, split.rate)

    train_samples = samples_until(split.train_days)
    for strategy in strategies:
        strategy.fit(train_samples)
    logger.info(
        f"Backtesting {series.ticker}: {split.train_days} training days, {eval_days} evaluation days, "
        f"strategies {', '.join(names)}"
    )

    rows = []
    for t in range(split.train_days, total):
        offset = t - split.train_days
        if split.refit_interval and offset and offset % split.refit_interval == 0:
            refit_samples = samples_until(t)
            for strategy in strategies:
                strategy.fit(refit_samples)
            logger.debug(f"Refitted strategies on {len(refit_samples)} samples before day {t}")

        today = t - split.horizon
        window = values[today - split.window + 1:today + 1]
        row = {
            "date": np.datetime_as_string(series.dates[t], unit="D"),
            "previous": float(series.closes[today]),
            "actual": float(series.closes[t]),
        }
        for strategy in strategies:
            predicted = strategy.predict(window)
            row[strategy.name] = float(series.closes[today] + (predicted - values[today]) * scaler.span)
        rows.append(row)

    records = pd.DataFrame(rows, columns=["date", "previous", "actual", *names])
    metrics = compute_metrics(records, names)
    warnings = [w for strategy in strategies for w in strategy.warnings]
    for strategy in strategies:
        if isinstance(strategy, AdjustedStrategy) and strategy.adjuster.scaler is not None:
            if strategy.adjuster.scaler != scaler:
                message = (
                    f"adjuster was trained with scaler ({strategy.adjuster.scaler.minimum:g}, "
                    f"{strategy.adjuster.scaler.maximum:g}) but this backtest uses "
                    f"({scaler.minimum:g}, {scaler.maximum:g})"
                )
                logger.warning(message)
                warnings.append(message)

    for name, m in metrics.items():
        logger.info(
            f"{series.ticker} {name}: RMSE={m.rmse:.6g} MAE={m.mae:.6g} "
            f"directional accuracy={m.directional_accuracy:.3f}"
        )
    return BacktestReport(series.ticker, records, metrics, dict(config_echo or {}), warnings)
