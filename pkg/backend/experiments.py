"""
Oracle suites and end-to-end experiments on synthetic data.
"""

import logging
from dataclasses import dataclass, replace
from itertools import product
from typing import Callable, List, Optional, Sequence

import numpy as np

from backend.adversarial import GanConfig, discriminator_accuracy, residual_trajectories
from backend.backtest import (
    AdjustedStrategy,
    BacktestConfig,
    StrategyMetrics,
    WeightedLinearStrategy,
    backtest,
    fit_adjuster,
)
from backend.fdes import (
    FdesNetwork,
    GradientSet,
    backward,
    compose_exact,
    compose_smooth,
    finite_diff_gradients,
    forward,
    init_network,
    relative_error,
)
from backend.market_data import Scaler, rolling_windows
from backend.seeding import derive_seed, get_rng
from backend.synthetic import EventMarketParams, RecoveryConfig, RecoveryResult, event_market, recovery_experiment

logger = logging.getLogger(__name__)

ORACLE_DIMENSIONS = (2, 4, 8)
ORACLE_DEPTHS = (1, 2, 4)
ORACLE_SHARPNESS = (1.0, 5.0, 20.0)

# frequent, slowly fading drift events and a short training segment
EFFICACY_MARKET = EventMarketParams(steps=500, event_rate=0.05, decay=0.99)
EFFICACY_SPLIT = BacktestConfig(train_days=150)

GradientFn = Callable[[FdesNetwork, np.ndarray, np.ndarray], GradientSet]


def analytic_gradients(net: FdesNetwork, q0, target) -> GradientSet:
    return backward(net, forward(net, q0), target)


@dataclass(frozen=True)
class OracleCase:
    index: int
    dimension: int
    depth: int
    sharpness: float
    error: float


@dataclass(frozen=True)
class OracleReport:
    cases: List[OracleCase]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(case.error for case in self.cases)

    @property
    def failures(self) -> List[OracleCase]:
        return [case for case in self.cases if not case.error < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures


def gradient_oracle_suite(
    instances: int = 100,
    step: float = 1e-6,
    tolerance: float = 1e-4,
    seed: int = 42,
    trainable_sharpness: bool = False,
    gradient_fn: Optional[GradientFn] = None,
) -> OracleReport:
    """
    Compare analytic gradients with central differences on seeded instances.

    Instance k uses the k-th (N, L, delta) combination of the oracle grid
    (cycling), a random network and a random (q0, target) pair.
    """
    gradient_fn = gradient_fn or analytic_gradients
    grid = list(product(ORACLE_DIMENSIONS, ORACLE_DEPTHS, ORACLE_SHARPNESS))
    cases = []
    for index in range(instances):
        dimension, depth, sharpness = grid[index % len(grid)]
        rng = get_rng(seed, "gradcheck", index)
        net = init_network(
            dimension, depth, derive_seed(seed, "gradcheck-net", index), sharpness, trainable_sharpness
        )
        q0 = rng.uniform(0.0, 1.0, dimension)
        target = rng.uniform(0.0, 1.0, dimension)
        error = relative_error(gradient_fn(net, q0, target), finite_diff_gradients(net, q0, target, step))
        cases.append(OracleCase(index, dimension, depth, sharpness, error))
    report = OracleReport(cases, tolerance)
    logger.info(f"Gradient oracle: {instances} instances, max relative error {report.max_error:.3e}")
    return report


def smooth_bound_violations(count: int = 100_000, seed: int = 42, batch: int = 100, slack: float = 1e-12) -> int:
    """
    Count components breaking exact <= smooth <= exact + ln(N)/delta.

    Triples are drawn in batches sharing one event matrix and sharpness;
    `slack` absorbs floating-point rounding.
    """
    rng = get_rng(seed, "smooth-bound")
    violations = 0
    drawn = 0
    while drawn < count:
        size = min(batch, count - drawn)
        dimension = int(rng.integers(1, 9))
        sharpness = float(np.exp(rng.uniform(np.log(0.5), np.log(100.0))))
        event = rng.uniform(0.0, 1.0, (dimension, dimension))
        states = rng.uniform(0.0, 1.0, (size, dimension))
        exact = compose_exact(states, event)
        smooth = compose_smooth(states, event, sharpness)
        gap = np.log(dimension) / sharpness
        violations += int(np.sum(smooth < exact - slack) + np.sum(smooth > exact + gap + slack))
        drawn += size
    return violations


def recovery_sweep(seeds: Sequence[int], config: RecoveryConfig = RecoveryConfig()) -> List[RecoveryResult]:
    return [recovery_experiment(replace(config, seed=seed)) for seed in seeds]


@dataclass(frozen=True)
class EfficacyResult:
    seed: int
    baseline: StrategyMetrics
    adjusted: StrategyMetrics

    @property
    def margin(self) -> float:
        """Directional accuracy above 0.5 in binomial standard errors."""
        return (self.adjusted.directional_accuracy - 0.5) / self.adjusted.directional_stderr

    @property
    def passed(self) -> bool:
        return self.adjusted.rmse < self.baseline.rmse and self.margin > 3.0


def adjuster_efficacy(
    seed: int,
    market: EventMarketParams = EFFICACY_MARKET,
    split: BacktestConfig = EFFICACY_SPLIT,
    gan: GanConfig = GanConfig(),
) -> EfficacyResult:
    """Weighted-linear baseline vs the same baseline plus a trained adjuster on an event-driven market."""
    generated = event_market(replace(market, seed=seed))
    baseline = WeightedLinearStrategy()
    adjusted = AdjustedStrategy(WeightedLinearStrategy(), gan_config=replace(gan, seed=seed))
    report = backtest(generated.series, [baseline, adjusted], split)
    result = EfficacyResult(seed, report.metrics[baseline.name], report.metrics[adjusted.name])
    logger.info(
        f"Efficacy seed {seed}: RMSE {result.baseline.rmse:.4g} -> {result.adjusted.rmse:.4g}, "
        f"DA {result.baseline.directional_accuracy:.3f} -> {result.adjusted.directional_accuracy:.3f}"
    )
    return result


def holdout_discriminator_accuracy(
    seed: int,
    market: EventMarketParams = EventMarketParams(steps=500),
    train_days: int = 250,
    gan: GanConfig = GanConfig(),
) -> float:
    """Accuracy of the trained discriminator on held-out real vs generated trajectories."""
    generated = event_market(replace(market, seed=seed))
    closes = generated.series.closes
    scaler = Scaler.fit(closes[:train_days])
    values = scaler.transform(closes)
    samples = rolling_windows(values[:train_days])
    model, _ = fit_adjuster(samples, replace(gan, seed=seed), scaler)

    held_out = rolling_windows(values[train_days - samples[0].window.size:])
    width = model.width
    real = residual_trajectories([s.target - s.window[-1] for s in held_out], width)
    fake = model.generate(np.stack([s.window for s in held_out[width - 1:]]))
    return discriminator_accuracy(model.discriminator, real, fake)

