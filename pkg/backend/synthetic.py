"""
Synthetic markets with known ground truth.

- Geometric Brownian motion paths, replayable from their recorded shocks.
- FDES-driven series: a hidden fuzzy state evolved by exact max-product
  composition under a schedule of injected event matrices.
- An event-driven market: GBM noise whose drift follows a hidden
  up/down fuzzy state switched by scheduled events.
- The recovery experiment: train a network on input/output pairs of
  known matrices and measure functional agreement on probe states.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from backend.errors import IoError, ParameterError, ParseError
from backend.fdes import (
    FdesNetwork,
    FuzzyEventMatrix,
    TrainConfig,
    as_state,
    compose_exact,
    dominant_sources,
    forward,
    identity_network,
    init_network,
    train,
)
from backend.market_data import NormalizedSeries, PriceSeries, Scaler, write_csv
from backend.seeding import get_rng
from backend.serialization import save_network
from backend.utils import atomic_write_text

logger = logging.getLogger(__name__)

DEFAULT_START = "2020-01-01"


def trading_days(count: int, start: str = DEFAULT_START) -> np.ndarray:
    return pd.bdate_range(start=start, periods=count).to_numpy(dtype="datetime64[D]")


# -- geometric Brownian motion ------------------------------------------------

@dataclass(frozen=True)
class GbmParams:
    s0: float = 100.0
    mu: float = 0.0
    sigma: float = 0.02
    steps: int = 500
    paths: int = 4
    seed: int = 42

    def __post_init__(self):
        if not np.isfinite(self.s0) or self.s0 <= 0:
            raise ParameterError(f"S0 must be positive, got {self.s0}")
        if not np.isfinite(self.mu):
            raise ParameterError(f"mu must be finite, got {self.mu}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        if self.steps < 1 or self.paths < 1:
            raise ParameterError(f"steps and paths must be >= 1, got {self.steps} and {self.paths}")


@dataclass(frozen=True, eq=False)
class GbmPaths:
    prices: np.ndarray  # (paths, steps + 1), column 0 is S0
    shocks: np.ndarray  # (paths, steps) standard normal draws


def replay_gbm(s0: float, mu: float, sigma: float, shocks) -> np.ndarray:
    """Prices S0 * exp(cumsum((mu - sigma^2/2) + sigma * Z)) for recorded shocks Z."""
    shocks = np.asarray(shocks, dtype=float)
    increments = (mu - 0.5 * sigma ** 2) + sigma * shocks
    zeros = np.zeros(shocks.shape[:-1] + (1,))
    return s0 * np.exp(np.concatenate([zeros, np.cumsum(increments, axis=-1)], axis=-1))


def simulate_gbm_paths(params: GbmParams, max_workers: int = 1) -> GbmPaths:
    """Each path draws from its own stream get_rng(seed, "gbm", index)."""

    def draw(index: int) -> np.ndarray:
        return get_rng(params.seed, "gbm", index).standard_normal(params.steps)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            shocks = np.stack(list(executor.map(draw, range(params.paths))))
    else:
        shocks = np.stack([draw(index) for index in range(params.paths)])
    prices = replay_gbm(params.s0, params.mu, params.sigma, shocks)
    logger.debug(f"Simulated {params.paths} GBM paths of {params.steps} steps")
    return GbmPaths(prices, shocks)


def gbm_series(paths: GbmPaths, start: str = DEFAULT_START, prefix: str = "GBM") -> List[PriceSeries]:
    dates = trading_days(paths.prices.shape[1], start)
    return [PriceSeries(f"{prefix}{index:03d}", dates, row) for index, row in enumerate(paths.prices)]


def simulate_gbm(
    params: GbmParams, start: str = DEFAULT_START, prefix: str = "GBM", max_workers: int = 1
) -> List[PriceSeries]:
    return gbm_series(simulate_gbm_paths(params, max_workers), start, prefix)


def write_gbm_shocks(paths: GbmPaths, output_dir: Union[str, Path], prefix: str = "GBM") -> Path:
    """Recorded shocks as `<prefix>_shocks.csv`: one column per path, one row per step."""
    frame = pd.DataFrame(paths.shocks.T, columns=[f"{prefix}{index:03d}" for index in range(paths.shocks.shape[0])])
    frame.insert(0, "step", np.arange(1, paths.shocks.shape[1] + 1))
    text = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
    return atomic_write_text(Path(output_dir) / f"{prefix}_shocks.csv", text)


def read_gbm_shocks(path: Union[str, Path]) -> np.ndarray:
    """(paths, steps) shocks from a file written by write_gbm_shocks, bit for bit."""
    path = Path(path)
    if not path.is_file():
        raise IoError("Shocks file not found", str(path))
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns[:1]) != ["step"] or len(frame.columns) < 2:
        raise ParseError("shocks header must start with step and name a path", str(path), 1)
    return frame.drop(columns="step").to_numpy(dtype=float).T


# -- FDES-driven series ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScheduledEvent:
    step: int
    event: FuzzyEventMatrix
    label: str = ""


@dataclass(frozen=True, eq=False)
class EventSchedule:
    """Events applied at strictly increasing steps (step 0 is the initial state)."""

    events: Tuple[ScheduledEvent, ...] = ()

    def __post_init__(self):
        events = tuple(self.events)
        steps = [e.step for e in events]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ParameterError(f"schedule steps must be strictly increasing, got {steps}")
        dims = {e.event.dimension for e in events}
        if len(dims) > 1:
            raise ParameterError(f"scheduled events have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "events", events)

    def __len__(self) -> int:
        return len(self.events)

    def at(self, step: int) -> Optional[ScheduledEvent]:
        for event in self.events:
            if event.step == step:
                return event
        return None

    def check_length(self, length: int) -> None:
        for event in self.events:
            if not 1 <= event.step < length:
                raise ParameterError(f"event {event.label!r} at step {event.step} lies outside [1, {length - 1}]")

    def frame(self, matrix_files: Optional[Sequence[str]] = None) -> pd.DataFrame:
        files = list(matrix_files) if matrix_files is not None else [""] * len(self.events)
        return pd.DataFrame(
            [(e.step, e.label or e.event.label, f) for e, f in zip(self.events, files)],
            columns=["step", "label", "matrix_file"],
        )


@dataclass(frozen=True, eq=False)
class GroundTruth:
    states: np.ndarray  # (length, N); states[0] = q0
    labels: Tuple[str, ...]  # event applied to reach each state; "" for q0
    sources: np.ndarray  # (length - 1, N) dominant source index per transition
    schedule: EventSchedule
    filler: FuzzyEventMatrix


def evolve_states(q0, schedule: EventSchedule, filler: FuzzyEventMatrix, length: int):
    """Exact max-product trajectory; scheduled events replace the filler at their steps."""
    if length < 1:
        raise ParameterError(f"series length must be >= 1, got {length}")
    state = as_state(q0, filler.dimension)
    schedule.check_length(length)
    for event in schedule.events:
        if event.event.dimension != filler.dimension:
            raise ParameterError(
                f"event {event.label!r} has dimension {event.event.dimension}, expected {filler.dimension}"
            )

    by_step = {e.step: e for e in schedule.events}
    states, labels, sources = [state], [""], []
    for step in range(1, length):
        scheduled = by_step.get(step)
        event = scheduled.event if scheduled else filler
        sources.append(dominant_sources(states[-1], event))
        states.append(compose_exact(states[-1], event))
        labels.append((scheduled.label or event.label) if scheduled else filler.label)
    width = filler.dimension
    return (
        np.stack(states),
        tuple(labels),
        np.stack(sources) if sources else np.zeros((0, width), dtype=int),
    )


def generate_fdes_series(
    q0,
    schedule: EventSchedule,
    filler: FuzzyEventMatrix,
    length: int,
    ticker: str = "FDES",
    start: str = DEFAULT_START,
) -> Tuple[NormalizedSeries, GroundTruth]:
    """Series of state component 0 under exact composition, plus the full trace."""
    states, labels, sources = evolve_states(q0, schedule, filler, length)
    series = NormalizedSeries(ticker, trading_days(length, start), states[:, 0].copy(), Scaler(0.0, 1.0))
    return series, GroundTruth(states, labels, sources, schedule, filler)


def write_ground_truth(truth: GroundTruth, output_dir: Union[str, Path], stem: str) -> Path:
    """Event matrices in the network text format plus `<stem>_schedule.csv` (step,label,matrix_file)."""
    output_dir = Path(output_dir)
    files = []
    for index, scheduled in enumerate(truth.schedule.events):
        name = f"{stem}_event_{index:03d}.fdes"
        save_network(FdesNetwork((scheduled.event,)), output_dir / name)
        files.append(name)
    filler_name = f"{stem}_filler.fdes"
    save_network(FdesNetwork((truth.filler,)), output_dir / filler_name)
    schedule_path = output_dir / f"{stem}_schedule.csv"
    text = truth.schedule.frame(files).to_csv(index=False, lineterminator="\n")
    atomic_write_text(schedule_path, text)
    return schedule_path


def random_schedule(dimension: int, length: int, event_rate: float, seed: int) -> EventSchedule:
    """Permutation-dominant events injected at each step with probability `event_rate`."""
    if not 0 <= event_rate <= 1:
        raise ParameterError(f"event_rate must lie in [0, 1], got {event_rate}")
    rng = get_rng(seed, "fdes-series", "schedule")
    steps = np.flatnonzero(rng.random(max(length - 1, 0)) < event_rate) + 1
    events = []
    for k, step in enumerate(steps):
        label = f"event_{k + 1}"
        events.append(ScheduledEvent(int(step), permutation_dominant(dimension, rng, label), label))
    return EventSchedule(tuple(events))


def fdes_price_series(
    dimension: int,
    length: int,
    event_rate: float,
    seed: int,
    s0: float = 100.0,
    ticker: str = "FDES",
    start: str = DEFAULT_START,
) -> Tuple[PriceSeries, GroundTruth]:
    """
    Prices read out from a seeded FDES trajectory: close = s0 * (0.5 + state[0]).

    q0 is drawn from [0.2, 1]^N; the identity filler holds the state between
    scheduled events.
    """
    q0 = get_rng(seed, "fdes-series", "q0").uniform(0.2, 1.0, dimension)
    schedule = random_schedule(dimension, length, event_rate, seed)
    normalized, truth = generate_fdes_series(q0, schedule, FuzzyEventMatrix.identity(dimension), length, ticker, start)
    closes = Scaler(0.5 * s0, 1.5 * s0).inverse(normalized.values)
    return PriceSeries(ticker, normalized.dates, closes), truth


# -- event-driven market ----------------------------------------------------------

UP, DOWN, BIAS = 0, 1, 2


def drift_event(direction: str, strength: float = 1.0) -> FuzzyEventMatrix:
    """Raise the up (or down) component from the bias and clear the other one."""
    if direction not in ("up", "down"):
        raise ParameterError(f"direction must be 'up' or 'down', got {direction!r}")
    raised, cleared = (UP, DOWN) if direction == "up" else (DOWN, UP)
    entries = np.zeros((3, 3))
    entries[BIAS, BIAS] = 1.0
    entries[BIAS, raised] = strength
    entries[raised, raised] = 1.0
    entries[cleared, cleared] = 0.0
    return FuzzyEventMatrix(entries, direction)


def decay_event(decay: float) -> FuzzyEventMatrix:
    return FuzzyEventMatrix(np.diag([decay, decay, 1.0]), "decay")


@dataclass(frozen=True)
class EventMarketParams:
    s0: float = 100.0
    steps: int = 500
    sigma: float = 0.01
    kappa: float = 0.008
    event_rate: float = 0.03
    decay: float = 0.98
    seed: int = 42

    def __post_init__(self):
        if not np.isfinite(self.s0) or self.s0 <= 0:
            raise ParameterError(f"S0 must be positive, got {self.s0}")
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if self.sigma < 0 or self.kappa < 0:
            raise ParameterError("sigma and kappa must be >= 0")
        if not 0 <= self.event_rate <= 1:
            raise ParameterError(f"event_rate must lie in [0, 1], got {self.event_rate}")
        if not 0 <= self.decay <= 1:
            raise ParameterError(f"decay must lie in [0, 1], got {self.decay}")


@dataclass(frozen=True, eq=False)
class EventMarket:
    series: PriceSeries
    truth: GroundTruth
    shocks: np.ndarray
    drift: np.ndarray  # kappa * (up - down) per step


def event_schedule(params: EventMarketParams) -> EventSchedule:
    rng = get_rng(params.seed, "event-market", "schedule")
    occurs = rng.random(params.steps) < params.event_rate
    ups = rng.random(params.steps) < 0.5
    events = [
        ScheduledEvent(step, drift_event("up" if ups[step - 1] else "down"), "up" if ups[step - 1] else "down")
        for step in range(1, params.steps + 1)
        if occurs[step - 1]
    ]
    return EventSchedule(tuple(events))


def event_market(params: EventMarketParams, ticker: str = "EVT", start: str = DEFAULT_START) -> EventMarket:
    """
    Prices S_t = S_(t-1) * exp(kappa * (up_t - down_t) - sigma^2/2 + sigma * Z_t).

    The hidden state [up, down, bias] starts at [0, 0, 1], decays under the
    filler and is switched by "up"/"down" drift events.
    """
    schedule = event_schedule(params)
    filler = decay_event(params.decay)
    states, labels, sources = evolve_states([0.0, 0.0, 1.0], schedule, filler, params.steps + 1)
    shocks = get_rng(params.seed, "event-market", "noise").standard_normal(params.steps)
    drift = params.kappa * (states[1:, UP] - states[1:, DOWN])
    increments = drift - 0.5 * params.sigma ** 2 + params.sigma * shocks
    prices = params.s0 * np.exp(np.concatenate([[0.0], np.cumsum(increments)]))
    series = PriceSeries(ticker, trading_days(params.steps + 1, start), prices)
    truth = GroundTruth(states, labels, sources, schedule, filler)
    logger.info(f"Event market {ticker}: {len(schedule)} drift events over {params.steps} steps")
    return EventMarket(series, truth, shocks, drift)


# -- recovery experiment ---------------------------------------------------------

@dataclass(frozen=True)
class RecoveryConfig:
    dimension: int = 4
    layers: int = 1
    samples: int = 200
    probes: int = 64
    sharpness: float = 50.0
    epochs: int = 5000
    rate: float = 1.0
    seed: int = 42
    # held-out states stay inside the training box
    state_range: Tuple[float, float] = (0.0, 1.0)
    held_out_range: Tuple[float, float] = (0.2, 1.0)
    identity_truth: bool = False
    identity_init: bool = False

    def __post_init__(self):
        if self.dimension < 1 or self.layers < 1 or self.samples < 1 or self.probes < 1:
            raise ParameterError("dimension, layers, samples and probes must be >= 1")
        for name in ("state_range", "held_out_range"):
            low, high = getattr(self, name)
            if not 0 <= low < high <= 1:
                raise ParameterError(f"{name} must satisfy 0 <= low < high <= 1, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    truth: FdesNetwork
    trained: FdesNetwork
    final_cost: float
    probe_error: float
    history: Tuple[float, ...]


def permutation_dominant(dimension: int, rng: np.random.Generator, label: str = "") -> FuzzyEventMatrix:
    """Entries in [0, 0.05] except one per row/column in [0.6, 1]."""
    entries = rng.uniform(0.0, 0.05, size=(dimension, dimension))
    perm = rng.permutation(dimension)
    entries[np.arange(dimension), perm] = rng.uniform(0.6, 1.0, size=dimension)
    return FuzzyEventMatrix(entries, label)


def exact_output(net: FdesNetwork, states) -> np.ndarray:
    current = np.asarray(states, dtype=float)
    for layer in net.layers:
        current = compose_exact(current, layer)
    return current


def recovery_experiment(config: RecoveryConfig = RecoveryConfig()) -> RecoveryResult:
    """
    Fit a network to (q0, exact output) pairs of known matrices.

    Agreement is measured functionally, as the max over probe states of
    ||forward(trained, q) - exact(q)||_inf, since distinct matrices can
    realise the same max-product map.
    """
    rng = get_rng(config.seed, "recovery")
    labels = [f"event_{k + 1}" for k in range(config.layers)]
    if config.identity_truth:
        truth = FdesNetwork(tuple(FuzzyEventMatrix.identity(config.dimension, lab) for lab in labels))
    else:
        truth = FdesNetwork(tuple(permutation_dominant(config.dimension, rng, lab) for lab in labels))

    starts = rng.uniform(*config.state_range, size=(config.samples, config.dimension))
    probes = rng.uniform(*config.held_out_range, size=(config.probes, config.dimension))
    targets = exact_output(truth, starts)

    if config.identity_init:
        initial = identity_network(config.dimension, config.layers, config.sharpness)
    else:
        initial = init_network(config.dimension, config.layers, config.seed, config.sharpness)
    result = train(
        initial,
        [(q, t, 1.0) for q, t in zip(starts, targets)],
        TrainConfig(epochs=config.epochs, rate=config.rate, seed=config.seed, sharpness=config.sharpness),
    )
    probe_error = float(np.max(np.abs(forward(result.network, probes).output - exact_output(truth, probes))))
    logger.info(f"Recovery: final cost {result.final_loss:.3g}, probe error {probe_error:.3g}")
    return RecoveryResult(truth, result.network, result.final_loss, probe_error, result.history)


def write_series_csvs(series: Sequence[PriceSeries], output_dir: Union[str, Path]) -> List[Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for item in series:
        path = output_dir / f"{item.ticker}.csv"
        write_csv(item, path)
        paths.append(path)
    return paths
