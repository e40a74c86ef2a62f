"""
Adversarial training of an event-based adjuster.

The generator is an FdesNetwork that maps the current price window,
re-centred on today's value (see trend_state), to a residual
trajectory: component k is 0.5 plus the reference (martingale)
residual on the k-th of the last W one-day-ahead predictions, i.e. the
k-th day-over-day move, the newest being tomorrow's. A logistic
discriminator learns to tell real residual trajectories from generated
ones, and the generator is trained to fool it (non-saturating loss)
while also fitting the realised moves with the FDES cost.

The readout is antisymmetric: a rising window and its mirror image
(reflected about today's value) are both fed through the generator and
the mean difference of the two trajectories is the momentum signal.
A least-squares gain turns it into an event-driven projection of
tomorrow's value, and the adjuster output is 0.5 plus `blend` times the
gap between that projection and the baseline's prediction. Every flat
window, the all-0.5 reference included, has zero momentum.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit, log_expit
from tqdm import tqdm

from backend.errors import DimensionError, InputError, ParameterError
from backend.fdes import (
    DEFAULT_SHARPNESS,
    FdesNetwork,
    GradientSet,
    as_state,
    backward_from_signal,
    forward,
    init_network,
    sgd_step,
)
from backend.market_data import Scaler
from backend.utils import atomic_write_text

logger = logging.getLogger(__name__)

NEUTRAL_LEVEL = 0.5
_EDGE = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class Discriminator:
    """Logistic classifier: score(x) = sigmoid(bias + weights . x)."""

    weights: np.ndarray
    bias: float = 0.0
    loss: Optional[float] = None  # negative log-likelihood before the step that produced it

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        if weights.ndim != 1 or weights.size == 0:
            raise DimensionError(f"discriminator weights must be a non-empty vector, got shape {weights.shape}")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", float(self.bias))

    @classmethod
    def zeros(cls, width: int) -> "Discriminator":
        return cls(np.zeros(width), 0.0)

    @property
    def width(self) -> int:
        return self.weights.size

    @property
    def params(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def __eq__(self, other):
        if not isinstance(other, Discriminator):
            return NotImplemented
        return self.bias == other.bias and np.array_equal(self.weights, other.weights)

    __hash__ = object.__hash__


def _batch(windows, width: int, name: str) -> np.ndarray:
    batch = np.asarray(windows, dtype=float)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise InputError(f"{name} batch must hold at least one window")
    if batch.shape[1] != width:
        raise DimensionError(f"{name} windows have length {batch.shape[1]}, expected {width}")
    return batch


def _logits(d: Discriminator, windows: np.ndarray) -> np.ndarray:
    return d.bias + windows @ d.weights


def discriminator_score(d: Discriminator, window) -> np.ndarray:
    """Probability that `window` is real, kept strictly inside (0, 1)."""
    values = np.asarray(window, dtype=float)
    if values.ndim == 0 or values.shape[-1] != d.width:
        raise DimensionError(f"window length {values.shape[-1:]} does not match discriminator width {d.width}")
    return np.clip(expit(_logits(d, values)), _EDGE, 1.0 - _EDGE)


def discriminator_loss(d: Discriminator, real, fake) -> float:
    """Negative mean log-likelihood: -(mean log D(real) + mean log(1 - D(fake)))."""
    real = _batch(real, d.width, "real")
    fake = _batch(fake, d.width, "fake")
    return float(-(np.mean(log_expit(_logits(d, real))) + np.mean(log_expit(-_logits(d, fake)))))


def discriminator_accuracy(d: Discriminator, real, fake) -> float:
    real = _batch(real, d.width, "real")
    fake = _batch(fake, d.width, "fake")
    hits = np.sum(_logits(d, real) > 0) + np.sum(_logits(d, fake) < 0)
    return float(hits / (real.shape[0] + fake.shape[0]))


def discriminator_step(d: Discriminator, real, fake, rate: float) -> Discriminator:
    """One gradient-ascent step on mean log D(real) + mean log(1 - D(fake))."""
    if not np.isfinite(rate) or rate < 0:
        raise ParameterError(f"discriminator rate must be non-negative, got {rate}")
    real = _batch(real, d.width, "real")
    fake = _batch(fake, d.width, "fake")

    z_real, z_fake = _logits(d, real), _logits(d, fake)
    loss = float(-(np.mean(log_expit(z_real)) + np.mean(log_expit(-z_fake))))
    pull_real = 1.0 - expit(z_real)
    push_fake = -expit(z_fake)
    grad_w = np.mean(pull_real[:, None] * real, axis=0) + np.mean(push_fake[:, None] * fake, axis=0)
    grad_b = np.mean(pull_real) + np.mean(push_fake)
    return Discriminator(d.weights + rate * grad_w, d.bias + rate * grad_b, loss)


def _generator_objective(
    g: FdesNetwork,
    d: Discriminator,
    seeds: np.ndarray,
    targets: Optional[np.ndarray],
    supervised_weight: float,
    adversarial_weight: float,
):
    if g.dimension != d.width:
        raise DimensionError(f"generator dimension {g.dimension} does not match discriminator width {d.width}")
    trace = forward(g, seeds)
    generated = trace.output
    count = generated.shape[0]

    z = _logits(d, generated)
    loss = adversarial_weight * float(np.mean(-log_expit(z)))
    # d(-log sigmoid(z))/dz = -(1 - sigmoid(z)); dz/dx = weights
    signal = (adversarial_weight / count) * (-(1.0 - expit(z)))[:, None] * d.weights[None, :]

    if targets is not None and supervised_weight > 0:
        residual = generated - targets
        loss += supervised_weight * float(np.mean(0.5 * np.sum(residual ** 2, axis=-1)))
        signal = signal + (supervised_weight / count) * residual
    return loss, trace, signal


def _prepare(g: FdesNetwork, seeds, targets):
    seeds = as_state(_batch(seeds, g.dimension, "seed"), g.dimension)
    if targets is not None:
        targets = _batch(targets, g.dimension, "target")
        if targets.shape[0] != seeds.shape[0]:
            raise DimensionError(f"{targets.shape[0]} targets for {seeds.shape[0]} seed windows")
    return seeds, targets


def generator_loss(
    g: FdesNetwork,
    d: Discriminator,
    seed_windows,
    targets=None,
    supervised_weight: float = 0.0,
    adversarial_weight: float = 1.0,
) -> float:
    seeds, targets = _prepare(g, seed_windows, targets)
    return _generator_objective(g, d, seeds, targets, supervised_weight, adversarial_weight)[0]


def generator_gradients(
    g: FdesNetwork,
    d: Discriminator,
    seed_windows,
    targets=None,
    supervised_weight: float = 0.0,
    adversarial_weight: float = 1.0,
) -> GradientSet:
    """Exact gradient of the generator objective, discriminator chain factor included."""
    seeds, targets = _prepare(g, seed_windows, targets)
    _, trace, signal = _generator_objective(g, d, seeds, targets, supervised_weight, adversarial_weight)
    return backward_from_signal(g, trace, signal)


def generator_step(
    g: FdesNetwork,
    d: Discriminator,
    seed_windows,
    rate: float,
    targets=None,
    supervised_weight: float = 0.0,
    adversarial_weight: float = 1.0,
) -> FdesNetwork:
    """One projected descent step on mean -log D(forward(g, seed)) (+ optional supervised cost)."""
    grads = generator_gradients(g, d, seed_windows, targets, supervised_weight, adversarial_weight)
    return sgd_step(g, grads, rate)


def trend_state(windows, width: Optional[int] = None) -> np.ndarray:
    """
    Generator seed state for price windows: 0.5 + (today - day k), clipped to [0, 1].

    A flat window maps to the all-0.5 reference state; rising windows lift
    the older components above 0.5, falling windows push them below.
    """
    values = np.asarray(windows, dtype=float)
    if values.ndim == 0 or (width is not None and values.shape[-1] != width):
        raise DimensionError(f"window length {values.shape[-1:]} does not match generator width {width}")
    if not np.all(np.isfinite(values)):
        raise InputError("price window contains non-finite values")
    return np.clip(NEUTRAL_LEVEL + values[..., -1:] - values, 0.0, 1.0)


def apply_adjustment(baseline: float, adjuster_output: float, neutral: float = NEUTRAL_LEVEL) -> float:
    """adjusted = baseline + (adjuster_output - neutral), in normalized units."""
    return baseline + (adjuster_output - neutral)


@dataclass(frozen=True, eq=False)
class AdjusterModel:
    """
    Trained generator plus its readout calibration.

    `gain` scales the momentum signal into a normalized one-day move and
    `blend` is the share of the gap between the event-driven projection
    and the baseline that the adjustment closes. With blend = 0 (an
    uncalibrated model) the adjuster leaves every baseline unchanged.
    """

    generator: FdesNetwork
    discriminator: Discriminator
    scaler: Optional[Scaler] = None
    gain: float = 0.0
    blend: float = 0.0

    def __post_init__(self):
        if self.generator.dimension != self.discriminator.width:
            raise DimensionError(
                f"generator dimension {self.generator.dimension} does not match "
                f"discriminator width {self.discriminator.width}"
            )
        if not np.isfinite(self.gain):
            raise ParameterError(f"readout gain must be finite, got {self.gain}")
        if not 0.0 <= self.blend <= 1.0:
            raise ParameterError(f"blend must lie in [0, 1], got {self.blend}")
        object.__setattr__(self, "gain", float(self.gain))
        object.__setattr__(self, "blend", float(self.blend))

    @property
    def width(self) -> int:
        return self.generator.dimension

    @property
    def labels(self) -> List[str]:
        return self.generator.labels

    def generate(self, windows) -> np.ndarray:
        return forward(self.generator, trend_state(windows, self.width)).output

    def momentum(self, windows) -> np.ndarray:
        """Mean of g(s) - g(1 - s) over trajectory components; odd in the window's trend."""
        states = trend_state(windows, self.width)
        rising = forward(self.generator, states).output
        falling = forward(self.generator, 1.0 - states).output
        return np.mean(rising - falling, axis=-1)

    def projection(self, window) -> float:
        """Event-driven estimate of tomorrow's normalized value."""
        values = np.asarray(window, dtype=float)
        return float(values[-1] + self.gain * self.momentum(values))

    def adjust(self, window, baseline: float) -> float:
        """0.5 plus the estimated baseline residual for `window`."""
        return NEUTRAL_LEVEL + self.blend * (self.projection(window) - baseline)

    @property
    def neutral(self) -> float:
        # the reference window is flat at 0.5, so its own projection is 0.5
        return self.adjust(np.full(self.width, NEUTRAL_LEVEL), NEUTRAL_LEVEL)

    def apply(self, baseline: float, window) -> float:
        return apply_adjustment(baseline, self.adjust(window, baseline), self.neutral)


@dataclass(frozen=True)
class GanConfig:
    rounds: int = 200
    generator_steps: int = 1
    discriminator_steps: int = 1
    generator_rate: float = 0.5
    discriminator_rate: float = 0.1
    seed: int = 42
    layers: int = 1
    sharpness: float = DEFAULT_SHARPNESS
    supervised_weight: float = 1.0
    adversarial_weight: float = 0.1
    blend: float = 0.5
    labels: Optional[Tuple[str, ...]] = None
    progress: bool = False

    def __post_init__(self):
        for name in ("rounds", "generator_steps", "discriminator_steps", "layers"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("generator_rate", "discriminator_rate", "supervised_weight", "adversarial_weight"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ParameterError(f"{name} must be non-negative, got {value}")
        if not 0.0 <= self.blend <= 1.0:
            raise ParameterError(f"blend must lie in [0, 1], got {self.blend}")
        if not np.isfinite(self.sharpness) or self.sharpness <= 0:
            raise ParameterError(f"sharpness must be positive, got {self.sharpness}")
        if self.labels is not None and len(self.labels) != self.layers:
            raise ParameterError(f"expected {self.layers} event labels, got {len(self.labels)}")


@dataclass(frozen=True)
class GanRound:
    round: int
    d_loss: float
    g_loss: float
    d_acc: float


@dataclass
class GanHistory:
    rounds: List[GanRound] = field(default_factory=list)

    def append(self, row: GanRound) -> None:
        self.rounds.append(row)

    def __len__(self) -> int:
        return len(self.rounds)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.round, r.d_loss, r.g_loss, r.d_acc) for r in self.rounds],
            columns=["round", "d_loss", "g_loss", "d_acc"],
        )

    def write_csv(self, path) -> Path:
        return atomic_write_text(path, self.to_frame().to_csv(index=False, float_format="%.17g", lineterminator="\n"))


def residual_trajectories(residuals: Sequence[float], width: int) -> np.ndarray:
    """
    Real residual trajectories centred at 0.5.

    Row s holds 0.5 + residuals[s .. s+width-1] clipped into [0, 1]; it
    pairs with the sample whose prediction produced residual s+width-1.
    """
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size < width:
        raise InputError(f"need at least {width} residuals to build a trajectory, got {residuals.size}")
    rows = np.lib.stride_tricks.sliding_window_view(residuals, width)
    return np.clip(NEUTRAL_LEVEL + rows, 0.0, 1.0)


def calibrate_readout(model: AdjusterModel, windows, moves, blend: float) -> AdjusterModel:
    """
    Least-squares gain of realised one-day moves on the momentum signal.

    A generator whose momentum has no spread over `windows` cannot project
    anything, so the model comes back with gain and blend both 0.
    """
    batch = _batch(windows, model.width, "calibration")
    moves = np.asarray(moves, dtype=float)
    if moves.shape != (batch.shape[0],):
        raise DimensionError(f"{moves.size} moves for {batch.shape[0]} calibration windows")
    if not np.all(np.isfinite(moves)):
        raise InputError("calibration moves contain non-finite values")
    signal = model.momentum(batch)
    energy = float(signal @ signal)
    if energy <= _EDGE:
        logger.warning("⚠️ Generator momentum is flat on the training windows; adjuster left neutral")
        return replace(model, gain=0.0, blend=0.0)
    gain = float(signal @ moves) / energy
    logger.info(f"Readout calibrated on {moves.size} windows: gain={gain:.4g}, blend={blend:g}")
    return replace(model, gain=gain, blend=blend)


def gan_train(
    config: GanConfig,
    real_windows,
    residual_targets,
    scaler: Optional[Scaler] = None,
    initial: Optional[FdesNetwork] = None,
) -> Tuple[AdjusterModel, GanHistory]:
    """
    Alternate discriminator and generator steps.

    Args:
        config: Round counts, rates, seed and generator shape
        real_windows: (S, W) normalized price windows; their trend states seed the generator
        residual_targets: (S, W) real residual trajectories (see residual_trajectories)
        scaler: Training scaler kept with the model for later inversion
        initial: Starting generator (e.g. after supervised pre-training);
            a fresh network from config.seed when omitted

    Returns:
        Trained adjuster and per-round history
    """
    windows = np.asarray(real_windows, dtype=float)
    if windows.ndim != 2 or windows.shape[0] == 0:
        raise InputError("adversarial training needs at least one real window")
    width = windows.shape[1]
    seeds = trend_state(windows, width)
    real = _batch(residual_targets, width, "residual target")
    if real.shape[0] != seeds.shape[0]:
        raise DimensionError(f"{real.shape[0]} residual targets for {seeds.shape[0]} windows")

    if initial is not None:
        if initial.dimension != width:
            raise DimensionError(f"initial generator dimension {initial.dimension} does not match window width {width}")
        generator = initial
    else:
        generator = init_network(width, config.layers, config.seed, config.sharpness, labels=config.labels)
    disc = Discriminator.zeros(width)
    history = GanHistory()
    logger.info(f"GAN training: {config.rounds} rounds on {seeds.shape[0]} windows of width {width}")

    for index in tqdm(range(config.rounds), desc="gan", disable=not config.progress):
        fake = forward(generator, seeds).output
        for _ in range(config.discriminator_steps):
            disc = discriminator_step(disc, real, fake, config.discriminator_rate)
        for _ in range(config.generator_steps):
            generator = generator_step(
                generator,
                disc,
                seeds,
                config.generator_rate,
                real,
                config.supervised_weight,
                config.adversarial_weight,
            )
        fake = forward(generator, seeds).output
        row = GanRound(
            round=index,
            d_loss=discriminator_loss(disc, real, fake),
            g_loss=_generator_objective(
                generator, disc, seeds, real, config.supervised_weight, config.adversarial_weight
            )[0],
            d_acc=discriminator_accuracy(disc, real, fake),
        )
        history.append(row)
        logger.debug(f"round {index}: d_loss={row.d_loss:.5f} g_loss={row.g_loss:.5f} d_acc={row.d_acc:.3f}")

    final = history.rounds[-1]
    logger.info(f"GAN training done: d_acc={final.d_acc:.3f}, g_loss={final.g_loss:.5f}")
    return AdjusterModel(generator, disc, scaler), history
