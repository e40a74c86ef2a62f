"""
Fuzzy discrete event systems trained by backpropagation.

A fuzzy state is a row vector in [0,1]^N and a fuzzy event is an N x N
matrix in [0,1]. An event acts on a state by max-product composition:

    q'_j = max_i q_i * a_ij

Training replaces the max with the log-sum-exp smooth maximum

    q'_j ~ (1/delta) * ln sum_m exp(delta * q_m * a_mj)

which is differentiable everywhere and over-approximates the max by at
most ln(N)/delta. Gradients are obtained by exact differentiation of the
smooth map and are checked against central finite differences.

All functions accept a single state of shape (N,) or a batch of states
of shape (..., N); gradients are summed over the batch axes.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import Callable, Iterable, List, Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax
from tqdm import tqdm

from backend.errors import DimensionError, InputError, NumericalError, ParameterError
from backend.seeding import get_rng

logger = logging.getLogger(__name__)

DEFAULT_SHARPNESS = 10.0
MIN_SHARPNESS = 1e-3
INIT_RANGE = (0.25, 0.75)


def as_state(values, dimension: Optional[int] = None, strict: bool = True) -> np.ndarray:
    """Validate a fuzzy state (or batch of states) and return it as a float array."""
    state = np.asarray(values, dtype=float)
    if state.ndim == 0 or state.shape[-1] == 0:
        raise DimensionError(f"fuzzy state must have at least one component, got shape {state.shape}")
    if dimension is not None and state.shape[-1] != dimension:
        raise DimensionError(f"expected state dimension {dimension}, got {state.shape[-1]}")
    if not np.all(np.isfinite(state)):
        raise ParameterError("fuzzy state contains non-finite values")
    if strict and (np.any(state < 0.0) or np.any(state > 1.0)):
        raise ParameterError("fuzzy state components must lie in [0, 1]")
    return state


@dataclass(frozen=True, eq=False)
class FuzzyEventMatrix:
    """One fuzzy discrete event: an N x N matrix with entries in [0, 1]."""

    entries: np.ndarray
    label: str = ""

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] == 0:
            raise DimensionError(f"event matrix must be square and non-empty, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ParameterError("event matrix contains non-finite entries")
        if np.any(entries < 0.0) or np.any(entries > 1.0):
            raise ParameterError("event matrix entries must lie in [0, 1]")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "label", str(self.label))

    @property
    def dimension(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dimension: int, label: str = "identity") -> "FuzzyEventMatrix":
        return cls(np.eye(dimension), label)

    @classmethod
    def zeros(cls, dimension: int, label: str = "null") -> "FuzzyEventMatrix":
        return cls(np.zeros((dimension, dimension)), label)

    def __eq__(self, other):
        if not isinstance(other, FuzzyEventMatrix):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.entries, other.entries)

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class FdesNetwork:
    """Ordered events sharing one sharpness parameter; the trainable model."""

    layers: Tuple[FuzzyEventMatrix, ...]
    sharpness: float = DEFAULT_SHARPNESS
    trainable_sharpness: bool = False

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ParameterError("network needs at least one layer")
        dimension = layers[0].dimension
        for index, layer in enumerate(layers):
            if not isinstance(layer, FuzzyEventMatrix):
                raise ParameterError(f"layer {index} is not a FuzzyEventMatrix")
            if layer.dimension != dimension:
                raise DimensionError(f"layer {index} has dimension {layer.dimension}, expected {dimension}")
        _check_sharpness(self.sharpness)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "sharpness", float(self.sharpness))

    @property
    def dimension(self) -> int:
        return self.layers[0].dimension

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def labels(self) -> List[str]:
        return [layer.label for layer in self.layers]

    def __eq__(self, other):
        if not isinstance(other, FdesNetwork):
            return NotImplemented
        return (
            self.sharpness == other.sharpness
            and self.trainable_sharpness == other.trainable_sharpness
            and self.layers == other.layers
        )

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class GradientSet:
    """Per-layer dCost/da matrices, plus dCost/d(delta) when sharpness is trainable."""

    layers: Tuple[np.ndarray, ...]
    sharpness: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(np.asarray(g, dtype=float) for g in self.layers))

    def flat(self) -> np.ndarray:
        parts = [g.ravel() for g in self.layers]
        if self.sharpness is not None:
            parts.append(np.array([self.sharpness]))
        return np.concatenate(parts)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))

    @classmethod
    def zeros_like(cls, net: FdesNetwork) -> "GradientSet":
        return cls(
            tuple(np.zeros_like(layer.entries) for layer in net.layers),
            0.0 if net.trainable_sharpness else None,
        )


@dataclass(frozen=True, eq=False)
class ForwardTrace(Sequence):
    """States q1..qL produced by a forward pass, remembering the input q0."""

    initial: np.ndarray
    states: Tuple[np.ndarray, ...]

    def __getitem__(self, index):
        return self.states[index]

    def __len__(self) -> int:
        return len(self.states)

    @property
    def output(self) -> np.ndarray:
        return self.states[-1]

    def layer_input(self, index: int) -> np.ndarray:
        return self.initial if index == 0 else self.states[index - 1]


def _check_sharpness(sharpness: float) -> None:
    if not np.isfinite(sharpness) or sharpness <= 0:
        raise ParameterError(f"sharpness must be a positive finite number, got {sharpness}")


def _entries(event: Union[FuzzyEventMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(event, FuzzyEventMatrix):
        return event.entries
    return FuzzyEventMatrix(event).entries


def _products(state, event) -> np.ndarray:
    entries = _entries(event)
    q = np.asarray(state, dtype=float)
    if q.ndim == 0 or q.shape[-1] != entries.shape[0]:
        raise DimensionError(f"state dimension {q.shape[-1:]} does not match event dimension {entries.shape[0]}")
    # x[..., i, j] = q_i * a_ij
    return q[..., :, None] * entries


def compose_exact(state, event) -> np.ndarray:
    """Max-product composition q o sigma."""
    return np.max(_products(state, event), axis=-2)


def dominant_sources(state, event) -> np.ndarray:
    """Index i achieving max_i q_i * a_ij for each output j (lowest index on ties)."""
    return np.argmax(_products(state, event), axis=-2)


def compose_smooth(state, event, sharpness: float = DEFAULT_SHARPNESS) -> np.ndarray:
    """Log-sum-exp approximation of max-product composition."""
    _check_sharpness(sharpness)
    products = _products(state, event)
    # logsumexp subtracts the column max before exponentiating
    return logsumexp(sharpness * products, axis=-2) / sharpness


def forward(net: FdesNetwork, q0) -> ForwardTrace:
    """Run q0 through every layer with the smooth composition, keeping all states."""
    state = as_state(q0, net.dimension)
    states = []
    current = state
    for layer in net.layers:
        current = compose_smooth(current, layer, net.sharpness)
        states.append(current)
    return ForwardTrace(state, tuple(states))


def cost(q_final, target) -> Union[float, np.ndarray]:
    """Half squared error 0.5 * ||qL - target||^2 (per state for batches)."""
    final = np.asarray(q_final, dtype=float)
    goal = np.asarray(target, dtype=float)
    if final.shape[-1:] != goal.shape[-1:]:
        raise DimensionError(f"state dimension {final.shape[-1:]} does not match target {goal.shape[-1:]}")
    value = 0.5 * np.sum((final - goal) ** 2, axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def _check_trace(net: FdesNetwork, trace: ForwardTrace) -> None:
    if len(trace) != net.depth:
        raise DimensionError(f"trace holds {len(trace)} states but the network has {net.depth} layers")
    for state in (trace.initial, *trace.states):
        if state.shape[-1] != net.dimension:
            raise DimensionError(f"trace state dimension {state.shape[-1]} does not match network {net.dimension}")


def _sum_batch(values: np.ndarray, core_ndim: int) -> np.ndarray:
    return values.reshape((-1,) + values.shape[values.ndim - core_ndim:]).sum(axis=0)


def backward_from_signal(net: FdesNetwork, trace: ForwardTrace, signal) -> GradientSet:
    """
    Backpropagate an output error signal dObjective/dqL through the network.

    For layer n with input s, products x_ij = s_i * a_ij and column
    softmax p_ij = exp(delta x_ij) / sum_m exp(delta x_mj):

        dq_j / da_ij = p_ij * s_i
        dq_j / ds_i  = p_ij * a_ij
        dq_j / ddelta = (sum_i p_ij x_ij - q_j) / delta
    """
    _check_trace(net, trace)
    error = np.asarray(signal, dtype=float)
    if error.shape != trace.output.shape:
        raise DimensionError(f"error signal shape {error.shape} does not match output {trace.output.shape}")

    delta = net.sharpness
    grads: List[np.ndarray] = [None] * net.depth
    d_sharpness = 0.0
    for index in reversed(range(net.depth)):
        entries = net.layers[index].entries
        source = trace.layer_input(index)
        products = source[..., :, None] * entries
        weights = softmax(delta * products, axis=-2)
        grads[index] = _sum_batch(source[..., :, None] * weights * error[..., None, :], 2)
        if net.trainable_sharpness:
            spread = np.sum(weights * products, axis=-2) - trace.states[index]
            d_sharpness += float(np.sum(error * spread)) / delta
        error = np.einsum("...ij,...j->...i", weights * entries, error)

    return GradientSet(tuple(grads), d_sharpness if net.trainable_sharpness else None)


def backward(net: FdesNetwork, states: ForwardTrace, target) -> GradientSet:
    """Gradients of cost(qL, target) with respect to every event entry."""
    goal = np.asarray(target, dtype=float)
    if goal.shape != states.output.shape:
        raise DimensionError(f"target shape {goal.shape} does not match output {states.output.shape}")
    return backward_from_signal(net, states, states.output - goal)


def _with_entry(net: FdesNetwork, layer: int, row: int, col: int, value: float) -> FdesNetwork:
    entries = np.array(net.layers[layer].entries)
    entries[row, col] = value
    layers = list(net.layers)
    layers[layer] = FuzzyEventMatrix(entries, net.layers[layer].label)
    return replace(net, layers=tuple(layers))


def _difference(objective, make, center: float, step: float, lower: float, upper: float) -> float:
    """Central difference, shrinking the step so [lower, upper] is never crossed."""
    room = min(step, center - lower, upper - center)
    if room > 0:
        high, low = center + room, center - room
    elif center - lower <= 0:
        high, low = center + step, center
    else:
        high, low = center, center - step
    return (objective(make(high)) - objective(make(low))) / (high - low)


def numerical_gradients(
    net: FdesNetwork,
    objective: Callable[[FdesNetwork], float],
    step: float = 1e-6,
) -> GradientSet:
    """Finite-difference gradients of an arbitrary scalar objective of the network."""
    if not step > 0:
        raise ParameterError(f"finite-difference step must be positive, got {step}")

    grads = []
    for index, layer in enumerate(net.layers):
        estimate = np.zeros_like(layer.entries)
        for row, col in np.ndindex(layer.entries.shape):
            estimate[row, col] = _difference(
                objective,
                lambda value, r=row, c=col: _with_entry(net, index, r, c, value),
                float(layer.entries[row, col]),
                step,
                0.0,
                1.0,
            )
        grads.append(estimate)

    d_sharpness = None
    if net.trainable_sharpness:
        d_sharpness = _difference(
            objective,
            lambda value: replace(net, sharpness=value),
            net.sharpness,
            step,
            MIN_SHARPNESS,
            np.inf,
        )
    return GradientSet(tuple(grads), d_sharpness)


def finite_diff_gradients(net: FdesNetwork, q0, target, step: float = 1e-6) -> GradientSet:
    """Central-difference oracle for ``backward``."""
    goal = as_state(target, net.dimension, strict=False)

    def objective(candidate: FdesNetwork) -> float:
        return float(np.sum(cost(forward(candidate, q0).output, goal)))

    return numerical_gradients(net, objective, step)


def relative_error(analytic: GradientSet, numeric: GradientSet) -> float:
    """||a - b|| / (||a|| + ||b||) over every gradient entry."""
    a, b = analytic.flat(), numeric.flat()
    if a.shape != b.shape:
        raise DimensionError(f"gradient sets differ in size: {a.size} vs {b.size}")
    scale = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def sgd_step(net: FdesNetwork, grads: GradientSet, rate: float) -> FdesNetwork:
    """Projected gradient step: a <- clip(a - rate * g, 0, 1)."""
    if not np.isfinite(rate) or rate < 0:
        raise ParameterError(f"learning rate must be non-negative, got {rate}")
    if len(grads.layers) != net.depth or any(
        g.shape != layer.entries.shape for g, layer in zip(grads.layers, net.layers)
    ):
        raise DimensionError("gradient set does not mirror the network layers")
    if not grads.is_finite():
        raise NumericalError("gradient contains non-finite entries")

    layers = tuple(
        FuzzyEventMatrix(np.clip(layer.entries - rate * g, 0.0, 1.0), layer.label)
        for layer, g in zip(net.layers, grads.layers)
    )
    sharpness = net.sharpness
    if net.trainable_sharpness and grads.sharpness is not None:
        sharpness = max(sharpness - rate * grads.sharpness, MIN_SHARPNESS)
    return replace(net, layers=layers, sharpness=sharpness)


def init_network(
    dimension: int,
    depth: int,
    seed: int,
    sharpness: float = DEFAULT_SHARPNESS,
    trainable_sharpness: bool = False,
    labels: Optional[Iterable[str]] = None,
) -> FdesNetwork:
    """Random network with entries drawn uniformly from INIT_RANGE."""
    if dimension < 1 or depth < 1:
        raise ParameterError(f"dimension and depth must be >= 1, got {dimension} and {depth}")
    labels = list(labels) if labels is not None else [f"event_{k + 1}" for k in range(depth)]
    if len(labels) != depth:
        raise ParameterError(f"expected {depth} labels, got {len(labels)}")
    rng = get_rng(seed, "fdes-init")
    low, high = INIT_RANGE
    layers = tuple(
        FuzzyEventMatrix(rng.uniform(low, high, size=(dimension, dimension)), label)
        for label in labels
    )
    return FdesNetwork(layers, sharpness, trainable_sharpness)


def identity_network(dimension: int, depth: int, sharpness: float = DEFAULT_SHARPNESS) -> FdesNetwork:
    return FdesNetwork(
        tuple(FuzzyEventMatrix.identity(dimension, f"event_{k + 1}") for k in range(depth)),
        sharpness,
    )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    rate: float = 0.5
    seed: int = 42
    # used only when train() is given no starting network
    layers: int = 1
    sharpness: float = DEFAULT_SHARPNESS
    trainable_sharpness: bool = False
    patience: Optional[int] = None
    tolerance: float = 0.0
    progress: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if not np.isfinite(self.rate) or self.rate <= 0:
            raise ParameterError(f"learning rate must be positive, got {self.rate}")
        if self.patience is not None and self.patience < 1:
            raise ParameterError(f"patience must be >= 1, got {self.patience}")
        if self.tolerance < 0:
            raise ParameterError(f"tolerance must be >= 0, got {self.tolerance}")


@dataclass(frozen=True, eq=False)
class TrainResult:
    network: FdesNetwork
    history: Tuple[float, ...]
    final_loss: float
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.history)


TrainingSample = Tuple[np.ndarray, np.ndarray, float]


def stack_samples(samples: Iterable[TrainingSample], dimension: Optional[int] = None):
    """Split (q0, target, weight) triples into state, target and weight arrays."""
    samples = list(samples)
    if not samples:
        raise InputError("training needs at least one sample")
    starts, targets, weights = zip(*samples)
    starts = as_state(np.stack([np.asarray(s, dtype=float) for s in starts]), dimension)
    targets = as_state(np.stack([np.asarray(t, dtype=float) for t in targets]), starts.shape[-1], strict=False)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ParameterError("sample weights must be finite and non-negative")
    return starts, targets, weights


def weighted_cost(net: FdesNetwork, starts: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> float:
    per_sample = cost(forward(net, starts).output, targets)
    return float(np.dot(weights, per_sample) / np.sum(weights))


def train(net: Optional[FdesNetwork], samples: Iterable[TrainingSample], config: TrainConfig) -> TrainResult:
    """
    Full-batch projected gradient descent on the weighted mean cost.

    Samples with zero weight are dropped before training. When ``net`` is
    None a network is initialised from ``config.seed``.
    """
    starts, targets, weights = stack_samples(samples, net.dimension if net is not None else None)
    keep = weights > 0
    if not np.any(keep):
        raise InputError("every training sample has zero weight")
    starts, targets, weights = starts[keep], targets[keep], weights[keep]
    scale = weights / np.sum(weights)

    if net is None:
        net = init_network(
            starts.shape[-1], config.layers, config.seed, config.sharpness, config.trainable_sharpness
        )

    logger.info(
        f"Training FDES network N={net.dimension} L={net.depth} delta={net.sharpness:g} "
        f"on {len(scale)} samples for up to {config.epochs} epochs"
    )
    history: List[float] = []
    best = np.inf
    stale = 0
    stopped_early = False
    for epoch in tqdm(range(config.epochs), desc="fdes train", disable=not config.progress):
        trace = forward(net, starts)
        residual = trace.output - targets
        loss = float(np.dot(scale, 0.5 * np.sum(residual ** 2, axis=-1)))
        if not np.isfinite(loss):
            raise NumericalError(f"training loss became non-finite at epoch {epoch}")
        history.append(loss)

        if config.patience is not None:
            if loss < best - config.tolerance:
                best, stale = loss, 0
            else:
                stale += 1
                if stale >= config.patience:
                    stopped_early = True
                    logger.info(f"Early stop at epoch {epoch}: no improvement for {stale} epochs")
                    break

        grads = backward_from_signal(net, trace, residual * scale[:, None])
        net = sgd_step(net, grads, config.rate)

    final_loss = float(np.dot(scale, cost(forward(net, starts).output, targets)))
    logger.info(f"Training finished after {len(history)} epochs, final loss {final_loss:.6g}")
    return TrainResult(net, tuple(history), final_loss, stopped_early)
