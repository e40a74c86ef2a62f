"""
Run configuration.

A run is described by an INI file with one section per concern:

    [run]       seed, data_dir, out_dir, progress, docx
    [fdes]      dimension, layers, delta, rate, epochs, train_sharpness, patience, tolerance
                (the adjuster generator: its shape and supervised pre-training)
    [window]    size, horizon, decay, decay_rate
    [screen]    permutations, threshold, alpha, workers, universe
    [gan]       rounds, generator_steps, discriminator_steps, generator_rate,
                discriminator_rate, supervised_weight, adversarial_weight,
                pretrain, library_dir
    [backtest]  train_days, refit_interval, ridge, baseline
    [simulate]  kind, paths, steps, s0, mu, sigma, kappa, event_rate, decay
    [gradcheck] instances, step, tolerance, train_sharpness

Every key is optional; unknown sections or keys are rejected. Values are
validated by building the owning module's own config objects.
"""

import configparser
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

from dotenv import load_dotenv

from backend.adversarial import GanConfig
from backend.backtest import BacktestConfig, build_baseline
from backend.errors import ConfigError, FdesqError
from backend.fdes import TrainConfig
from backend.market_data import DECAY_SCHEMES, decay_weights
from backend.pair_screen import PairScreener
from backend.synthetic import EventMarketParams, GbmParams

logger = logging.getLogger(__name__)

SIMULATION_KINDS = ("gbm", "event", "fdes")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass(frozen=True)
class RunParams:
    seed: int = 42
    data_dir: str = "data"
    out_dir: str = "output"
    progress: bool = False
    docx: bool = False


@dataclass(frozen=True)
class FdesParams:
    dimension: int = 10
    layers: int = 2
    delta: float = 10.0
    rate: float = 0.5
    epochs: int = 500
    train_sharpness: bool = False
    patience: int = 0  # 0 disables early stopping
    tolerance: float = 0.0


@dataclass(frozen=True)
class WindowParams:
    size: int = 10
    horizon: int = 1
    decay: str = "linear"
    decay_rate: float = 0.8


@dataclass(frozen=True)
class ScreenParams:
    permutations: int = 10_000
    threshold: float = 0.95
    alpha: float = 0.05
    workers: int = 4
    universe: str = ""


@dataclass(frozen=True)
class GanParams:
    rounds: int = 200
    generator_steps: int = 1
    discriminator_steps: int = 1
    generator_rate: float = 0.5
    discriminator_rate: float = 0.1
    supervised_weight: float = 1.0
    adversarial_weight: float = 0.1
    blend: float = 0.5
    pretrain: bool = True
    library_dir: str = ""


@dataclass(frozen=True)
class BacktestParams:
    train_days: int = 250
    refit_interval: int = 0
    ridge: float = 0.0
    baseline: str = "weighted_linear"


@dataclass(frozen=True)
class SimulateParams:
    kind: str = "event"
    paths: int = 4
    steps: int = 500
    s0: float = 100.0
    mu: float = 0.0
    sigma: float = 0.01
    kappa: float = 0.008
    event_rate: float = 0.03
    decay: float = 0.98


@dataclass(frozen=True)
class GradcheckParams:
    instances: int = 100
    step: float = 1e-6
    tolerance: float = 1e-4
    train_sharpness: bool = False


_SECTIONS = {
    "run": RunParams,
    "fdes": FdesParams,
    "window": WindowParams,
    "screen": ScreenParams,
    "gan": GanParams,
    "backtest": BacktestParams,
    "simulate": SimulateParams,
    "gradcheck": GradcheckParams,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunParams = field(default_factory=RunParams)
    fdes: FdesParams = field(default_factory=FdesParams)
    window: WindowParams = field(default_factory=WindowParams)
    screen: ScreenParams = field(default_factory=ScreenParams)
    gan: GanParams = field(default_factory=GanParams)
    backtest: BacktestParams = field(default_factory=BacktestParams)
    simulate: SimulateParams = field(default_factory=SimulateParams)
    gradcheck: GradcheckParams = field(default_factory=GradcheckParams)

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def data_dir(self) -> Path:
        return Path(self.run.data_dir)

    @property
    def out_dir(self) -> Path:
        return Path(self.run.out_dir)

    # -- module configs --------------------------------------------------------

    def gan_config(self) -> GanConfig:
        g = self.gan
        return GanConfig(
            rounds=g.rounds,
            generator_steps=g.generator_steps,
            discriminator_steps=g.discriminator_steps,
            generator_rate=g.generator_rate,
            discriminator_rate=g.discriminator_rate,
            seed=self.seed,
            layers=self.fdes.layers,
            sharpness=self.fdes.delta,
            supervised_weight=g.supervised_weight,
            adversarial_weight=g.adversarial_weight,
            blend=g.blend,
            progress=self.run.progress,
        )

    def pretrain_config(self) -> Optional[TrainConfig]:
        if not self.gan.pretrain:
            return None
        f = self.fdes
        return TrainConfig(
            epochs=f.epochs,
            rate=f.rate,
            seed=self.seed,
            layers=self.fdes.layers,
            sharpness=self.fdes.delta,
            trainable_sharpness=f.train_sharpness,
            patience=f.patience or None,
            tolerance=f.tolerance,
            progress=self.run.progress,
        )

    def backtest_config(self) -> BacktestConfig:
        return BacktestConfig(
            train_days=self.backtest.train_days,
            window=self.window.size,
            horizon=self.window.horizon,
            scheme=self.window.decay,
            rate=self.window.decay_rate,
            refit_interval=self.backtest.refit_interval,
        )

    def screener(self) -> PairScreener:
        s = self.screen
        return PairScreener(s.threshold, s.alpha, s.permutations, self.seed, s.workers, self.run.progress)

    def gbm_params(self) -> GbmParams:
        s = self.simulate
        return GbmParams(s.s0, s.mu, s.sigma, s.steps, s.paths, self.seed)

    def event_market_params(self, seed: Optional[int] = None) -> EventMarketParams:
        s = self.simulate
        return EventMarketParams(
            s.s0, s.steps, s.sigma, s.kappa, s.event_rate, s.decay, self.seed if seed is None else seed
        )

    def validate(self) -> "RunConfig":
        """Re-check every value against the owning module; raises ConfigError."""
        try:
            if self.fdes.dimension < 1 or self.fdes.layers < 1:
                raise ConfigError("[fdes] dimension and layers must be >= 1")
            if self.fdes.patience < 0:
                raise ConfigError("[fdes] patience must be >= 0")
            if self.fdes.dimension != self.window.size:
                raise ConfigError(
                    f"[fdes] dimension {self.fdes.dimension} must equal [window] size {self.window.size}"
                )
            TrainConfig(
                epochs=self.fdes.epochs,
                rate=self.fdes.rate,
                sharpness=self.fdes.delta,
                patience=self.fdes.patience or None,
                tolerance=self.fdes.tolerance,
            )
            if not self.fdes.delta > 0:
                raise ConfigError(f"[fdes] delta must be positive, got {self.fdes.delta}")
            if self.window.decay not in DECAY_SCHEMES:
                raise ConfigError(f"[window] decay must be one of {DECAY_SCHEMES}, got {self.window.decay!r}")
            decay_weights(self.window.size, self.window.decay, self.window.decay_rate)
            self.gan_config()
            self.backtest_config()
            self.screener()
            build_baseline(self.backtest.baseline, self.backtest.ridge)
            if self.simulate.kind not in SIMULATION_KINDS:
                raise ConfigError(f"[simulate] kind must be one of {SIMULATION_KINDS}, got {self.simulate.kind!r}")
            self.gbm_params()
            self.event_market_params()
            g = self.gradcheck
            if g.instances < 1 or not g.step > 0 or not g.tolerance > 0:
                raise ConfigError("[gradcheck] instances must be >= 1 and step, tolerance positive")
        except ConfigError:
            raise
        except (FdesqError, ValueError) as e:
            raise ConfigError(str(e)) from e
        return self

    def echo(self) -> Dict[str, str]:
        """Flat `section.key -> value` map, sorted by key."""
        flat = {}
        for section in _SECTIONS:
            params = getattr(self, section)
            for f in fields(params):
                flat[f"{section}.{f.name}"] = _render(getattr(params, f.name))
        return dict(sorted(flat.items()))


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(section: str, key: str, raw: str, kind: type):
    text = raw.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(text)
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}")
    return text


def _split_override(item: str):
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    name, value = item.split("=", 1)
    section, key = name.strip().lower().split(".", 1)
    return section, key.strip(), value


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    data_dir: Optional[str] = None,
) -> RunConfig:
    """
    Build a RunConfig from an optional INI file plus overrides.

    Precedence: defaults < file < `section.key=value` overrides < explicit
    seed/out_dir/data_dir arguments.
    """
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from e

    values: Dict[str, Dict[str, str]] = {section: {} for section in _SECTIONS}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        values[section].update(parser.items(section))
    for item in overrides:
        section, key, value = _split_override(item)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}] in override {item!r}")
        values[section][key] = value
    for key, value in (("seed", seed), ("out_dir", out_dir), ("data_dir", data_dir)):
        if value is not None:
            values["run"][key] = str(value)

    built = {}
    for section, params_type in _SECTIONS.items():
        known = {f.name: f.type for f in fields(params_type)}
        kwargs = {}
        for key, raw in values[section].items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            kwargs[key] = _coerce(section, key, raw, known[key])
        built[section] = params_type(**kwargs)

    config = RunConfig(**built).validate()
    logger.debug(f"Loaded configuration from {path or 'defaults'}")
    return config


def log_level() -> int:
    """Level named by FDESQ_LOG (environment or .env file), INFO by default."""
    load_dotenv()
    name = os.getenv("FDESQ_LOG", "INFO").strip().upper()
    if name not in LOG_LEVELS:
        return logging.INFO
    return getattr(logging, name)

