# backend/market_data.py

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from backend.errors import (
    DataError,
    DegenerateRangeError,
    InputError,
    IoError,
    ParameterError,
    ParseError,
    RangeError,
)

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 10
DECAY_SCHEMES = ("linear", "exponential")


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Daily closes of one ticker, strictly increasing in date."""

    ticker: str
    dates: np.ndarray
    closes: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        closes = np.asarray(self.closes, dtype=float)
        if dates.ndim != 1 or closes.shape != dates.shape:
            raise DataError(f"{self.ticker}: dates and closes must be 1-D of equal length")
        if dates.size > 1 and np.any(np.diff(dates).astype(int) <= 0):
            raise DataError(f"{self.ticker}: dates must be strictly increasing")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0):
            raise DataError(f"{self.ticker}: closes must be positive finite prices")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "closes", closes)

    def __len__(self) -> int:
        return self.closes.size

    def head(self, count: int) -> "PriceSeries":
        return PriceSeries(self.ticker, self.dates[:count], self.closes[:count])


@dataclass(frozen=True)
class Scaler:
    """Affine min-max map between prices and the [0, 1] fuzzy domain."""

    minimum: float
    maximum: float

    def __post_init__(self):
        if not (np.isfinite(self.minimum) and np.isfinite(self.maximum)) or self.minimum >= self.maximum:
            raise DegenerateRangeError(f"scaler needs min < max, got ({self.minimum}, {self.maximum})")

    @classmethod
    def fit(cls, prices) -> "Scaler":
        prices = np.asarray(prices, dtype=float)
        if prices.size < 2:
            raise InputError("normalisation needs at least two prices")
        low, high = float(np.min(prices)), float(np.max(prices))
        if low == high:
            raise DegenerateRangeError(f"constant series at {low} cannot be normalised")
        return cls(low, high)

    @property
    def span(self) -> float:
        return self.maximum - self.minimum

    def transform(self, prices) -> np.ndarray:
        return (np.asarray(prices, dtype=float) - self.minimum) / self.span

    def inverse(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.span + self.minimum


@dataclass(frozen=True, eq=False)
class NormalizedSeries:
    ticker: str
    dates: np.ndarray
    values: np.ndarray
    scaler: Scaler

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class RollingWindowSample:
    """Window of W normalized closes (oldest first), decay weights and next-day target."""

    window: np.ndarray
    weights: np.ndarray
    target: float
    index: int  # position of "today" (the newest window day) in the source series


def _parse_close(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def ingest_csv(path: Union[str, Path], ticker: Optional[str] = None) -> PriceSeries:
    """Load a `date,close` CSV (extra columns ignored), sorted by date."""
    path = Path(path)
    if not path.is_file():
        raise IoError("Price file not found", str(path))
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise ParseError("file is empty", str(path), 1)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"unreadable CSV: {e}", str(path))
    except OSError as e:
        raise IoError(f"Cannot read price file ({e})", str(path))

    frame.columns = [str(c).strip().lower() for c in frame.columns]
    missing = {"date", "close"} - set(frame.columns)
    if missing:
        raise ParseError(f"missing columns {sorted(missing)}; header must contain date,close", str(path), 1)

    # header is line 1; blank lines are kept by the reader so positions map to file lines
    frame = frame.fillna("").apply(lambda column: column.str.strip())
    content = (frame != "").any(axis=1).to_numpy()
    lines = (np.flatnonzero(content) + 2).tolist()
    frame = frame[content].reset_index(drop=True)

    dates = pd.to_datetime(frame["date"], format="%Y-%m-%d", errors="coerce")
    closes = frame["close"].map(_parse_close)
    for position, line in enumerate(lines):
        if pd.isna(dates.iloc[position]):
            raise ParseError(f"invalid ISO-8601 date {frame['date'].iloc[position]!r}", str(path), line)
        if not np.isfinite(closes.iloc[position]):
            raise ParseError(f"invalid close {frame['close'].iloc[position]!r}", str(path), line)
        if closes.iloc[position] <= 0:
            raise DataError(f"{path}:{line}: close must be positive, got {closes.iloc[position]}")

    duplicated = dates.duplicated(keep=False)
    if duplicated.any():
        first = dates[duplicated].iloc[0].date().isoformat()
        raise DataError(f"{path}: duplicate date {first}")

    order = np.argsort(dates.to_numpy(dtype="datetime64[D]"), kind="stable")
    series = PriceSeries(
        ticker or path.stem,
        dates.to_numpy(dtype="datetime64[D]")[order],
        closes.to_numpy(dtype=float)[order],
    )
    logger.debug(f"Loaded {len(series)} closes for {series.ticker} from {path}")
    return series


def write_csv(series: PriceSeries, path: Union[str, Path]) -> None:
    frame = pd.DataFrame({"date": np.datetime_as_string(series.dates, unit="D"), "close": series.closes})
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def normalize(series: PriceSeries, scaler: Optional[Scaler] = None) -> NormalizedSeries:
    """
    Map closes into [0, 1] with an affine min-max scaler.

    Pass a scaler fitted on a training segment to reuse it on later data;
    values outside the training range then fall outside [0, 1].
    """
    if len(series) < 2:
        raise InputError(f"{series.ticker}: normalisation needs at least two closes")
    scaler = scaler or Scaler.fit(series.closes)
    return NormalizedSeries(series.ticker, series.dates, scaler.transform(series.closes), scaler)


def denormalize(values, scaler: Scaler) -> np.ndarray:
    return scaler.inverse(values)


def roi_extract(series: Union[NormalizedSeries, np.ndarray], start: int, length: int, pool: int = 1) -> np.ndarray:
    """Slice [start, start+length) and average-pool consecutive groups of `pool` values."""
    values = series.values if isinstance(series, NormalizedSeries) else np.asarray(series, dtype=float)
    if pool < 1 or length < 1 or length % pool:
        raise ParameterError(f"pool factor {pool} must divide window length {length}")
    if start < 0 or start + length > values.size:
        raise RangeError(f"window [{start}, {start + length}) does not fit a series of length {values.size}")
    return values[start:start + length].reshape(-1, pool).mean(axis=1)


def decay_weights(window: int = DEFAULT_WINDOW, scheme: str = "linear", rate: float = 0.8) -> np.ndarray:
    """Weights oldest -> newest; the newest (lag 0) weight is 1."""
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    lags = np.arange(window - 1, -1, -1)
    if scheme == "linear":
        return (window - lags) / window
    if scheme == "exponential":
        if not 0 < rate <= 1:
            raise ParameterError(f"exponential decay rate must lie in (0, 1], got {rate}")
        return rate ** lags
    raise ParameterError(f"unknown decay scheme {scheme!r}; expected one of {DECAY_SCHEMES}")


def rolling_windows(
    series: Union[NormalizedSeries, np.ndarray],
    window: int = DEFAULT_WINDOW,
    horizon: int = 1,
    scheme: str = "linear",
    rate: float = 0.8,
) -> List[RollingWindowSample]:
    """All (window, weights, target) samples; target is `horizon` days after the window's last day."""
    values = series.values if isinstance(series, NormalizedSeries) else np.asarray(series, dtype=float)
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    weights = decay_weights(window, scheme, rate)
    count = values.size - window - horizon + 1
    if count < 1:
        raise InputError(
            f"series of length {values.size} yields 0 samples for window {window} and horizon {horizon}"
        )
    weights.setflags(write=False)
    return [
        RollingWindowSample(
            window=values[start:start + window].copy(),
            weights=weights,
            target=float(values[start + window - 1 + horizon]),
            index=start + window - 1,
        )
        for start in range(count)
    ]


def samples_frame(samples: Sequence[RollingWindowSample]) -> pd.DataFrame:
    """Audit table with columns t0..t{W-1}, w0..w{W-1}, target."""
    if not samples:
        raise InputError("no samples to tabulate")
    width = samples[0].window.size
    windows = np.stack([s.window for s in samples])
    weights = np.stack([s.weights for s in samples])
    frame = pd.DataFrame(windows, columns=[f"t{k}" for k in range(width)])
    for k in range(width):
        frame[f"w{k}"] = weights[:, k]
    frame["target"] = [s.target for s in samples]
    return frame


def write_samples_csv(samples: Sequence[RollingWindowSample], path: Union[str, Path]) -> None:
    samples_frame(samples).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
