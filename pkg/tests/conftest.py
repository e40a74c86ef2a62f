from pathlib import Path

import numpy as np
import pytest

from backend.market_data import PriceSeries
from backend.synthetic import trading_days


def make_series(closes, ticker: str = "TEST", start: str = "2021-01-04") -> PriceSeries:
    closes = np.asarray(closes, dtype=float)
    return PriceSeries(ticker, trading_days(closes.size, start), closes)


def random_walk(count: int, seed: int, s0: float = 100.0, sigma: float = 0.01) -> np.ndarray:
    steps = np.random.default_rng(seed).standard_normal(count - 1) * sigma
    return s0 * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))


def write_prices(directory: Path, ticker: str, closes, start: str = "2021-01-04") -> Path:
    series = make_series(closes, ticker, start)
    path = Path(directory) / f"{ticker}.csv"
    lines = ["date,close"]
    lines += [f"{d},{c!r}" for d, c in zip(np.datetime_as_string(series.dates, unit="D"), series.closes.tolist())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def walk_series():
    return make_series(random_walk(320, seed=7), "WALK")


@pytest.fixture
def price_dir(tmp_path):
    """Three tickers: two perfectly correlated, one independent."""
    data = tmp_path / "data"
    data.mkdir()
    base = random_walk(120, seed=1)
    write_prices(data, "AAA", base)
    write_prices(data, "BBB", 2.0 * base + 5.0)
    write_prices(data, "CCC", random_walk(120, seed=2))
    return data
