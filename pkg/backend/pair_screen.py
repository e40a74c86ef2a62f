"""
Correlated-pair screening with a resampling significance test.

Every unordered pair of a universe is aligned on its common dates, its
Pearson correlation is computed on closing prices, and a permutation
test (shuffling one series) estimates how often an uncorrelated
arrangement of the same values reaches the observed |r|. A pair is
selected when |r| exceeds the threshold and the p-value is below alpha.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from backend.errors import DegenerateInputError, DimensionError, InputError, IoError, ParameterError
from backend.market_data import PriceSeries, ingest_csv
from backend.seeding import derive_seed, get_rng
from backend.utils import atomic_write_text, discover_ticker_files

logger = logging.getLogger(__name__)

DEFAULT_PERMUTATIONS = 10_000
MIN_PERMUTATIONS = 100
TIE_TOLERANCE = 1e-12
_BATCH = 1000


def _check_pair(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise DimensionError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 3:
        raise InputError(f"correlation needs at least 3 observations, got {x.size}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInputError("correlation is undefined for a constant series")
    return x, y


def pearson_corr(x, y) -> float:
    x, y = _check_pair(x, y)
    return float(np.clip(stats.pearsonr(x, y).statistic, -1.0, 1.0))


def _unit_centered(values: np.ndarray) -> np.ndarray:
    centered = values - values.mean()
    return centered / np.linalg.norm(centered)


def permutation_pvalue(x, y, permutations: int = DEFAULT_PERMUTATIONS, seed: int = 42) -> float:
    """
    Two-sided permutation p-value for Pearson's r.

    p = (1 + #{|r_perm| >= |r_obs|}) / (permutations + 1), so p is never
    below 1 / (permutations + 1).
    """
    x, y = _check_pair(x, y)
    if permutations < MIN_PERMUTATIONS:
        raise ParameterError(f"need at least {MIN_PERMUTATIONS} permutations, got {permutations}")

    # on unit-norm centred vectors r is a dot product
    xz, yz = _unit_centered(x), _unit_centered(y)
    observed = abs(float(xz @ yz))
    rng = get_rng(seed)
    exceed = 0
    for start in range(0, permutations, _BATCH):
        count = min(_BATCH, permutations - start)
        shuffled = rng.permuted(np.tile(yz, (count, 1)), axis=1)
        exceed += int(np.sum(np.abs(shuffled @ xz) >= observed - TIE_TOLERANCE))
    return (1 + exceed) / (permutations + 1)


@dataclass(frozen=True)
class PairResult:
    ticker_a: str
    ticker_b: str
    r: float
    p: float
    selected: bool
    overlap: int = 0

    @property
    def name(self) -> str:
        return f"{self.ticker_a}/{self.ticker_b}"


def align_on_dates(a: PriceSeries, b: PriceSeries) -> Tuple[np.ndarray, np.ndarray]:
    """Closes of both series restricted to their common dates."""
    _, ia, ib = np.intersect1d(a.dates, b.dates, assume_unique=True, return_indices=True)
    return a.closes[ia], b.closes[ib]


class PairScreener:
    """Evaluates all unordered pairs of a universe, in parallel, deterministically."""

    def __init__(
        self,
        threshold: float = 0.95,
        alpha: float = 0.05,
        permutations: int = DEFAULT_PERMUTATIONS,
        seed: int = 42,
        max_workers: int = 4,
        progress: bool = False,
    ):
        if not 0 <= threshold <= 1:
            raise ParameterError(f"correlation threshold must lie in [0, 1], got {threshold}")
        if not 0 < alpha <= 1:
            raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
        if permutations < MIN_PERMUTATIONS:
            raise ParameterError(f"need at least {MIN_PERMUTATIONS} permutations, got {permutations}")
        if max_workers < 1:
            raise ParameterError(f"max_workers must be >= 1, got {max_workers}")
        self.threshold = threshold
        self.alpha = alpha
        self.permutations = permutations
        self.seed = seed
        self.max_workers = max_workers
        self.progress = progress
        self.skipped: List[Tuple[str, str, str]] = []

    def evaluate_pair(self, a: PriceSeries, b: PriceSeries, names: Optional[Tuple[str, str]] = None) -> PairResult:
        name_a, name_b = names or (a.ticker, b.ticker)
        x, y = align_on_dates(a, b)
        if x.size == 0:
            raise InputError(f"{name_a} and {name_b} share no dates")
        r = pearson_corr(x, y)
        p = permutation_pvalue(x, y, self.permutations, derive_seed(self.seed, name_a, name_b))
        selected = abs(r) > self.threshold and p < self.alpha
        return PairResult(name_a, name_b, r, p, selected, int(x.size))

    def screen(self, universe: Mapping[str, PriceSeries]) -> List[PairResult]:
        tickers = sorted(universe)
        if len(tickers) < 2:
            raise InputError(f"screening needs at least 2 tickers, got {len(tickers)}")
        pairs = list(combinations(tickers, 2))
        logger.info(f"Screening {len(pairs)} pairs from {len(tickers)} tickers with {self.max_workers} workers")

        results: List[PairResult] = []
        skipped: List[Tuple[str, str, str]] = []
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {
                executor.submit(self.evaluate_pair, universe[a], universe[b], (a, b)): (a, b)
                for a, b in pairs
            }
            for future in tqdm(as_completed(futures), total=len(futures), desc="pairs", disable=not self.progress):
                a, b = futures[future]
                try:
                    results.append(future.result())
                except (InputError, DegenerateInputError, DimensionError) as e:
                    logger.warning(f"Skipping pair {a}/{b}: {e}")
                    skipped.append((a, b, str(e)))

        self.skipped = sorted(skipped)
        results.sort(key=lambda res: (-abs(res.r), res.ticker_a, res.ticker_b))
        selected = sum(res.selected for res in results)
        logger.info(f"Screened {len(results)} pairs ({len(self.skipped)} skipped), {selected} selected")
        return results


def screen_universe(
    universe: Mapping[str, PriceSeries],
    threshold: float = 0.95,
    alpha: float = 0.05,
    permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 42,
    max_workers: int = 4,
) -> List[PairResult]:
    return PairScreener(threshold, alpha, permutations, seed, max_workers).screen(universe)


def load_universe(data_dir: Union[str, Path], tickers: Optional[Iterable[str]] = None) -> Dict[str, PriceSeries]:
    """Ingest `<TICKER>.csv` files; restrict to `tickers` when given (each must exist)."""
    files = discover_ticker_files(data_dir)
    if tickers is not None:
        wanted = list(tickers)
        missing = [t for t in wanted if t not in files]
        if missing:
            raise IoError(f"No price file for {', '.join(missing[:5])}", str(data_dir))
        files = {t: files[t] for t in wanted}
    return {ticker: ingest_csv(path, ticker) for ticker, path in files.items()}


def pairs_frame(results: Iterable[PairResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.ticker_a, r.ticker_b, r.r, r.p, "true" if r.selected else "false") for r in results],
        columns=["ticker_a", "ticker_b", "r", "p", "selected"],
    )


def write_pairs_csv(results: Iterable[PairResult], path: Union[str, Path]) -> Path:
    text = pairs_frame(results).to_csv(index=False, float_format="%.17g", lineterminator="\n")
    return atomic_write_text(path, text)


def read_pairs_csv(path: Union[str, Path]) -> List[PairResult]:
    frame = pd.read_csv(
        path,
        dtype={"ticker_a": str, "ticker_b": str, "selected": str},
        keep_default_na=False,
        float_precision="round_trip",
    )
    return [
        PairResult(row.ticker_a, row.ticker_b, float(row.r), float(row.p), row.selected == "true")
        for row in frame.itertuples(index=False)
    ]
