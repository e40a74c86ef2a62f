from pathlib import Path

import numpy as np
import pytest

from backend.errors import DegenerateInputError, DimensionError, InputError, IoError, ParameterError
from backend.pair_screen import (
    PairScreener,
    load_universe,
    pearson_corr,
    permutation_pvalue,
    read_pairs_csv,
    screen_universe,
    write_pairs_csv,
)
from backend.utils import load_universe_file
from tests.conftest import make_series, random_walk, write_prices

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


# -- correlation ------------------------------------------------------------------

def test_pearson_examples():
    x = np.array([1.0, 4.0, 2.0, 8.0])
    assert pearson_corr(x, x) == pytest.approx(1.0)
    assert pearson_corr(x, -x) == pytest.approx(-1.0)
    assert pearson_corr([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9820, abs=1e-4)


def test_pearson_errors():
    with pytest.raises(DegenerateInputError):
        pearson_corr([1, 1, 1], [1, 2, 3])
    with pytest.raises(DimensionError):
        pearson_corr([1, 2, 3], [1, 2, 3, 4])
    with pytest.raises(InputError):
        pearson_corr([1, 2], [2, 1])


# -- permutation test -------------------------------------------------------------

def test_perfect_correlation_hits_floor():
    x = np.random.default_rng(0).standard_normal(50)
    assert permutation_pvalue(x, x, permutations=1000, seed=1) == pytest.approx(1 / 1001)


def test_pvalue_is_deterministic_and_bounded(rng):
    x, y = rng.standard_normal(40), rng.standard_normal(40)
    p = permutation_pvalue(x, y, permutations=500, seed=3)
    assert p == permutation_pvalue(x, y, permutations=500, seed=3)
    assert 1 / 501 <= p <= 1.0


def test_pvalue_rejects_too_few_permutations():
    with pytest.raises(ParameterError):
        permutation_pvalue([1, 2, 3], [3, 1, 2], permutations=10)


def test_independent_series_mostly_not_significant():
    large = 0
    for trial in range(100):
        rng = np.random.default_rng(10_000 + trial)
        x, y = rng.standard_normal(100), rng.standard_normal(100)
        large += permutation_pvalue(x, y, permutations=999, seed=trial) > 0.05
    assert large >= 90


def test_type_one_rate_roughly_calibrated():
    trials, rejected = 200, 0
    for trial in range(trials):
        rng = np.random.default_rng(20_000 + trial)
        x, y = rng.standard_normal(60), rng.standard_normal(60)
        p = permutation_pvalue(x, y, permutations=199, seed=trial)
        assert p >= 1 / 200
        rejected += p < 0.05
    assert 0.01 <= rejected / trials <= 0.10


@pytest.mark.slow
def test_type_one_rate_calibrated_at_full_size():
    trials, rejected = 1000, 0
    for trial in range(trials):
        rng = np.random.default_rng(30_000 + trial)
        x, y = rng.standard_normal(100), rng.standard_normal(100)
        p = permutation_pvalue(x, y, permutations=10_000, seed=trial)
        assert p >= 1 / 10_001
        rejected += p < 0.05
    assert 0.03 <= rejected / trials <= 0.07


# -- screening --------------------------------------------------------------------

def test_two_identical_series_give_one_selected_pair():
    closes = random_walk(60, seed=4)
    universe = {"AAA": make_series(closes, "AAA"), "BBB": make_series(closes, "BBB")}
    results = screen_universe(universe, permutations=200, seed=1)
    assert len(results) == 1
    assert results[0].selected
    assert results[0].name == "AAA/BBB"
    assert results[0].p == pytest.approx(1 / 201)


def test_screen_counts_and_sorts():
    universe = {t: make_series(random_walk(50, seed=i), t) for i, t in enumerate(["D", "A", "C", "B", "E"])}
    results = PairScreener(permutations=100, max_workers=2).screen(universe)
    assert len(results) == 10
    keys = [(-abs(r.r), r.ticker_a, r.ticker_b) for r in results]
    assert keys == sorted(keys)
    assert all(r.ticker_a < r.ticker_b for r in results)


def test_screen_is_independent_of_order_and_workers():
    tickers = ["KK", "JJ", "II", "HH"]
    forward = {t: make_series(random_walk(40, seed=i), t) for i, t in enumerate(tickers)}
    backward = dict(reversed(list(forward.items())))
    serial = PairScreener(permutations=150, seed=9, max_workers=1).screen(forward)
    parallel = PairScreener(permutations=150, seed=9, max_workers=4).screen(backward)
    assert serial == parallel


def test_screen_skips_pairs_without_common_dates():
    universe = {
        "AAA": make_series(random_walk(30, seed=1), "AAA", start="2020-01-01"),
        "BBB": make_series(random_walk(30, seed=2), "BBB", start="2020-01-01"),
        "ZZZ": make_series(random_walk(30, seed=3), "ZZZ", start="2023-01-02"),
    }
    screener = PairScreener(permutations=100)
    results = screener.screen(universe)
    assert [r.name for r in results] == ["AAA/BBB"]
    assert [(a, b) for a, b, _ in screener.skipped] == [("AAA", "ZZZ"), ("BBB", "ZZZ")]


def test_screen_needs_two_tickers():
    with pytest.raises(InputError):
        PairScreener(permutations=100).screen({"AAA": make_series([1.0, 2.0, 3.0], "AAA")})


def test_screener_parameter_checks():
    with pytest.raises(ParameterError):
        PairScreener(threshold=1.5)
    with pytest.raises(ParameterError):
        PairScreener(alpha=0.0)
    with pytest.raises(ParameterError):
        PairScreener(max_workers=0)


def test_universe_88_fixture_yields_all_pairs():
    tickers = load_universe_file(DATA_DIR / "universe_88.txt")
    assert len(tickers) == 88
    universe = {t: make_series(random_walk(30, seed=i), t) for i, t in enumerate(tickers)}
    results = PairScreener(permutations=100, max_workers=4).screen(universe)
    assert len(results) == 88 * 87 // 2 == 3828


# -- files ------------------------------------------------------------------------

def test_pairs_csv_round_trip(tmp_path, price_dir):
    results = PairScreener(permutations=100).screen(load_universe(price_dir))
    path = write_pairs_csv(results, tmp_path / "out" / "pairs.csv")
    assert path.read_text().splitlines()[0] == "ticker_a,ticker_b,r,p,selected"
    again = read_pairs_csv(path)
    assert [(r.ticker_a, r.ticker_b, r.selected) for r in again] == [
        (r.ticker_a, r.ticker_b, r.selected) for r in results
    ]
    np.testing.assert_array_equal([r.r for r in again], [r.r for r in results])
    np.testing.assert_array_equal([r.p for r in again], [r.p for r in results])
    assert again[0].name == "AAA/BBB" and again[0].selected


def test_load_universe_restricts_to_listed_tickers(price_dir):
    assert sorted(load_universe(price_dir)) == ["AAA", "BBB", "CCC"]
    assert sorted(load_universe(price_dir, ["CCC", "AAA"])) == ["AAA", "CCC"]
    with pytest.raises(IoError):
        load_universe(price_dir, ["AAA", "QQQ"])


def test_load_universe_skips_audit_files(price_dir):
    write_prices(price_dir, "samples_AAA", [1.0, 2.0, 3.0])
    assert "samples_AAA" not in load_universe(price_dir)
