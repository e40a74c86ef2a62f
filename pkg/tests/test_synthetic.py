import numpy as np
import pandas as pd
import pytest

from backend.errors import IoError, ParameterError, ParseError
from backend.fdes import FuzzyEventMatrix, compose_exact
from backend.serialization import load_network
from backend.synthetic import (
    EventMarketParams,
    EventSchedule,
    GbmParams,
    RecoveryConfig,
    ScheduledEvent,
    drift_event,
    event_market,
    fdes_price_series,
    generate_fdes_series,
    read_gbm_shocks,
    recovery_experiment,
    replay_gbm,
    simulate_gbm,
    simulate_gbm_paths,
    write_gbm_shocks,
    write_ground_truth,
)

SWAP = FuzzyEventMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]), "swap")


# -- GBM --------------------------------------------------------------------------

def test_zero_volatility_paths_are_deterministic():
    flat = simulate_gbm(GbmParams(s0=100.0, mu=0.0, sigma=0.0, steps=20, paths=3))
    for series in flat:
        np.testing.assert_array_equal(series.closes, 100.0)
    drift = simulate_gbm(GbmParams(s0=100.0, mu=0.01, sigma=0.0, steps=10, paths=1))
    assert drift[0].closes[-1] == pytest.approx(100.0 * np.exp(0.1), rel=1e-12)
    assert drift[0].closes[-1] == pytest.approx(110.517, abs=1e-3)


def test_mean_terminal_price_is_near_s0():
    paths = simulate_gbm_paths(GbmParams(s0=100.0, mu=0.0, sigma=0.02, steps=50, paths=10_000, seed=7))
    assert abs(paths.prices[:, -1].mean() - 100.0) < 1.0


def test_gbm_paths_replay_from_recorded_shocks():
    params = GbmParams(mu=0.001, sigma=0.03, steps=40, paths=5, seed=3)
    paths = simulate_gbm_paths(params)
    np.testing.assert_array_equal(replay_gbm(params.s0, params.mu, params.sigma, paths.shocks), paths.prices)
    increments = np.diff(np.log(paths.prices), axis=1)
    np.testing.assert_allclose(increments, params.mu - 0.5 * params.sigma ** 2 + params.sigma * paths.shocks, atol=1e-12)


def test_gbm_independent_of_worker_count():
    params = GbmParams(steps=30, paths=8, seed=11)
    serial = simulate_gbm_paths(params, max_workers=1)
    parallel = simulate_gbm_paths(params, max_workers=4)
    np.testing.assert_array_equal(serial.prices, parallel.prices)


def test_gbm_series_naming_and_dates():
    series = simulate_gbm(GbmParams(steps=5, paths=2), prefix="SIM")
    assert [s.ticker for s in series] == ["SIM000", "SIM001"]
    assert all(len(s) == 6 for s in series)
    assert np.all(np.diff(series[0].dates).astype(int) > 0)


@pytest.mark.parametrize(
    "overrides",
    [{"s0": 0.0}, {"sigma": -0.1}, {"steps": 0}, {"paths": 0}, {"mu": float("nan")}],
)
def test_gbm_params_validation(overrides):
    with pytest.raises(ParameterError):
        GbmParams(**overrides)


def test_gbm_shocks_file(tmp_path):
    params = GbmParams(steps=40, paths=3, seed=9)
    paths = simulate_gbm_paths(params)
    path = write_gbm_shocks(paths, tmp_path)
    assert path.name == "GBM_shocks.csv"
    assert path.read_text().splitlines()[0] == "step,GBM000,GBM001,GBM002"
    shocks = read_gbm_shocks(path)
    np.testing.assert_array_equal(shocks, paths.shocks)
    np.testing.assert_array_equal(replay_gbm(params.s0, params.mu, params.sigma, shocks), paths.prices)


def test_read_gbm_shocks_errors(tmp_path):
    with pytest.raises(IoError):
        read_gbm_shocks(tmp_path / "absent.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("day,GBM000\n1,0.5\n")
    with pytest.raises(ParseError):
        read_gbm_shocks(bad)


@pytest.mark.slow
def test_many_gbm_paths_in_parallel():
    paths = simulate_gbm_paths(GbmParams(mu=0.0, sigma=0.02, steps=50, paths=10_000, seed=1), max_workers=4)
    assert abs(paths.prices[:, -1].mean() - 100.0) < 1.0


# -- FDES-driven series -----------------------------------------------------------

def test_identity_filler_without_events_is_constant():
    series, truth = generate_fdes_series([0.7, 0.2, 0.4], EventSchedule(), FuzzyEventMatrix.identity(3), 8)
    np.testing.assert_array_equal(series.values, 0.7)
    assert truth.states.shape == (8, 3)
    assert truth.labels[0] == ""


def test_swap_event_shifts_level_at_its_step():
    schedule = EventSchedule((ScheduledEvent(3, SWAP, "swap"),))
    series, truth = generate_fdes_series([0.9, 0.3], schedule, FuzzyEventMatrix.identity(2), 6)
    np.testing.assert_array_equal(series.values, [0.9, 0.9, 0.9, 0.3, 0.3, 0.3])
    assert truth.labels[3] == "swap"
    np.testing.assert_array_equal(truth.sources[2], [1, 0])


def test_ground_truth_trace_is_self_consistent():
    series, truth = fdes_price_series(4, 60, event_rate=0.2, seed=5)
    by_step = {e.step: e.event for e in truth.schedule.events}
    assert len(by_step) > 0
    for step in range(1, len(truth.states)):
        event = by_step.get(step, truth.filler)
        np.testing.assert_array_equal(truth.states[step], compose_exact(truth.states[step - 1], event))
    assert np.all((truth.states >= 0) & (truth.states <= 1))


def test_fdes_prices_read_out_component_zero():
    series, truth = fdes_price_series(3, 40, event_rate=0.1, seed=2, s0=50.0)
    np.testing.assert_allclose(series.closes, 50.0 * (0.5 + truth.states[:, 0]))
    again, _ = fdes_price_series(3, 40, event_rate=0.1, seed=2, s0=50.0)
    np.testing.assert_array_equal(again.closes, series.closes)


def test_schedule_validation():
    with pytest.raises(ParameterError):
        EventSchedule((ScheduledEvent(4, SWAP), ScheduledEvent(4, SWAP)))
    out_of_range = EventSchedule((ScheduledEvent(6, SWAP),))
    with pytest.raises(ParameterError):
        generate_fdes_series([0.5, 0.5], out_of_range, FuzzyEventMatrix.identity(2), 6)
    wrong_size = EventSchedule((ScheduledEvent(1, SWAP),))
    with pytest.raises(ParameterError):
        generate_fdes_series([0.5, 0.5, 0.5], wrong_size, FuzzyEventMatrix.identity(3), 4)


def test_ground_truth_files(tmp_path):
    schedule = EventSchedule((ScheduledEvent(2, SWAP, "swap"),))
    _, truth = generate_fdes_series([0.9, 0.3], schedule, FuzzyEventMatrix.identity(2, "hold"), 5)
    path = write_ground_truth(truth, tmp_path, "TRUTH")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["step", "label", "matrix_file"]
    assert frame.iloc[0].tolist() == [2, "swap", "TRUTH_event_000.fdes"]
    stored = load_network(tmp_path / "TRUTH_event_000.fdes")
    np.testing.assert_array_equal(stored.layers[0].entries, SWAP.entries)
    assert (tmp_path / "TRUTH_filler.fdes").is_file()


# -- event-driven market ----------------------------------------------------------

def test_quiet_event_market_is_flat():
    market = event_market(EventMarketParams(steps=30, sigma=0.0, event_rate=0.0))
    np.testing.assert_array_equal(market.series.closes, 100.0)
    assert len(market.truth.schedule) == 0


def test_event_market_drift_follows_hidden_state():
    market = event_market(EventMarketParams(steps=300, event_rate=0.05, seed=9))
    states = market.truth.states
    assert len(market.truth.schedule) > 0
    assert np.all((states >= 0) & (states <= 1))
    np.testing.assert_allclose(market.drift, 0.008 * (states[1:, 0] - states[1:, 1]))
    assert np.all(market.series.closes > 0)
    again = event_market(EventMarketParams(steps=300, event_rate=0.05, seed=9))
    np.testing.assert_array_equal(again.series.closes, market.series.closes)


def test_drift_event_shape():
    up = drift_event("up")
    np.testing.assert_array_equal(compose_exact([0.0, 0.7, 1.0], up), [1.0, 0.0, 1.0])
    with pytest.raises(ParameterError):
        drift_event("sideways")


# -- recovery ---------------------------------------------------------------------

def test_identity_recovery_from_identity_start():
    result = recovery_experiment(RecoveryConfig(identity_truth=True, identity_init=True, epochs=50, seed=3))
    assert result.probe_error < 1e-2


def test_short_recovery_run_reduces_cost():
    result = recovery_experiment(RecoveryConfig(epochs=200, seed=1))
    assert result.final_cost < result.history[0]
    assert result.trained.dimension == 4
    assert np.isfinite(result.probe_error)


def test_recovery_config_validation():
    with pytest.raises(ParameterError):
        RecoveryConfig(state_range=(0.5, 0.5))
    with pytest.raises(ParameterError):
        RecoveryConfig(held_out_range=(0.2, 1.5))
    with pytest.raises(ParameterError):
        RecoveryConfig(samples=0)


def test_recovery_held_out_states_stay_inside_training_box():
    config = RecoveryConfig()
    assert config.state_range == (0.0, 1.0)
    low, high = config.held_out_range
    assert config.state_range[0] < low < high <= config.state_range[1]
