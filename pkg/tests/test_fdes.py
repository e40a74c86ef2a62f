import numpy as np
import pytest

from backend.errors import DimensionError, InputError, NumericalError, ParameterError
from backend.fdes import (
    INIT_RANGE,
    FdesNetwork,
    FuzzyEventMatrix,
    GradientSet,
    TrainConfig,
    as_state,
    backward,
    backward_from_signal,
    compose_exact,
    compose_smooth,
    cost,
    dominant_sources,
    finite_diff_gradients,
    forward,
    identity_network,
    init_network,
    relative_error,
    sgd_step,
    train,
)

SIGMA = [[0.2, 0.9], [0.6, 0.1]]


def single_layer(entries, sharpness=10.0, trainable=False) -> FdesNetwork:
    return FdesNetwork((FuzzyEventMatrix(entries, "e"),), sharpness, trainable)


# -- states and events ----------------------------------------------------------

def test_state_rejects_out_of_range_components():
    with pytest.raises(ParameterError):
        as_state([0.5, 1.2])
    with pytest.raises(DimensionError):
        as_state([0.5, 0.5], dimension=3)


def test_event_matrix_must_be_square_and_in_unit_box():
    with pytest.raises(DimensionError):
        FuzzyEventMatrix(np.ones((2, 3)))
    with pytest.raises(ParameterError):
        FuzzyEventMatrix([[0.5, -0.1], [0.0, 1.0]])


def test_network_rejects_mixed_dimensions_and_bad_sharpness():
    with pytest.raises(DimensionError):
        FdesNetwork((FuzzyEventMatrix.identity(2), FuzzyEventMatrix.identity(3)))
    with pytest.raises(ParameterError):
        FdesNetwork((FuzzyEventMatrix.identity(2),), sharpness=0.0)


# -- exact composition ------------------------------------------------------------

def test_compose_exact_routes_single_active_state():
    np.testing.assert_array_equal(compose_exact([1.0, 0.0], [[0.0, 1.0], [0.0, 0.0]]), [0.0, 1.0])


def test_compose_exact_identity_and_zero():
    q = np.array([0.5, 0.8])
    np.testing.assert_array_equal(compose_exact(q, FuzzyEventMatrix.identity(2)), q)
    np.testing.assert_array_equal(compose_exact(q, FuzzyEventMatrix.zeros(2)), [0.0, 0.0])


def test_compose_exact_hand_example():
    np.testing.assert_allclose(compose_exact([0.5, 0.8], SIGMA), [0.48, 0.45], atol=1e-15)


def test_compose_exact_dimension_mismatch():
    with pytest.raises(DimensionError):
        compose_exact([0.5, 0.5, 0.5], SIGMA)


def test_compose_exact_is_monotone_in_entries(rng):
    q = rng.uniform(0, 1, 4)
    entries = rng.uniform(0, 0.9, (4, 4))
    base = compose_exact(q, entries)
    for i, j in [(0, 0), (1, 3), (3, 2)]:
        raised = entries.copy()
        raised[i, j] += 0.1
        assert np.all(compose_exact(q, raised) >= base)


def test_dominant_sources_break_ties_on_lowest_index():
    np.testing.assert_array_equal(dominant_sources([0.5, 0.5], np.ones((2, 2))), [0, 0])


# -- smooth composition -----------------------------------------------------------

def test_compose_smooth_two_equal_terms():
    out = compose_smooth([0.5, 0.5], [[1.0, 0.0], [1.0, 0.0]], 10.0)
    assert out[0] == pytest.approx(0.5 + np.log(2) / 10)
    assert out[0] == pytest.approx(0.5693, abs=1e-4)


def test_compose_smooth_rejects_non_positive_sharpness():
    with pytest.raises(ParameterError):
        compose_smooth([0.5, 0.5], SIGMA, 0.0)
    with pytest.raises(ParameterError):
        compose_smooth([0.5, 0.5], SIGMA, -1.0)


@pytest.mark.parametrize("sharpness", [0.5, 5.0, 1000.0])
def test_smooth_max_sandwich(rng, sharpness):
    n = 6
    states = rng.uniform(0, 1, (50, n))
    entries = rng.uniform(0, 1, (n, n))
    exact = compose_exact(states, entries)
    smooth = compose_smooth(states, entries, sharpness)
    assert np.all(smooth >= exact - 1e-12)
    assert np.all(smooth <= exact + np.log(n) / sharpness + 1e-12)


def test_compose_smooth_large_sharpness_recovers_routing():
    out = compose_smooth([1.0, 0.0], [[0.0, 1.0], [0.0, 0.0]], 1e6)
    np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-5)


def test_compose_smooth_does_not_overflow():
    out = compose_smooth([1.0, 1.0], np.ones((2, 2)), 1e300)
    assert np.all(np.isfinite(out))


# -- forward and cost -------------------------------------------------------------

def test_single_layer_forward_is_compose_smooth():
    net = single_layer(SIGMA, 7.0)
    np.testing.assert_allclose(forward(net, [0.5, 0.8]).output, compose_smooth([0.5, 0.8], SIGMA, 7.0))


def test_identity_network_keeps_state_within_bias():
    net = identity_network(2, 3, sharpness=500.0)
    trace = forward(net, [0.3, 0.7])
    assert len(trace) == 3
    for depth, state in enumerate(trace, start=1):
        assert np.all(np.abs(state - [0.3, 0.7]) <= depth * np.log(2) / 500 + 1e-12)


def test_seeded_random_forward_matches_layer_by_layer_recomputation():
    net = init_network(4, 3, seed=42)
    q0 = np.array([0.1, 0.4, 0.7, 1.0])
    trace = forward(net, q0)
    state = q0
    for layer, produced in zip(net.layers, trace):
        state = compose_smooth(state, layer, net.sharpness)
        np.testing.assert_allclose(produced, state)
    assert np.all(np.isfinite(trace.output))
    assert np.all(trace.output >= 0)


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionError):
        forward(init_network(3, 1, seed=0), [0.5, 0.5])


def test_cost_examples():
    assert cost([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert cost([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)
    assert cost([0.48, 0.45], [0.5, 0.5]) == pytest.approx(0.00145)
    with pytest.raises(DimensionError):
        cost([0.1, 0.2], [0.1, 0.2, 0.3])


# -- gradients --------------------------------------------------------------------

def test_backward_zero_at_target():
    net = init_network(3, 2, seed=3)
    q0 = [0.2, 0.5, 0.9]
    trace = forward(net, q0)
    grads = backward(net, trace, trace.output.copy())
    for g in grads.layers:
        np.testing.assert_array_equal(g, np.zeros((3, 3)))


def test_backward_single_entry_closed_form():
    s0, a, target = 0.6, 0.7, 0.2
    net = single_layer([[a]], sharpness=4.0)
    trace = forward(net, [s0])
    assert trace.output[0] == pytest.approx(s0 * a)
    grads = backward(net, trace, [target])
    assert grads.layers[0][0, 0] == pytest.approx((s0 * a - target) * s0)


def test_backward_matches_finite_differences():
    net = init_network(4, 3, seed=42, sharpness=5.0)
    rng = np.random.default_rng(42)
    q0, target = rng.uniform(0, 1, 4), rng.uniform(0, 1, 4)
    analytic = backward(net, forward(net, q0), target)
    numeric = finite_diff_gradients(net, q0, target, 1e-6)
    assert relative_error(analytic, numeric) < 1e-4


def test_trainable_sharpness_gradient_matches_finite_differences():
    net = init_network(3, 3, seed=11, sharpness=3.0, trainable_sharpness=True)
    rng = np.random.default_rng(11)
    q0, target = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    analytic = backward(net, forward(net, q0), target)
    numeric = finite_diff_gradients(net, q0, target, 1e-6)
    assert analytic.sharpness is not None
    assert analytic.sharpness == pytest.approx(numeric.sharpness, rel=1e-4, abs=1e-9)
    assert relative_error(analytic, numeric) < 1e-4


def test_batched_backward_sums_per_sample_gradients(rng):
    net = init_network(3, 2, seed=5)
    starts, targets = rng.uniform(0, 1, (4, 3)), rng.uniform(0, 1, (4, 3))
    batched = backward(net, forward(net, starts), targets)
    for layer in range(net.depth):
        summed = sum(backward(net, forward(net, q), t).layers[layer] for q, t in zip(starts, targets))
        np.testing.assert_allclose(batched.layers[layer], summed, atol=1e-12)


def test_backward_rejects_foreign_trace():
    trace = forward(init_network(3, 2, seed=1), [0.1, 0.2, 0.3])
    with pytest.raises(DimensionError):
        backward(init_network(3, 3, seed=1), trace, [0.1, 0.2, 0.3])
    with pytest.raises(DimensionError):
        backward_from_signal(init_network(3, 2, seed=1), trace, [0.1, 0.2])


def test_finite_differences_zero_in_constant_region():
    net = single_layer(np.zeros((3, 3)))
    grads = finite_diff_gradients(net, [0.0, 0.0, 0.0], [0.2, 0.4, 0.6])
    np.testing.assert_array_equal(grads.layers[0], np.zeros((3, 3)))


def test_finite_difference_error_shrinks_quadratically():
    net = init_network(3, 2, seed=8, sharpness=5.0)
    q0, target = [0.3, 0.6, 0.9], [0.5, 0.1, 0.4]
    exact = backward(net, forward(net, q0), target).flat()
    coarse = np.linalg.norm(finite_diff_gradients(net, q0, target, 1e-2).flat() - exact)
    fine = np.linalg.norm(finite_diff_gradients(net, q0, target, 5e-3).flat() - exact)
    assert 3.0 < coarse / fine < 5.0


def test_finite_differences_never_leave_unit_box():
    net = single_layer([[0.0, 1.0], [1e-9, 0.5]], sharpness=5.0)
    grads = finite_diff_gradients(net, [0.4, 0.9], [0.1, 0.1])
    analytic = backward(net, forward(net, [0.4, 0.9]), [0.1, 0.1])
    np.testing.assert_allclose(grads.layers[0], analytic.layers[0], rtol=1e-4, atol=1e-5)


# -- updates ----------------------------------------------------------------------

def test_sgd_step_examples():
    net = single_layer([[0.5, 0.05], [0.3, 0.3]])
    grads = GradientSet((np.array([[1.0, 1.0], [0.0, 0.0]]),))
    stepped = sgd_step(net, grads, 0.1)
    np.testing.assert_allclose(stepped.layers[0].entries, [[0.4, 0.0], [0.3, 0.3]])
    assert sgd_step(net, GradientSet.zeros_like(net), 0.1) == net
    assert sgd_step(net, grads, 0.0) == net


def test_sgd_step_errors():
    net = single_layer([[0.5]])
    with pytest.raises(NumericalError):
        sgd_step(net, GradientSet((np.array([[np.nan]]),)), 0.1)
    with pytest.raises(ParameterError):
        sgd_step(net, GradientSet((np.array([[1.0]]),)), -0.1)
    with pytest.raises(DimensionError):
        sgd_step(net, GradientSet((np.zeros((2, 2)),)), 0.1)


def test_trainable_sharpness_is_floored():
    net = single_layer([[0.5]], sharpness=0.01, trainable=True)
    stepped = sgd_step(net, GradientSet((np.zeros((1, 1)),), 100.0), 1.0)
    assert stepped.sharpness == pytest.approx(1e-3)


def test_init_network_is_seeded_and_in_range():
    a, b = init_network(5, 2, seed=9), init_network(5, 2, seed=9)
    assert a == b
    assert a != init_network(5, 2, seed=10)
    low, high = INIT_RANGE
    for layer in a.layers:
        assert np.all((layer.entries >= low) & (layer.entries <= high))
    assert a.labels == ["event_1", "event_2"]


# -- training ---------------------------------------------------------------------

def reachable_sample(seed=0):
    truth = init_network(4, 2, seed=seed + 100)
    q0 = np.random.default_rng(seed).uniform(0.2, 1.0, 4)
    return q0, forward(truth, q0).output


def test_train_reaches_reachable_target():
    q0, target = reachable_sample()
    result = train(init_network(4, 2, seed=1), [(q0, target, 1.0)], TrainConfig(epochs=5000, rate=0.5))
    assert result.final_loss < 1e-3
    assert result.epochs_run == 5000
    assert result.history[-1] <= result.history[0]


def test_train_is_deterministic():
    q0, target = reachable_sample(3)
    config = TrainConfig(epochs=50, rate=0.5, seed=7, layers=2)
    first = train(None, [(q0, target, 1.0)], config)
    second = train(None, [(q0, target, 1.0)], config)
    assert first.history == second.history
    assert first.network == second.network


def test_zero_weight_samples_do_not_matter():
    q0, target = reachable_sample(4)
    other = [(np.full(4, 0.5), np.full(4, 0.1), 0.0), (np.full(4, 0.9), np.full(4, 0.9), 0.0)]
    config = TrainConfig(epochs=30, rate=0.5)
    alone = train(init_network(4, 2, seed=2), [(q0, target, 1.0)], config)
    mixed = train(init_network(4, 2, seed=2), [(q0, target, 1.0), *other], config)
    assert alone.history == mixed.history


def test_train_errors():
    with pytest.raises(InputError):
        train(None, [], TrainConfig())
    with pytest.raises(InputError):
        train(None, [([0.5, 0.5], [0.5, 0.5], 0.0)], TrainConfig())
    with pytest.raises(ParameterError):
        TrainConfig(rate=0.0)


def test_early_stopping_records_epochs_run():
    q0, target = reachable_sample(5)
    result = train(init_network(4, 2, seed=2), [(q0, target, 1.0)], TrainConfig(epochs=100, patience=3, tolerance=1.0))
    assert result.stopped_early
    assert result.epochs_run == 4
    assert len(result.history) == result.epochs_run
