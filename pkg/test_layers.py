import numpy as np
import pytest

from operators.dynamics import NeuronParams, first_spike_time
from operators.encoding import NO_SPIKE, SpikeRaster, make_raster
from operators.errors import InputDomainError, ShapeError
from operators.layers import Layer, LayerState, classify, conv_forward, conv_spec, dense_forward, dense_spec, \
    network_forward, pool_forward, pool_spec

P = NeuronParams(tau1=40, tau2=40, v_th=1.0, t_max=100)


def test_dense_forward_examples():
    inputs = make_raster([0, NO_SPIKE, 5], 100)
    assert np.all(dense_forward(inputs, LayerState(np.zeros((3, 3))), P).times == NO_SPIKE)

    wired = np.zeros((2, 3))
    wired[0, 0] = 2.0
    assert dense_forward(inputs, LayerState(wired), P).times[0] == 20


def test_dense_forward_permutation_invariance():
    rng = np.random.default_rng(1)
    times = rng.integers(0, 30, size=6)
    w = rng.uniform(0, 0.8, size=(4, 6))
    perm = rng.permutation(6)
    a = dense_forward(make_raster(times, 100), LayerState(w), P)
    b = dense_forward(make_raster(times[perm], 100), LayerState(w[:, perm]), P)
    assert np.array_equal(a.times, b.times)


def test_dense_forward_shape_mismatch():
    with pytest.raises(ShapeError):
        dense_forward(make_raster([0, 1], 100), LayerState(np.ones((2, 3))), P)


def test_conv_zero_filter_is_silent():
    inputs = make_raster(np.zeros((1, 6, 6), dtype=int), 100)
    out = conv_forward(inputs, LayerState(np.zeros((2, 1, 3, 3))), P)
    assert out.shape == (2, 4, 4)
    assert np.all(out.times == NO_SPIKE)


def test_conv_matches_dense_on_each_receptive_field():
    rng = np.random.default_rng(2)
    times = rng.integers(0, 40, size=(2, 5, 5))
    times[rng.random((2, 5, 5)) < 0.3] = NO_SPIKE
    inputs = make_raster(times, 100)
    filters = rng.uniform(0, 0.5, size=(3, 2, 3, 3))
    out = conv_forward(inputs, LayerState(filters), P)
    for m in range(3):
        for y in range(3):
            for x in range(3):
                field = make_raster(times[:, y:y + 3, x:x + 3].reshape(-1), 100)
                t = first_spike_time(field, filters[m].reshape(-1), P)
                assert out.times[m, y, x] == (NO_SPIKE if t is None else t)


def test_conv_translation_equivariance():
    rng = np.random.default_rng(4)
    times = np.full((1, 8, 8), NO_SPIKE)
    times[0, 1:4, 1:4] = rng.integers(0, 20, size=(3, 3))
    shifted = np.full((1, 8, 8), NO_SPIKE)
    shifted[0, 2:5, 2:5] = times[0, 1:4, 1:4]
    filters = rng.uniform(0.2, 0.6, size=(1, 1, 3, 3))
    a = conv_forward(make_raster(times, 100), LayerState(filters), P)
    b = conv_forward(make_raster(shifted, 100), LayerState(filters), P)
    assert np.array_equal(a.times[0, :-1, :-1], b.times[0, 1:, 1:])


def test_pool_forward_takes_earliest_spike():
    times = np.array([[[12, 30], [NO_SPIKE, 45]]])
    assert pool_forward(make_raster(times, 100), 2, 2).times.tolist() == [[[12]]]
    silent = np.full((1, 2, 2), NO_SPIKE)
    assert pool_forward(make_raster(silent, 100), 2, 2).times.tolist() == [[[NO_SPIKE]]]


def integrate_and_fire_pool(times, window, t_max):
    """Unit-weight IF neuron per window: v(t) counts inputs spiked by t, fires at v >= 1."""
    n_maps, h, w = times.shape
    out = np.full((n_maps, h // window, w // window), NO_SPIKE)
    for c in range(n_maps):
        for i in range(h // window):
            for j in range(w // window):
                patch = times[c, i * window:(i + 1) * window, j * window:(j + 1) * window].reshape(-1)
                for t in range(t_max + 1):
                    v = np.sum((patch != NO_SPIKE) & (patch <= t))
                    if v >= 1:
                        out[c, i, j] = t
                        break
    return out


@pytest.mark.parametrize("seed", range(5))
def test_pool_matches_unit_weight_integrate_and_fire(seed):
    rng = np.random.default_rng(seed)
    times = rng.integers(0, 41, size=(3, 6, 6))
    times[rng.random(times.shape) < 0.4] = NO_SPIKE
    times[0, :2, :2] = NO_SPIKE
    out = pool_forward(make_raster(times, 40), 2, 2)
    assert np.array_equal(out.times, integrate_and_fire_pool(times, 2, 40))


def test_pool_window_one_is_identity():
    times = np.array([[[3, NO_SPIKE], [7, 9]]])
    out = pool_forward(make_raster(times, 100), 1, 1)
    assert np.array_equal(out.times, times)


def test_pool_shape_error():
    with pytest.raises(ShapeError):
        pool_forward(make_raster(np.zeros((1, 5, 5), dtype=int), 100), 2, 2)
    with pytest.raises(ShapeError):
        pool_spec((1, 5, 5), 2)


def test_conv_pool_shapes():
    conv = conv_spec((1, 28, 28), 40, 5)
    pool = pool_spec(conv.out_shape, 2)
    dense = dense_spec(pool.out_shape, 1000)
    assert conv.out_shape == (40, 24, 24)
    assert pool.out_shape == (40, 12, 12)
    assert dense.weight_shape == (1000, 40 * 12 * 12)
    with pytest.raises(ShapeError):
        conv_spec((1, 28, 28), 40, 30)


def test_network_forward_shapes():
    rng = np.random.default_rng(0)
    conv = conv_spec((1, 12, 12), 4, 3, P)
    pool = pool_spec(conv.out_shape, 2)
    hidden = dense_spec(pool.out_shape, 7, P)
    out = dense_spec(hidden.out_shape, 3, P)
    layers = [Layer(conv, LayerState.initialize(conv, rng, (0, 0.5))), Layer(pool),
              Layer(hidden, LayerState.initialize(hidden, rng, (0, 0.2))),
              Layer(out, LayerState.initialize(out, rng, (0, 0.5)))]
    inputs = make_raster(rng.integers(0, 50, size=(12, 12)), 100)
    rasters = network_forward(inputs, layers)
    assert [r.shape for r in rasters[1:]] == [(4, 10, 10), (4, 5, 5), (7,), (3,)]


@pytest.mark.parametrize("times, expected", [([30, 10, 80], 1), ([NO_SPIKE] * 3, 0), ([10, 10, 80], 0),
                                             ([NO_SPIKE, 100, NO_SPIKE], 1)])
def test_classify(times, expected):
    assert classify(make_raster(times, 100)) == expected


def test_layer_state_rejects_non_finite_weights():
    with pytest.raises(InputDomainError):
        LayerState(np.array([[np.nan]]))


def test_empty_stack_returns_input():
    raster = SpikeRaster(np.array([1, 2]), 100)
    assert network_forward(raster, [])[0] is raster
