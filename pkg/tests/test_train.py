import numpy as np
import pytest

from emofusion.errors import ConfigError, DataError, DimensionError, TrainingDivergedError
from emofusion.labels import one_hot
from emofusion.nn import LayerSpec, cross_entropy_grad
from emofusion.train import (
    OptimizerConfig,
    balanced_batch,
    balanced_indices,
    batch_gradients,
    init_network,
    loss_trace_csv,
    rmsprop_state,
    rmsprop_step,
    train_cnn,
    xavier_bound,
    xavier_init,
)

TINY = (
    LayerSpec("conv", kernel_size=3, out_channels=2), LayerSpec("relu"),
    LayerSpec("maxpool", kernel_size=3),
    LayerSpec("dense", units=8), LayerSpec("relu"), LayerSpec("dropout", keep_prob=0.5),
    LayerSpec("dense", units=3), LayerSpec("softmax"),
)


def tiny_data(rng, per_class=4):
    labels = np.repeat(np.arange(3), per_class)
    faces = rng.random((labels.size, 6, 6, 3)) * 0.2
    faces[..., 0] += labels[:, None, None] * 0.4
    return faces, labels


class TestXavier:
    def test_unit_bound(self):
        assert xavier_bound(3, 3) == 1.0

    def test_within_bound_and_centred(self):
        w = xavier_init((100_000,), 3, 3, seed=0)
        assert np.abs(w).max() <= 1.0
        assert abs(w.mean()) < 0.01

    def test_bad_fans(self):
        with pytest.raises(ConfigError):
            xavier_bound(0, 3)

    def test_biases_zero(self):
        net = init_network(TINY, (6, 6, 3), seed=0)
        assert not net.params["conv1.b"].any() and not net.params["dense2.b"].any()


class TestRmsprop:
    def test_zero_gradient(self):
        params, state = {"p": np.array([1.5])}, {"p": np.array([2.0])}
        rmsprop_step(params, {"p": np.zeros(1)}, state, OptimizerConfig())
        assert params["p"][0] == 1.5 and state["p"][0] == pytest.approx(1.8)

    def test_first_step_from_zero_state(self):
        params = {"p": np.array([0.0])}
        state = rmsprop_state(params)
        rmsprop_step(params, {"p": np.ones(1)}, state, OptimizerConfig())
        assert state["p"][0] == pytest.approx(0.1)
        assert params["p"][0] == pytest.approx(-3.1623e-3, abs=1e-7)

    def test_first_step_from_unit_state(self):
        params = {"p": np.array([0.0])}
        state = rmsprop_state(params, 1.0)
        rmsprop_step(params, {"p": np.ones(1)}, state, OptimizerConfig())
        assert params["p"][0] == pytest.approx(-1e-3, rel=1e-9)

    @pytest.mark.parametrize("initial", [0.0, 1.0])
    def test_quadratic_bowl(self, initial):
        config = OptimizerConfig(initial_accumulator=initial)
        params = {"p": np.array([1.0])}
        state = rmsprop_state(params, initial)
        values = []
        for _ in range(100):
            rmsprop_step(params, {"p": 2 * params["p"]}, state, config)
            assert state["p"][0] >= 0
            values.append(params["p"][0] ** 2)
        assert all(b < a for a, b in zip(values, values[1:]))
        assert values[-1] < 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            rmsprop_step({"p": np.zeros(2)}, {"p": np.zeros(3)}, {"p": np.zeros(2)}, OptimizerConfig())

    @pytest.mark.parametrize("field,value", [("learning_rate", 0), ("decay", 1.0), ("per_class", 0),
                                             ("iterations", -1), ("initial_accumulator", -1)])
    def test_config_validation(self, field, value):
        with pytest.raises(ConfigError):
            OptimizerConfig(**{field: value})

    def test_batch_size(self):
        assert OptimizerConfig().batch_size == 63


class TestBalancedBatch:
    def test_histogram(self, rng):
        labels = np.array([0] * 50 + [1] * 7 + [2] * 300)
        idx = balanced_indices(labels, 21, rng)
        assert np.bincount(labels[idx], minlength=3).tolist() == [21, 21, 21]

    def test_single_sample_repeated(self, rng):
        faces = np.arange(3.0)
        batch, labels = balanced_batch(faces, np.array([0, 1, 2]), 21, rng)
        assert len(batch) == 63
        for c in range(3):
            assert (batch[labels == c] == c).all()

    def test_no_repeats_when_class_is_large_enough(self, rng):
        labels = np.repeat(np.arange(3), 30)
        idx = balanced_indices(labels, 21, rng)
        assert len(set(idx.tolist())) == 63

    def test_shuffled(self, rng):
        labels = np.repeat(np.arange(3), 30)
        idx = balanced_indices(labels, 21, rng)
        assert not (np.diff(labels[idx]) >= 0).all()

    def test_seeded_replay(self):
        labels = np.repeat(np.arange(3), 30)
        assert np.array_equal(balanced_indices(labels, 21, np.random.default_rng(4)),
                              balanced_indices(labels, 21, np.random.default_rng(4)))

    def test_empty_class_is_named(self, rng):
        with pytest.raises(DataError, match="negative"):
            balanced_indices(np.array([0, 1, 1]), 21, rng)


def test_batch_gradients_match_direct_pass(rng):
    faces, labels = tiny_data(rng)
    net = init_network(TINY, (6, 6, 3), seed=2)
    index = np.array([0, 5, 5, 9, 0, 0, 11, 3])
    loss, grads = batch_gradients(net, faces, labels, 3, np.random.default_rng(8), index)
    probs, cache = net.forward(faces[index], True, np.random.default_rng(8))
    targets = one_hot(labels[index])
    direct = net.backward(cache, cross_entropy_grad(targets, probs))
    for name, g in direct.items():
        np.testing.assert_allclose(grads[name], g, rtol=1e-10, atol=1e-15)


class TestTrainLoop:
    def test_zero_iterations_is_init(self, rng):
        faces, labels = tiny_data(rng)
        result = train_cnn(faces, labels, OptimizerConfig(iterations=0, seed=3), TINY)
        assert result.losses == []
        from emofusion.train import rng_streams
        fresh = init_network(TINY, (6, 6, 3), rng_streams(3)["init"])
        for name, p in fresh.params.items():
            assert np.array_equal(result.net.params[name], p)

    def test_seeded_trace_identical(self, rng):
        faces, labels = tiny_data(rng)
        config = OptimizerConfig(iterations=15, per_class=4, seed=1)
        a = train_cnn(faces, labels, config, TINY)
        b = train_cnn(faces, labels, config, TINY)
        assert a.losses == b.losses
        for name in a.net.params:
            assert np.array_equal(a.net.params[name], b.net.params[name])

    def test_learns_tiny_problem(self, rng):
        faces, labels = tiny_data(rng)
        config = OptimizerConfig(iterations=300, per_class=4, seed=0, learning_rate=1e-2)
        result = train_cnn(faces, labels, config, TINY)
        assert np.mean(result.losses[-20:]) < np.mean(result.losses[:20])
        assert (result.net.predict_proba(faces).argmax(axis=1) == labels).mean() == 1.0

    def test_callback_stops(self, rng):
        faces, labels = tiny_data(rng)
        result = train_cnn(faces, labels, OptimizerConfig(iterations=50, per_class=2), TINY,
                           callback=lambda it, net, loss: it == 4)
        assert result.iterations_run == 5

    def test_nan_aborts_with_iteration(self, rng):
        faces, labels = tiny_data(rng)
        faces[labels == 0, 0, 0, 0] = np.nan
        with pytest.raises(TrainingDivergedError, match="iteration 0"):
            train_cnn(faces, labels, OptimizerConfig(iterations=5, per_class=12), TINY)

    def test_mismatched_inputs(self, rng):
        with pytest.raises(DataError):
            train_cnn(rng.random((4, 6, 6, 3)), np.array([0, 1, 2]), OptimizerConfig(iterations=1), TINY)


def test_loss_trace_csv():
    assert loss_trace_csv([1.5, 0.25]) == "iteration,loss\n0,1.5\n1,0.25\n"
