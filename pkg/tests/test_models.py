import numpy as np
import pytest

from thermocast import tensor as T
from thermocast.data import WindowBatch, WindowSample
from thermocast.errors import ConfigError, ShapeError
from thermocast.gradcheck import reduced_batch, reduced_config
from thermocast.models import (
    ModelConfig,
    build_forecaster,
    expected_parameter_count,
    load_checkpoint,
    persistence_forecast,
    residual_combine,
    save_checkpoint,
)
from thermocast.tensor import Tensor

from conftest import central_diff


def sample_like(batch, i=0):
    return WindowSample(batch.past[i], batch.future[i], batch.target[i], int(batch.room_id[i]), float(batch.last_value[i]))


class TestPersistence:
    def test_repeats_last_value(self):
        past = np.zeros((3, 2))
        past[:, -1] = [20.0, 20.5, 21.0]
        s = WindowSample(past, np.zeros((3, 1)), np.zeros(3), 0, 21.0)
        assert persistence_forecast(s).tolist() == [21.0, 21.0, 21.0]

    def test_single_step(self):
        s = WindowSample(np.zeros((4, 1)), np.zeros((1, 1)), np.zeros(1), 0, 18.2)
        assert persistence_forecast(s).tolist() == [18.2]

    def test_model_matches(self, rng):
        batch = reduced_batch(rng, size=5)
        model = build_forecaster(reduced_config("persistence"))
        np.testing.assert_array_equal(model.predict(batch), persistence_forecast(batch))
        assert model.num_parameters() == 0


class TestResidualCombine:
    def test_zero_residual(self):
        assert residual_combine(Tensor([0.0, 0.0]), 21.0).data.tolist() == [21.0, 21.0]

    def test_adds(self):
        assert residual_combine(Tensor([0.5, -0.5]), 20.0).data.tolist() == [20.5, 19.5]

    def test_batch(self):
        out = residual_combine(Tensor(np.ones((2, 3))), [1.0, 2.0])
        assert out.data.tolist() == [[2, 2, 2], [3, 3, 3]]


@pytest.mark.parametrize("kind", ["transformer", "lstm"])
class TestNeuralForecasters:
    def test_zero_params_give_persistence(self, kind, rng):
        model = build_forecaster(reduced_config(kind), rng)
        for p in model.parameters():
            p.data[:] = 0.0
        batch = reduced_batch(rng, size=4)
        np.testing.assert_array_equal(model.predict(batch), persistence_forecast(batch))

    def test_head_bias_probe(self, kind, rng):
        model = build_forecaster(reduced_config(kind), rng)
        for p in model.parameters():
            p.data[:] = 0.0
        model.head.bias.data[:] = 1.0
        batch = reduced_batch(rng, size=3)
        np.testing.assert_array_equal(model.predict(batch), persistence_forecast(batch) + 1.0)

    def test_output_length(self, kind, rng):
        model = build_forecaster(reduced_config(kind), rng)
        batch = reduced_batch(rng)
        assert model.predict(batch).shape == (2, 4)
        assert model.predict(sample_like(batch)).shape == (4,)

    def test_forecast_is_residual_plus_persistence(self, kind, rng):
        model = build_forecaster(reduced_config(kind), rng)
        batch = reduced_batch(rng, size=3)
        with T.no_grad():
            res = model.residual(batch).data
        np.testing.assert_array_equal(model.predict(batch), res + persistence_forecast(batch))

    def test_parameter_count(self, kind, rng):
        cfg = reduced_config(kind)
        assert build_forecaster(cfg, rng).num_parameters() == expected_parameter_count(cfg)

    def test_same_seed_same_output(self, kind, rng):
        batch = reduced_batch(rng)
        a = build_forecaster(reduced_config(kind), 3).predict(batch)
        b = build_forecaster(reduced_config(kind), 3).predict(batch)
        np.testing.assert_array_equal(a, b)

    def test_checkpoint_round_trip(self, kind, rng, tmp_path):
        model = build_forecaster(reduced_config(kind), rng)
        save_checkpoint(tmp_path / "m.npz", model, {"note": "x"})
        loaded, extra = load_checkpoint(tmp_path / "m.npz")
        assert extra == {"note": "x"}
        assert loaded.config == model.config
        batch = reduced_batch(rng)
        np.testing.assert_array_equal(loaded.predict(batch), model.predict(batch))

    def test_wrong_horizon(self, kind, rng):
        model = build_forecaster(reduced_config(kind), rng)
        with pytest.raises(ShapeError):
            model.predict(reduced_batch(rng, n=5))

    def test_overfits_one_sample(self, kind, rng):
        from thermocast.training import Adam

        model = build_forecaster(reduced_config(kind), rng)
        batch = reduced_batch(rng, size=1)
        opt = Adam(model.parameters(), 1e-2)
        for _ in range(300):
            model.zero_grad()
            loss = T.reduce_mean(T.absolute(model.forecast(batch) - Tensor(batch.target)))
            T.backward(loss)
            opt.step()
        assert np.abs(model.predict(batch) - batch.target).mean() < 1e-2


def test_default_size_parameter_counts():
    # hand-tallied for the default sizes
    assert build_forecaster(ModelConfig(kind="transformer")).num_parameters() == 112000
    assert expected_parameter_count(ModelConfig(kind="transformer")) == 112000
    lstm = ModelConfig(kind="lstm", use_room_embedding=False)
    assert build_forecaster(lstm).num_parameters() == 234252


def test_embedding_gradient_touches_own_row(rng):
    model = build_forecaster(reduced_config("transformer"), rng)
    batch = reduced_batch(rng, size=1)
    batch.room_id[:] = 1
    T.backward(T.reduce_sum(model.forecast(batch)))
    grad = model.room_embedding.table.grad
    assert np.abs(grad[1]).sum() > 0
    assert not grad[[0, 2]].any()

    table = model.room_embedding.table
    with T.no_grad():
        def f(row):
            saved = table.data[1].copy()
            table.data[1] = row
            out = model.forecast(batch).data.sum()
            table.data[1] = saved
            return out

        ref = central_diff(f, table.data[1].copy())
    np.testing.assert_allclose(grad[1], ref, rtol=1e-5, atol=1e-9)


def test_no_embedding_ignores_room_id(rng):
    model = build_forecaster(reduced_config("transformer", use_room_embedding=False), rng)
    batch = reduced_batch(rng)
    other = WindowBatch(batch.past, batch.future, batch.target, (batch.room_id + 1) % 3, batch.last_value)
    np.testing.assert_array_equal(model.predict(batch), model.predict(other))


def test_lstm_gradient_small(rng):
    model = build_forecaster(reduced_config("lstm", lstm_layers=1, lstm_units=4), rng)
    batch = reduced_batch(rng)
    w = model.encoder.layers[0].w_hidden
    T.backward(T.reduce_sum(model.forecast(batch)))
    with T.no_grad():
        def f(v):
            saved = w.data.copy()
            w.data[:] = v
            out = model.forecast(batch).data.sum()
            w.data[:] = saved
            return out

        ref = central_diff(f, w.data.copy())
    np.testing.assert_allclose(w.grad, ref, rtol=1e-5, atol=1e-9)


def test_room_id_out_of_range(rng):
    model = build_forecaster(reduced_config("transformer"), rng)
    batch = reduced_batch(rng)
    batch.room_id[0] = 3
    with pytest.raises(IndexError):
        model.predict(batch)


class TestConfig:
    def test_lstm_embedding_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(kind="lstm")

    def test_local_needs_room(self):
        with pytest.raises(ConfigError):
            ModelConfig(kind="transformer", scope="local")

    def test_odd_head_dim(self):
        with pytest.raises(ConfigError):
            ModelConfig(kind="transformer", d_model=6, heads=2)

    def test_dict_round_trip(self):
        cfg = ModelConfig(kind="lstm", use_room_embedding=False, lstm_units=5)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({"kind": "lstm", "dropout": 0.1})
