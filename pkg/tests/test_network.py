import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quenchnet.dataset import Dataset
from quenchnet.errors import DomainError, ParseError, TrainingAborted
from quenchnet.network import (
    AdamState,
    NetworkModel,
    NetworkSpec,
    TrainConfig,
    adam_step,
    backward,
    cost_mse,
    forward,
    init_model,
    load_checkpoint,
    load_model,
    save_model,
    train,
)

GRID = [(L, n) for L in (1, 2, 3) for n in (3, 5, 10, 20, 30, 50)]


def _zero_model(spec):
    return NetworkModel(spec, [np.zeros(w) for w, _ in spec.shapes()], [np.zeros(b) for _, b in spec.shapes()])


def _tiny_data(m=30, d=16, seed=0):
    g = np.random.default_rng(seed)
    return Dataset(np.arange(1, d + 1) * 1000.0, g.uniform(0, 110, m), 45.0, g.uniform(0.2, 1.0, (m, d)))


def _reference_forward(model, x):
    # plain loop over neurons, explicit logistic
    a = list(x)
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = [1.0 / (1.0 + np.exp(-(sum(w[i, j] * a[j] for j in range(len(a))) + b[i]))) for i in range(w.shape[0])]
    return model.spec.output_scale * a[0]


class TestInit:
    def test_shapes_and_bounds(self):
        spec = NetworkSpec(16, 3, 10)
        model = init_model(spec, seed=4)
        assert [w.shape for w in model.weights] == [(10, 16), (10, 10), (10, 10), (1, 10)]
        assert [b.shape for b in model.biases] == [(10,), (10,), (10,), (1,)]
        for w in model.weights:
            assert np.all(np.abs(w) <= 1 / np.sqrt(w.shape[1]))
        assert all(np.all(b == 0) for b in model.biases)
        assert model.n_parameters() == 10 * 17 + 2 * 10 * 11 + 11

    def test_deterministic(self):
        spec = NetworkSpec(16, 2, 5)
        a, b = init_model(spec, 7), init_model(spec, 7)
        assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
        c = init_model(spec, 8)
        assert not np.array_equal(a.weights[0], c.weights[0])

    @pytest.mark.parametrize("args", [(0, 1, 1), (16, 0, 3), (16, 1, 0), (16, 1.5, 3)])
    def test_invalid_spec(self, args):
        with pytest.raises(DomainError):
            NetworkSpec(*args)

    def test_shape_mismatch(self):
        spec = NetworkSpec(4, 1, 3)
        with pytest.raises(DomainError):
            NetworkModel(spec, [np.zeros((3, 5)), np.zeros((1, 3))], [np.zeros(3), np.zeros(1)])


class TestForward:
    def test_zero_model_predicts_midpoint(self):
        model = _zero_model(NetworkSpec(16, 3, 10))
        assert forward(model, np.full(16, 0.7)) == 55.0

    @given(st.integers(0, 2**31), st.sampled_from(GRID))
    @settings(max_examples=30)
    def test_output_range(self, seed, arch):
        model = init_model(NetworkSpec(16, *arch), seed)
        x = np.random.default_rng(seed).uniform(0, 1, (20, 16))
        y = model.predict(x)
        assert np.all((y > 0) & (y < 110))

    def test_matches_loop_reference(self):
        model = init_model(NetworkSpec(5, 2, 4), 3)
        x = np.random.default_rng(0).uniform(0, 1, (6, 5))
        expected = [_reference_forward(model, row) for row in x]
        np.testing.assert_allclose(model.predict(x), expected, rtol=1e-13)
        assert forward(model, x[2]) == pytest.approx(expected[2], rel=1e-13)

    def test_wrong_dimension(self):
        model = init_model(NetworkSpec(16, 1, 3), 0)
        with pytest.raises(DomainError):
            forward(model, np.ones(15))
        with pytest.raises(DomainError):
            model.predict(np.ones((2, 17)))

    def test_saturation_is_finite(self):
        model = init_model(NetworkSpec(2, 1, 3), 0)
        model.weights[0][:] = 1e6
        y = model.predict(np.array([[1.0, 1.0], [-1.0, -1.0]]))
        assert np.all(np.isfinite(y))


class TestCost:
    def test_hand_value(self):
        # zero model predicts 55; labels 54 and 56 give errors (1, -1) -> J = 1
        model = _zero_model(NetworkSpec(2, 1, 3))
        data = Dataset([1.0, 2.0], [54.0, 56.0], 45.0, [[0.5, 0.5], [0.4, 0.3]])
        assert cost_mse(model, data) == 1.0

    def test_matches_loop(self):
        model = init_model(NetworkSpec(16, 2, 5), 1)
        data = _tiny_data(12)
        loop = sum((forward(model, data.ratios[j]) - data.o2[j]) ** 2 for j in range(12)) / 12
        assert cost_mse(model, data) == pytest.approx(loop, rel=1e-13)

    def test_empty(self):
        model = init_model(NetworkSpec(2, 1, 3), 0)
        with pytest.raises(DomainError):
            cost_mse(model, Dataset([1.0, 2.0], np.empty(0), 45.0, np.empty((0, 2))))


def _numeric_gradient(model, data, h=1e-6):
    out = []
    for p in model.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + h
            up = cost_mse(model, data)
            p[idx] = keep - h
            down = cost_mse(model, data)
            p[idx] = keep
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


class TestGradient:
    @pytest.mark.parametrize("arch", GRID, ids=[f"L{L}n{n}" for L, n in GRID])
    def test_matches_central_differences(self, arch):
        model = init_model(NetworkSpec(16, *arch), seed=arch[0] * 100 + arch[1])
        data = _tiny_data(8, seed=arch[1])
        gw, gb = backward(model, data)
        analytic = [g for pair in zip(gw, gb) for g in pair]
        numeric = _numeric_gradient(model, data)
        for a, n in zip(analytic, numeric):
            assert a.shape == n.shape
            scale = max(np.max(np.abs(a)), 1e-12)
            assert np.max(np.abs(a - n)) / scale <= 1e-6

    def test_zero_at_perfect_fit(self):
        model = init_model(NetworkSpec(16, 2, 5), 0)
        x = _tiny_data(10).ratios
        data = Dataset(np.arange(1, 17) * 1000.0, model.predict(x), 45.0, x)
        gw, gb = backward(model, data)
        assert all(np.all(g == 0) for g in gw + gb)

    def test_linear_in_residual_scale(self):
        # doubling every residual doubles the gradient
        model = init_model(NetworkSpec(16, 1, 5), 0)
        x = _tiny_data(10).ratios
        pred = model.predict(x)
        d1 = Dataset(np.arange(1, 17) * 1000.0, np.clip(pred - 1.0, 0, None), 45.0, x)
        d2 = Dataset(np.arange(1, 17) * 1000.0, np.clip(pred - 2.0, 0, None), 45.0, x)
        g1 = backward(model, d1)[0][0]
        g2 = backward(model, d2)[0][0]
        np.testing.assert_allclose(g2, 2 * g1, rtol=1e-10)


class TestAdam:
    def test_first_step_size(self):
        model = init_model(NetworkSpec(3, 1, 3), 0)
        before = [p.copy() for p in model.parameters()]
        grads = [np.full_like(p, 5.0) for p in model.parameters()]
        grads[0][0, 0] = -0.2
        state = AdamState.zeros_like(model)
        adam_step(model, grads, state, TrainConfig())
        assert state.t == 1
        step = model.parameters()[0] - before[0]
        # bias-corrected first step is lr * g / (|g| + eps) ~ -lr * sign(g)
        assert step[0, 0] == pytest.approx(0.001, rel=1e-6)
        assert step[0, 1] == pytest.approx(-0.001, rel=1e-6)

    def test_zero_gradient_leaves_parameters(self):
        model = init_model(NetworkSpec(3, 1, 3), 0)
        before = [p.copy() for p in model.parameters()]
        state = AdamState.zeros_like(model)
        adam_step(model, [np.zeros_like(p) for p in model.parameters()], state, TrainConfig())
        assert all(np.array_equal(a, b) for a, b in zip(before, model.parameters()))

    @given(st.floats(1e-6, 1e3))
    def test_sign_symmetry(self, g):
        def run(sign):
            model = _zero_model(NetworkSpec(1, 1, 1))
            state = AdamState.zeros_like(model)
            for _ in range(3):
                adam_step(model, [np.full_like(p, sign * g) for p in model.parameters()], state, TrainConfig())
            return model.parameters()[0][0, 0]

        assert run(1.0) == -run(-1.0)


class TestTrain:
    def test_deterministic(self, small_data):
        cfg = TrainConfig(epochs=50, seed=3)
        spec = NetworkSpec(16, 2, 5)
        a, ra = train(spec, small_data[0], cfg)
        b, rb = train(spec, small_data[0], cfg)
        assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
        assert ra.trace == rb.trace

    def test_cost_decreases(self, small_data):
        spec = NetworkSpec(16, 1, 5)
        _, short = train(spec, small_data[0], TrainConfig(epochs=100, seed=1))
        _, long = train(spec, small_data[0], TrainConfig(epochs=10_000, seed=1))
        assert long.final_cost <= short.final_cost
        assert long.final_cost < long.initial_cost
        assert long.trace[0][0] == 0 and long.trace[-1][0] == 10_000

    def test_abort_on_divergence(self, small_data):
        # a learning rate near the float64 limit overflows the weights to inf, then nan
        cfg = TrainConfig(epochs=20, learning_rate=1e308, log_every=1)
        with np.errstate(all="ignore"), pytest.raises(TrainingAborted):
            train(NetworkSpec(16, 1, 3), small_data[0], cfg)

    def test_inputs_not_modified(self, small_data):
        spec = NetworkSpec(16, 1, 3)
        model = init_model(spec, 0)
        state = AdamState.zeros_like(model)
        before = [p.copy() for p in model.parameters()]
        train(spec, small_data[0], TrainConfig(epochs=5), model=model, state=state)
        assert all(np.array_equal(a, b) for a, b in zip(before, model.parameters()))
        assert state.t == 0

    def test_resume_matches_uninterrupted(self, small_data):
        spec = NetworkSpec(16, 2, 5)
        full, _ = train(spec, small_data[0], TrainConfig(epochs=60, seed=2))
        half, rep = train(spec, small_data[0], TrainConfig(epochs=30, seed=2))
        resumed, _ = train(spec, small_data[0], TrainConfig(epochs=30, seed=2), model=half, state=rep.adam_state)
        assert all(np.array_equal(a, b) for a, b in zip(full.parameters(), resumed.parameters()))

    def test_spec_mismatch(self, small_data):
        model = init_model(NetworkSpec(16, 1, 3), 0)
        with pytest.raises(DomainError):
            train(NetworkSpec(16, 1, 5), small_data[0], TrainConfig(epochs=1), model=model)

    @pytest.mark.parametrize("kwargs", [dict(learning_rate=0), dict(beta1=1.0), dict(epochs=-1),
                                        dict(epsilon=0), dict(log_every=0)])
    def test_invalid_config(self, kwargs):
        with pytest.raises(DomainError):
            TrainConfig(**kwargs)


class TestPersistence:
    def test_round_trip_bit_identical(self, tmp_path, small_data):
        spec = NetworkSpec(16, 2, 5)
        model, rep = train(spec, small_data[0], TrainConfig(epochs=20, seed=5))
        path = tmp_path / "m.json"
        save_model(path, model, rep.adam_state, rep.config)
        loaded, state, cfg = load_checkpoint(path)
        assert np.array_equal(loaded.predict(small_data[1].ratios), model.predict(small_data[1].ratios))
        assert state.t == 20 and cfg == rep.config
        assert all(np.array_equal(a, b) for a, b in zip(state.v, rep.adam_state.v))

    def test_resume_from_file(self, tmp_path, small_data):
        spec = NetworkSpec(16, 1, 5)
        cfg = TrainConfig(epochs=15, seed=5)
        full, _ = train(spec, small_data[0], TrainConfig(epochs=30, seed=5))
        half, rep = train(spec, small_data[0], cfg)
        path = tmp_path / "ck.json"
        save_model(path, half, rep.adam_state, cfg)
        model, state, _ = load_checkpoint(path)
        resumed, _ = train(spec, small_data[0], cfg, model=model, state=state)
        assert all(np.array_equal(a, b) for a, b in zip(full.parameters(), resumed.parameters()))

    def test_model_only(self, tmp_path):
        model = init_model(NetworkSpec(4, 1, 3), 1)
        path = tmp_path / "m.json"
        save_model(path, model)
        assert load_checkpoint(path)[1:] == (None, None)
        assert load_model(path).spec == model.spec

    @pytest.mark.parametrize("text", [
        "{not json",
        '{"version": 99}',
        '{"version": 1, "spec": {"input_dim": 2}}',
        '{"version": 1, "spec": {"input_dim": 2, "hidden_layers": 1, "neurons_per_layer": 2},'
        ' "weights": [[[1, 2]], [[1, 2]]], "biases": [[0, 0], [0]]}',
        "[]",
    ])
    def test_corrupt_files(self, tmp_path, text):
        path = tmp_path / "bad.json"
        path.write_text(text)
        with pytest.raises(ParseError):
            load_model(path)

    def test_file_is_json_with_version(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(path, init_model(NetworkSpec(4, 1, 3), 1))
        doc = json.loads(path.read_text())
        assert doc["version"] == 1 and doc["spec"]["hidden_layers"] == 1
