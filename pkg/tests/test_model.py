import numpy as np
import pytest
from hypothesis import given, strategies as st

from tonaltension.errors import TrainingDiverged
from tonaltension.model import (HIDDEN, ModelParams, TrainConfig, dumps_model,
                                forward, forward_batch, init_model,
                                load_model, loads_model, loss_and_gradient,
                                predict, save_model, train, unflatten)


def randomized(input_dim, seed, scale=0.3):
    """Model with every tensor perturbed so no gating path is degenerate."""
    rng = np.random.default_rng(seed)
    params = init_model(input_dim, seed=seed)
    flat = params.flatten() + rng.normal(scale=scale, size=params.size)
    return unflatten(flat, input_dim, HIDDEN)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_model(7, seed=42)
        b = init_model(7, seed=42)
        assert np.array_equal(a.flatten(), b.flatten())

    def test_zero_input_dim_runs(self):
        params = init_model(0, seed=1)
        assert params.fwd.W.shape == (4 * HIDDEN, 0)
        out = forward(params, np.zeros((4, 0)))
        assert out.shape == (4,)

    def test_forget_bias_is_one(self):
        params = init_model(3, seed=0)
        for d in (params.fwd, params.bwd):
            assert np.all(d.bias[HIDDEN:2 * HIDDEN] == 1.0)
            assert np.all(d.bias[:HIDDEN] == 0.0)
            assert np.all(d.alpha == 1.0)
            assert np.all(d.beta1 == 0.5)

    @given(st.integers(min_value=0, max_value=9), st.integers(min_value=0, max_value=50))
    def test_flatten_unflatten_round_trip(self, dim, seed):
        params = init_model(dim, seed=seed)
        again = unflatten(params.flatten(), dim, HIDDEN)
        assert np.array_equal(params.flatten(), again.flatten())
        for (na, ta), (nb, tb) in zip(params.tensors(), again.tensors()):
            assert na == nb and np.array_equal(ta, tb)


class TestForward:
    def test_all_zero_parameters_predict_zero(self):
        params = unflatten(np.zeros(init_model(3, 0).size), 3, HIDDEN)
        out = forward(params, np.ones((5, 3)))
        assert np.all(out == 0.0)

    def test_bias_only_path(self):
        params = init_model(3, seed=4)
        params.v[:] = 0.0
        params.out_bias = 0.7
        out = forward(params, np.random.default_rng(0).normal(size=(6, 3)))
        assert out == pytest.approx(np.full(6, 0.7))

    def test_reversal_with_swapped_directions(self):
        params = randomized(4, seed=3)
        swapped = ModelParams(
            params.input_dim, params.hidden, params.bwd, params.fwd,
            np.concatenate([params.v[HIDDEN:], params.v[:HIDDEN]]), params.out_bias)
        xs = np.random.default_rng(1).normal(size=(7, 4))
        assert forward(swapped, xs[::-1]) == pytest.approx(forward(params, xs)[::-1])

    def test_output_depends_on_whole_sequence(self):
        params = randomized(4, seed=5)
        xs = np.random.default_rng(2).normal(size=(6, 4))
        perturbed = xs.copy()
        perturbed[-1, 0] += 0.1
        delta = abs(forward(params, xs)[0] - forward(params, perturbed)[0])
        assert delta > 1e-12

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            forward(init_model(3, 0), np.zeros((4, 2)))

    def test_empty_sequence(self):
        assert forward(init_model(3, 0), np.zeros((0, 3))).shape == (0,)

    def test_batch_matches_single(self):
        params = randomized(3, seed=9)
        rng = np.random.default_rng(4)
        batch = rng.normal(size=(5, 8, 3))
        stacked = forward_batch(params, batch)
        for i in range(5):
            assert stacked[i] == pytest.approx(forward(params, batch[i]), abs=1e-12)

    def test_predict_rejects_nan_with_frame(self):
        xs = np.zeros((4, 3))
        xs[2, 1] = np.nan
        with pytest.raises(ValueError, match="frame 2"):
            predict(init_model(3, 0), xs)

    def test_predict_matches_forward(self):
        params = randomized(2, seed=11)
        xs = np.random.default_rng(5).normal(size=(9, 2))
        assert np.array_equal(predict(params, xs), forward(params, xs))


class TestGradient:
    def relative_errors(self, seed, input_dim=4, steps=3):
        rng = np.random.default_rng(seed)
        params = randomized(input_dim, seed)
        theta = params.flatten()
        batch = [(rng.normal(size=(steps, input_dim)), rng.normal(size=steps))]
        _, grad = loss_and_gradient(params, batch)
        eps = 1e-5
        fd = np.zeros_like(grad)
        for i in range(theta.size):
            up, down = theta.copy(), theta.copy()
            up[i] += eps
            down[i] -= eps
            lu, _ = loss_and_gradient(unflatten(up, input_dim, HIDDEN), batch)
            ld, _ = loss_and_gradient(unflatten(down, input_dim, HIDDEN), batch)
            fd[i] = (lu - ld) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-6)
        return np.abs(grad - fd) / denom

    def test_bptt_matches_finite_differences(self):
        assert self.relative_errors(seed=0).max() < 1e-4

    def test_gradient_zero_at_perfect_fit(self):
        params = init_model(2, seed=0)
        params.v[:] = 0.0
        params.out_bias = 0.25
        xs = np.random.default_rng(0).normal(size=(5, 2))
        mse, grad = loss_and_gradient(params, [(xs, np.full(5, 0.25))])
        assert mse == 0.0
        bias_index = params.size - 1
        assert grad[bias_index] == 0.0

    def test_duplicating_sequence_keeps_mse(self):
        params = randomized(3, seed=2)
        rng = np.random.default_rng(3)
        piece = (rng.normal(size=(6, 3)), rng.normal(size=6))
        m1, _ = loss_and_gradient(params, [piece])
        m2, _ = loss_and_gradient(params, [piece, piece])
        assert m2 == pytest.approx(m1, abs=1e-15)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            loss_and_gradient(init_model(2, 0), [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_and_gradient(init_model(2, 0), [(np.zeros((3, 2)), np.zeros(4))])


class TestTrain:
    def dataset(self, rng, pieces=4, steps=12, dim=2):
        return [(rng.normal(size=(steps, dim)), rng.normal(size=steps))
                for _ in range(pieces)]

    def test_constant_target_learned(self, rng):
        # analytic optimum is the constant predictor y = 0.6
        data = [(rng.normal(size=(15, 2)), np.full(15, 0.6)) for _ in range(4)]
        cfg = TrainConfig(learning_rate=2e-2, epochs=200, seed=1,
                          early_stop_patience=200)
        params, log = train(data, cfg)
        final = np.mean([np.mean((forward(params, x) - y) ** 2) for x, y in data])
        assert final < 1e-4

    def test_zero_learning_rate_keeps_parameters(self, rng):
        data = self.dataset(rng)
        cfg = TrainConfig(learning_rate=0.0, epochs=5, seed=3, early_stop_patience=100)
        params, log = train(data, cfg)
        assert np.array_equal(params.flatten(), init_model(2, seed=3).flatten())
        assert len({round(e.train_mse, 12) for e in log}) == 1

    def test_same_seed_identical_log(self, rng):
        data = self.dataset(rng)
        cfg = TrainConfig(epochs=6, seed=7)
        p1, l1 = train(data, cfg)
        p2, l2 = train(data, cfg)
        assert np.array_equal(p1.flatten(), p2.flatten())
        assert l1 == l2

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train([], TrainConfig())

    def test_divergence_reported_with_location(self, rng):
        data = [(rng.normal(size=(4, 2)), np.array([0.0, np.nan, 0.0, 0.0]))]
        with pytest.raises(TrainingDiverged, match="epoch 0"):
            train(data, TrainConfig(epochs=5, seed=0))


class TestModelFile:
    def test_round_trip_is_exact(self, tmp_path, rng):
        params = randomized(4, seed=8)
        path = tmp_path / "model.txt"
        save_model(params, path, {"target": "bpr", "note": "hello world"})
        loaded, meta = load_model(path)
        assert np.array_equal(loaded.flatten(), params.flatten())
        assert meta["target"] == "bpr"
        assert meta["note"] == "hello world"

    def test_leading_comment_lines_skipped(self):
        params = init_model(2, seed=0)
        text = "# manifest=abc\n" + dumps_model(params)
        loaded, _ = loads_model(text)
        assert np.array_equal(loaded.flatten(), params.flatten())

    def test_wrong_magic_rejected(self):
        with pytest.raises(ValueError):
            loads_model("something else\n")

    def test_zero_input_dim_round_trip(self):
        params = init_model(0, seed=2)
        loaded, _ = loads_model(dumps_model(params))
        assert np.array_equal(loaded.flatten(), params.flatten())
