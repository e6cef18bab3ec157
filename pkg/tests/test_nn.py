import numpy as np
import pytest

from shrinklab.artifacts import load_checkpoint, save_checkpoint
from shrinklab.nn import (AdamWState, LinearLayer, Mlp, MlpParams, TrainingFault,
                          adamw_step, mse_loss, relu_backward, relu_forward)


def naive_linear(weight, bias, x):
    """Scalar triple-loop reference for x @ W.T + b."""
    out = np.zeros((x.shape[0], weight.shape[0]))
    for i in range(x.shape[0]):
        for o in range(weight.shape[0]):
            acc = bias[o]
            for j in range(x.shape[1]):
                acc += x[i, j] * weight[o, j]
            out[i, o] = acc
    return out


def central_diff(f, x, h=1e-5):
    """Central finite differences of a scalar function over an array."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = f()
        x[idx] = orig - h
        down = f()
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)


class TestLinearForward:
    def test_identity(self):
        layer = LinearLayer(np.eye(3), np.zeros(3))
        x = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(layer.forward(x), x)

    def test_scalar(self):
        layer = LinearLayer(np.array([[2.0]]), np.array([1.0]))
        assert layer.forward(np.array([[3.0]]))[0, 0] == 7.0

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(1)
        layer = LinearLayer(rng.normal(size=(4, 3)), rng.normal(size=4))
        x = rng.normal(size=(8, 3))
        assert np.abs(layer.forward(x) - naive_linear(layer.weight, layer.bias, x)).max() < 1e-12

    def test_dim_mismatch(self):
        layer = LinearLayer(np.eye(3), np.zeros(3))
        with pytest.raises(ValueError):
            layer.forward(np.zeros((2, 4)))


class TestLinearBackward:
    def test_zero_grad_out(self):
        layer = LinearLayer(np.eye(2), np.zeros(2))
        layer.forward(np.ones((3, 2)))
        gi, gw, gb = layer.backward(np.zeros((3, 2)))
        assert not gi.any() and not gw.any() and not gb.any()

    def test_scalar_chain_rule(self):
        w, a, g = 1.7, -0.4, 2.5
        layer = LinearLayer(np.array([[w]]), np.array([0.0]))
        layer.forward(np.array([[a]]))
        gi, gw, gb = layer.backward(np.array([[g]]))
        assert gi[0, 0] == pytest.approx(g * w)
        assert gw[0, 0] == pytest.approx(g * a)
        assert gb[0] == pytest.approx(g)

    def test_backward_before_forward(self):
        layer = LinearLayer(np.eye(2), np.zeros(2))
        with pytest.raises(RuntimeError):
            layer.backward(np.zeros((1, 2)))

    def test_cache_cleared_after_backward(self):
        layer = LinearLayer(np.eye(2), np.zeros(2))
        layer.forward(np.ones((1, 2)))
        layer.backward(np.ones((1, 2)))
        assert layer.cached_input is None

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            layer = LinearLayer(rng.normal(size=(3, 4)), rng.normal(size=3))
            x = rng.normal(size=(6, 4))
            coeff = rng.normal(size=(6, 3))  # scalarize: L = sum(coeff * out)

            def loss():
                return float((coeff * layer.forward(x, cache=False)).sum())

            layer.forward(x)
            gi, gw, gb = layer.backward(coeff)
            assert rel_err(gw, central_diff(loss, layer.weight)) < 1e-4
            assert rel_err(gb, central_diff(loss, layer.bias)) < 1e-4
            assert rel_err(gi, central_diff(loss, x)) < 1e-4


class TestReluAndMse:
    def test_relu_values(self):
        assert np.array_equal(relu_forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_relu_gradient_zero_at_zero(self):
        x = np.array([-1.0, 0.0, 2.0])
        assert np.array_equal(relu_backward(np.ones(3), x), [0.0, 0.0, 1.0])

    def test_mse_identity_case(self):
        x = np.arange(4.0).reshape(2, 2)
        loss, grad = mse_loss(x, x)
        assert loss == 0.0 and not grad.any()

    def test_mse_hand_example(self):
        loss, grad = mse_loss(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]]))
        assert loss == pytest.approx(2.5)
        assert np.allclose(grad, [[1.0, 2.0]])

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class TestMlp:
    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        mlp = Mlp.create(3, 5, 2, rng)
        x = rng.normal(size=(7, 3))
        target = rng.normal(size=(7, 2))

        def loss():
            return mse_loss(mlp.forward(x, cache=False), target)[0]

        out = mlp.forward(x)
        _, grad0 = mse_loss(out, target)
        grad_in, grads = mlp.backward(grad0)
        params = mlp.parameters()
        assert len(grads) == len(params) == 6
        for p, g in zip(params, grads):
            assert rel_err(g, central_diff(loss, p)) < 1e-4
        assert rel_err(grad_in, central_diff(loss, x)) < 1e-4

    def test_forward_deterministic(self):
        rng = np.random.default_rng(4)
        mlp = Mlp.create(2, 4, 2, rng)
        x = np.random.default_rng(5).normal(size=(10, 2))
        assert np.array_equal(mlp.forward(x, cache=False), mlp.forward(x, cache=False))

    def test_mlp_params_create_dims(self):
        params = MlpParams.create(input_dim=2, hidden_dim=32, latent_dim=3, seed=0)
        assert params.encoder.in_dim == 2 and params.encoder.out_dim == 3
        assert params.decoder.in_dim == 3 and params.decoder.out_dim == 2
        assert params.hidden_dim == 32

    def test_same_seed_same_params(self):
        a = MlpParams.create(2, 8, 2, seed=9)
        b = MlpParams.create(2, 8, 2, seed=9)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)


class TestAdamW:
    def test_zero_gradient_no_decay_keeps_params(self):
        p = np.array([1.0, -2.0])
        state = AdamWState.for_params([p], weight_decay=0.0)
        adamw_step([p], [np.zeros(2)], state)
        assert np.array_equal(p, [1.0, -2.0])

    def test_first_step_is_sign_scaled(self):
        # from zero state: update = lr * g / (|g| + eps) for any constant g
        p = np.zeros(3)
        g = np.array([0.5, -3.0, 10.0])
        state = AdamWState.for_params([p], lr=0.01, weight_decay=0.0)
        adamw_step([p], [g.copy()], state)
        expected = -0.01 * g / (np.abs(g) + state.eps)
        assert np.allclose(p, expected, rtol=1e-8)

    def test_beta_zero_degenerates_to_sign_sgd(self):
        p = np.array([0.3])
        state = AdamWState.for_params([p], lr=0.05, beta1=0.0, beta2=0.0, weight_decay=0.0)
        for g in (np.array([2.0]), np.array([-8.0]), np.array([0.1])):
            before = p.copy()
            adamw_step([p], [g], state)
            assert np.allclose(p - before, -0.05 * g / (np.abs(g) + state.eps), rtol=1e-8)

    def test_descends_convex_quadratic(self):
        w = np.array([1.0])
        state = AdamWState.for_params([w], lr=0.01, weight_decay=0.0)
        values = [abs(w[0])]
        for _ in range(100):
            adamw_step([w], [2.0 * w], state)  # gradient of w^2
            values.append(abs(w[0]))
        assert all(b < a for a, b in zip(values, values[1:]))
        assert values[-1] < values[0] / 2

    def test_weight_decay_applied_before_adaptive_step(self):
        p = np.array([10.0])
        state = AdamWState.for_params([p], lr=0.1, weight_decay=0.5)
        adamw_step([p], [np.zeros(1)], state)
        # zero gradient: only the decoupled decay acts
        assert p[0] == pytest.approx(10.0 * (1 - 0.1 * 0.5))

    def test_non_finite_gradient_faults(self):
        p = np.zeros(2)
        state = AdamWState.for_params([p])
        with pytest.raises(TrainingFault):
            adamw_step([p], [np.array([np.nan, 0.0])], state)


class TestCheckpointFormat:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        tensors = {"a.weight": rng.normal(size=(3, 4)), "a.bias": rng.normal(size=3),
                   "scalarish": rng.normal(size=(1,))}
        path = str(tmp_path / "ck.bin")
        save_checkpoint(path, tensors)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(tensors)
        for name in tensors:
            assert np.array_equal(loaded[name], tensors[name])

    def test_params_round_trip(self, tmp_path):
        params = MlpParams.create(2, 6, 2, seed=1)
        path = str(tmp_path / "params.bin")
        params.save(path)
        loaded = MlpParams.load(path)
        for a, b in zip(params.parameters(), loaded.parameters()):
            assert np.array_equal(a, b)

    def test_corrupt_header_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not a checkpoint\n\x00\x01")
        with pytest.raises(ValueError):
            load_checkpoint(str(path))

    def test_truncated_payload_rejected(self, tmp_path):
        path = str(tmp_path / "trunc.bin")
        save_checkpoint(path, {"w": np.ones((4, 4))})
        data = open(path, "rb").read()
        open(path, "wb").write(data[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)
