import numpy as np
import pytest

from attrunlearn import nets
from _oracles import kink_free_net_instance as safe_instance


class TestInit:
    def test_construction_counts(self):
        net = nets.init_network([32, 100, 2], seed=7)
        assert net.n_parameters() == 32 * 100 + 100 + 100 * 2 + 2
        assert all(np.all(l.biases == 0) for l in net.layers)

    def test_degenerate_sizes_rejected(self):
        with pytest.raises(ValueError):
            nets.init_network([32], seed=0)
        with pytest.raises(ValueError):
            nets.init_network([4, 0, 2], seed=0)

    def test_seed_determinism_bit_identical(self):
        a = nets.init_network([5, 8, 3], seed=123)
        b = nets.init_network([5, 8, 3], seed=123)
        for la, lb in zip(a.layers, b.layers):
            assert la.weights.tobytes() == lb.weights.tobytes()
            assert la.biases.tobytes() == lb.biases.tobytes()

    def test_init_bounds_follow_fan_in_out(self):
        net = nets.init_network([10, 20, 4], seed=5)
        bound = np.sqrt(6.0 / 30.0)
        assert np.abs(net.layers[0].weights).max() <= bound


class TestForward:
    def test_zero_network_gives_uniform_softmax(self):
        net = nets.init_network([3, 4, 2], seed=0)
        for layer in net.layers:
            layer.weights[:] = 0
        logits = nets.forward(net, np.ones((5, 3)))
        assert np.all(logits == 0)
        probs = np.exp(nets.log_softmax(logits))
        assert np.allclose(probs, 0.5)

    def test_single_linear_layer_matches_hand_matmul(self):
        net = nets.DenseNetwork(
            [nets.Layer(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5]), nets.IDENTITY)]
        )
        x = np.array([[1.0, 1.0], [2.0, 0.0]])
        expected = np.array([[3.5, 6.5], [2.5, 5.5]])
        assert np.allclose(nets.forward(net, x), expected)

    def test_empty_batch(self):
        net = nets.init_network([3, 2], seed=0)
        out = nets.forward(net, np.empty((0, 3)))
        assert out.shape == (0, 2)

    def test_shape_mismatch(self):
        net = nets.init_network([3, 2], seed=0)
        with pytest.raises(ValueError):
            nets.forward(net, np.ones((2, 4)))


class TestLogSoftmaxNLL:
    def test_symmetric_logits(self):
        loss, _ = nets.log_softmax_nll(np.array([[0.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(np.log(2), abs=1e-12)

    def test_saturated_logits(self):
        loss, _ = nets.log_softmax_nll(np.array([[1000.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(loss)

    def test_scalar_log_sum_exp_value(self):
        loss, _ = nets.log_softmax_nll(np.array([[0.5, -0.5]]), np.array([1]))
        assert loss == pytest.approx(np.log(1 + np.e), rel=1e-12)

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            nets.log_softmax_nll(np.zeros((2, 3)), np.array([0, 3]))

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(6, 4))
        _, grad = nets.log_softmax_nll(logits, rng.integers(0, 4, size=6))
        assert np.abs(grad.sum(axis=1)).max() < 1e-9

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        probs = np.exp(nets.log_softmax(rng.normal(size=(8, 5)) * 10))
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9


class TestBackward:
    def test_zero_upstream_gives_zero_bundle(self):
        net = nets.init_network([3, 4, 2], seed=1)
        batch = np.ones((2, 3))
        bundle = nets.backward(net, batch, np.zeros((2, 2)))
        assert all(np.all(g == 0) for g in bundle.param_grads)
        assert np.all(bundle.input_grads == 0)

    def test_single_linear_layer_hand_chain_rule(self):
        W = np.array([[1.0, -2.0], [0.5, 3.0]])
        net = nets.DenseNetwork([nets.Layer(W.copy(), np.zeros(2), nets.IDENTITY)])
        x = np.array([[2.0, 1.0]])
        up = np.array([[1.0, -1.0]])
        bundle = nets.backward(net, x, up)
        assert np.allclose(bundle.param_grads[0], up.T @ x)
        assert np.allclose(bundle.param_grads[1], up[0])
        assert np.allclose(bundle.input_grads, up @ W)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        net, batch, labels = safe_instance(rng)
        assert nets.gradient_check(net, batch, labels) < 1e-4


class TestOptimizer:
    def test_zero_gradient_from_fresh_state(self):
        p = np.array([1.0, 2.0])
        state = nets.OptimizerState(learning_rate=0.1)
        nets.optimizer_step(state, [p], [np.zeros(2)])
        assert np.allclose(p, [1.0, 2.0])

    def test_constant_gradient_moves_against_sign(self):
        p = np.zeros(3)
        state = nets.OptimizerState(learning_rate=1e-2)
        g = np.array([1.0, -1.0, 2.0])
        for _ in range(50):
            nets.optimizer_step(state, [p], [g.copy()])
        assert np.all(np.sign(p) == -np.sign(g))

    def test_first_step_magnitude(self):
        p = np.array([0.0])
        state = nets.OptimizerState(learning_rate=1e-3)
        nets.optimizer_step(state, [p], [np.array([1.0])])
        assert p[0] == pytest.approx(-1e-3, rel=1e-6)
        assert state.step_count == 1

    def test_non_finite_gradient_rejected(self):
        state = nets.OptimizerState()
        with pytest.raises(ValueError, match="non-finite"):
            nets.optimizer_step(state, [np.zeros(2)], [np.array([np.nan, 0.0])])


class TestGradientCheck:
    def test_random_instances_under_tolerance(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            net, batch, labels = safe_instance(rng)
            assert nets.gradient_check(net, batch, labels) < 1e-4

    def test_corrupted_gradient_detected(self):
        rng = np.random.default_rng(99)
        net, batch, labels = safe_instance(rng)
        _, logit_grads = nets.log_softmax_nll(nets.forward(net, batch), labels)
        bundle = nets.backward(net, batch, logit_grads)
        bundle.param_grads[0] = bundle.param_grads[0] * 1.05 + 1e-3
        assert nets.fd_relative_error(net, batch, labels, bundle) > 1e-2

    def test_refuses_large_nets(self):
        net = nets.init_network([100, 120, 10], seed=0)
        with pytest.raises(ValueError):
            nets.gradient_check(net, np.zeros((2, 100)), np.array([0, 1]))

    def test_dead_relu_direction_skipped(self):
        # single hidden unit forced dead for every batch row: its weights get
        # zero gradient both analytically and numerically
        net = nets.init_network([2, 1, 2], seed=3)
        net.layers[0].weights[:] = -1.0
        net.layers[0].biases[:] = -5.0
        batch = np.abs(np.random.default_rng(0).normal(size=(3, 2)))
        assert nets.gradient_check(net, batch, np.array([0, 1, 0])) < 1e-4


class TestDeterminismAndSnapshot:
    def test_forward_is_deterministic(self):
        net = nets.init_network([4, 6, 3], seed=8)
        x = np.random.default_rng(1).normal(size=(5, 4))
        assert nets.forward(net, x).tobytes() == nets.forward(net, x).tobytes()

    def test_snapshot_round_trip(self, tmp_path):
        net = nets.init_network([4, 6, 3], seed=8)
        path = tmp_path / "net.bin"
        nets.save_network(net, path)
        loaded = nets.load_network(path)
        assert len(loaded.layers) == len(net.layers)
        for la, lb in zip(net.layers, loaded.layers):
            assert la.weights.tobytes() == lb.weights.tobytes()
            assert la.biases.tobytes() == lb.biases.tobytes()
            assert la.activation == lb.activation

    def test_snapshot_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ValueError):
            nets.load_network(path)
