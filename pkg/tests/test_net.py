import numpy as np
import pytest
from oracle_utils import fd_gradient, max_rel_error

from xai_probe.errors import InputError, InternalError
from xai_probe.net import (
    BackwardMode,
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    Network,
    ReLU,
    build_network,
    clone_network,
    forward,
    load_network,
    loss_and_grad,
    save_network,
    sgd_step,
)

STANDARD = BackwardMode.STANDARD
GUIDED = BackwardMode.GUIDED


def dense_net(weight, bias=None, input_shape=None):
    weight = np.asarray(weight, dtype=np.float64)
    if bias is None:
        bias = np.zeros(weight.shape[1])
    if input_shape is None:
        input_shape = (1, 1, weight.shape[0])
    return Network(
        [Flatten(), Dense(weight, np.asarray(bias, dtype=np.float64))],
        input_shape,
        weight.shape[1],
    )


ALL_LAYERS_ARCH = [
    {"kind": "Conv2d", "out_channels": 4, "kernel_size": 3, "padding": 1},
    {"kind": "ReLU"},
    {"kind": "MaxPool2d", "kernel_size": 2},
    {"kind": "Conv2d", "out_channels": 3, "kernel_size": 3, "padding": 0},
    {"kind": "ReLU"},
    {"kind": "Flatten"},
    {"kind": "Dense", "out_features": 5},
]


def all_layers_net(seed):
    return build_network(ALL_LAYERS_ARCH, (3, 8, 8), 5, seed)


class TestForward:
    def test_zero_dense_gives_zero_scores(self):
        net = dense_net(np.zeros((3, 4)))
        x = np.random.default_rng(0).random((1, 1, 3))
        assert np.all(forward(net, x) == 0.0)

    def test_identity_dense(self):
        net = dense_net(np.eye(2))
        scores = forward(net, np.array([0.2, 0.8]).reshape(1, 1, 2))
        np.testing.assert_array_equal(scores, [0.2, 0.8])

    def test_scalar_conv_scales(self):
        conv = Conv2d(np.full((1, 1, 1, 1), 2.0), np.zeros(1))
        out = conv.forward(np.array([[[[0.5]]]]))
        np.testing.assert_array_equal(out, [[[[1.0]]]])

    def test_shape_mismatch_rejected(self):
        net = dense_net(np.eye(2))
        with pytest.raises(InputError):
            forward(net, np.zeros((1, 1, 3)))

    def test_determinism_bit_identical(self):
        net = all_layers_net(3)
        x = np.random.default_rng(5).random((3, 8, 8))
        first = loss_and_grad(net, x, 2, STANDARD)
        second = loss_and_grad(net, x, 2, STANDARD)
        assert first[0] == second[0]
        np.testing.assert_array_equal(first[1], second[1])


class TestGradients:
    def test_single_class_loss_and_grad_zero(self):
        net = dense_net(np.ones((2, 1)))
        loss, grad_x, _ = loss_and_grad(net, np.full((1, 1, 2), 0.3), 0, STANDARD)
        assert loss == 0.0
        np.testing.assert_array_equal(grad_x, np.zeros((1, 1, 2)))

    def test_invalid_label_rejected(self):
        net = dense_net(np.eye(2))
        with pytest.raises(InputError):
            loss_and_grad(net, np.zeros((1, 1, 2)), 2, STANDARD)

    def test_two_layer_fd_oracle_seed7(self):
        net = build_network(
            [{"kind": "Flatten"}, {"kind": "Dense", "out_features": 3}], (2, 3, 3), 3, 7
        )
        rng = np.random.default_rng(7)
        x = rng.random((2, 3, 3))
        _, grad_x, _ = loss_and_grad(net, x, 1, STANDARD)
        numeric = fd_gradient(lambda: loss_and_grad(net, x, 1, STANDARD)[0], x)
        assert max_rel_error(grad_x, numeric) < 1e-4

    @pytest.mark.parametrize("seed", range(10))
    def test_all_layer_types_fd_oracle(self, seed):
        net = all_layers_net(seed)
        rng = np.random.default_rng(seed + 100)
        x = rng.random((3, 8, 8))
        label = int(rng.integers(net.num_classes))
        _, grad_x, grad_params = loss_and_grad(net, x, label, STANDARD)

        numeric_x = fd_gradient(lambda: loss_and_grad(net, x, label, STANDARD)[0], x)
        assert max_rel_error(grad_x, numeric_x) < 1e-4

        for layer, grads in zip(net.layers, grad_params):
            if grads is None:
                continue
            for name in ("weight", "bias"):
                numeric = fd_gradient(
                    lambda: loss_and_grad(net, x, label, STANDARD)[0],
                    getattr(layer, name),
                )
                assert max_rel_error(grads[name], numeric) < 1e-4


class TestGuided:
    def test_dead_relu_blocks_gradient(self):
        # one unit with forward input -1: no gradient may pass regardless
        # of what flows in from above
        relu = ReLU()
        relu.forward(np.array([[-1.0, 2.0]]))
        dx = relu.backward(np.array([[5.0, 5.0]]), GUIDED)
        np.testing.assert_array_equal(dx, [[0.0, 5.0]])

    def test_negative_upstream_blocked_in_guided(self):
        relu = ReLU()
        relu.forward(np.array([[1.0, 1.0]]))
        dx = relu.backward(np.array([[-3.0, 3.0]]), GUIDED)
        np.testing.assert_array_equal(dx, [[0.0, 3.0]])
        dx_std = relu.backward(np.array([[-3.0, 3.0]]), STANDARD)
        np.testing.assert_array_equal(dx_std, [[-3.0, 3.0]])

    def test_guided_equals_standard_when_all_positive(self):
        # positive weights, positive inputs: every ReLU input and every
        # upstream gradient component stays positive for the score seed
        weight = np.abs(np.random.default_rng(0).random((4, 2))) + 0.1
        net = Network(
            [Flatten(), Dense(weight, np.zeros(2)), ReLU()],
            (1, 2, 2),
            2,
        )
        x = np.random.default_rng(1).random((1, 2, 2)) + 0.5
        scores = forward(net, x)
        seed = np.zeros((1, 2))
        seed[0, int(scores.argmax())] = 1.0
        g_guided = net.backward_batch(seed.copy(), GUIDED)[0]
        forward(net, x)
        g_std = net.backward_batch(seed.copy(), STANDARD)[0]
        np.testing.assert_array_equal(g_guided, g_std)

    @pytest.mark.parametrize("seed", range(5))
    def test_guided_zeroing_at_every_relu(self, seed):
        net = all_layers_net(seed)
        rng = np.random.default_rng(seed)
        x = rng.random((3, 8, 8))
        net.forward_batch(x[None])
        dout = rng.normal(size=(1, net.num_classes))
        for layer in reversed(net.layers):
            dnext = layer.backward(dout, GUIDED)
            if isinstance(layer, ReLU):
                assert np.all(dnext[layer._x <= 0.0] == 0.0)
                assert np.all(dnext[dout <= 0.0] == 0.0)
            dout = dnext

    def test_relu_free_net_guided_equals_standard(self):
        net = build_network(
            [
                {"kind": "Conv2d", "out_channels": 2, "kernel_size": 3, "padding": 1},
                {"kind": "MaxPool2d", "kernel_size": 2},
                {"kind": "Flatten"},
                {"kind": "Dense", "out_features": 3},
            ],
            (3, 6, 6),
            3,
            11,
        )
        x = np.random.default_rng(2).random((3, 6, 6))
        _, g1, _ = loss_and_grad(net, x, 0, GUIDED)
        _, g2, _ = loss_and_grad(net, x, 0, STANDARD)
        np.testing.assert_array_equal(g1, g2)


class TestMaxPool:
    def test_tie_routes_to_first_row_major(self):
        pool = MaxPool2d(2)
        x = np.full((1, 1, 2, 2), 0.7)
        pool.forward(x)
        dx = pool.backward(np.array([[[[1.0]]]]), STANDARD)
        np.testing.assert_array_equal(dx[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_gradient_goes_to_argmax(self):
        pool = MaxPool2d(2)
        x = np.array([[[[0.1, 0.9], [0.3, 0.2]]]])
        pool.forward(x)
        dx = pool.backward(np.array([[[[2.0]]]]), STANDARD)
        np.testing.assert_array_equal(dx[0, 0], [[0.0, 2.0], [0.0, 0.0]])


class TestSgdStep:
    def test_zero_lr_keeps_parameters(self):
        net = dense_net(np.eye(2))
        _, _, grads = loss_and_grad(net, np.array([[[0.4, 0.6]]]), 0, STANDARD)
        before = net.layers[1].weight.copy()
        sgd_step(net, grads, 0.0)
        np.testing.assert_array_equal(net.layers[1].weight, before)

    def test_scalar_update(self):
        net = dense_net(np.array([[1.0]]), input_shape=(1, 1, 1))
        grads = [None, {"weight": np.array([[0.5]]), "bias": np.array([0.0])}]
        sgd_step(net, grads, 0.1)
        assert net.layers[1].weight[0, 0] == pytest.approx(0.95)

    def test_two_steps_match_summed_update(self):
        g = {"weight": np.array([[0.3]]), "bias": np.array([0.2])}
        net_a = dense_net(np.array([[1.0]]), input_shape=(1, 1, 1))
        net_b = dense_net(np.array([[1.0]]), input_shape=(1, 1, 1))
        sgd_step(net_a, [None, g], 0.1)
        sgd_step(net_a, [None, g], 0.1)
        doubled = {"weight": g["weight"] * 2, "bias": g["bias"] * 2}
        sgd_step(net_b, [None, doubled], 0.1)
        np.testing.assert_allclose(net_a.layers[1].weight, net_b.layers[1].weight)

    def test_shape_mismatch_is_internal_error(self):
        net = dense_net(np.eye(2))
        bad = [None, {"weight": np.zeros((3, 3)), "bias": np.zeros(2)}]
        with pytest.raises(InternalError):
            sgd_step(net, bad, 0.1)


class TestSerialization:
    def test_round_trip_bit_identical(self, tmp_path):
        net = all_layers_net(42)
        path = tmp_path / "model.json"
        save_network(net, path)
        loaded = load_network(path)
        x = np.random.default_rng(0).random((3, 8, 8))
        np.testing.assert_array_equal(forward(net, x), forward(loaded, x))
        assert loaded.seed == 42

    def test_clone_is_independent(self):
        net = all_layers_net(1)
        twin = clone_network(net)
        x = np.random.default_rng(0).random((3, 8, 8))
        np.testing.assert_array_equal(forward(net, x), forward(twin, x))
        twin.layers[0].weight += 1.0
        assert not np.array_equal(net.layers[0].weight, twin.layers[0].weight)


class TestCacheFreeForward:
    def test_same_scores_as_cached(self):
        net = all_layers_net(6)
        x = np.random.default_rng(3).random((4, 3, 8, 8))
        np.testing.assert_array_equal(
            net.forward_batch(x, cache=True), net.forward_batch(x, cache=False)
        )

    def test_interleaved_uncached_forward_keeps_backward_exact(self):
        # a cache=False forward of the same batch shape between a cached
        # forward and its backward must not disturb the gradients
        from xai_probe.net import cross_entropy

        net = all_layers_net(6)
        rng = np.random.default_rng(4)
        x = rng.random((3, 8, 8))
        y = rng.random((3, 8, 8))
        _, grad_clean, _ = loss_and_grad(net, x, 2, STANDARD)

        scores = net.forward_batch(x[None], cache=True)[0]
        _, dscores = cross_entropy(scores, 2)
        net.forward_batch(y[None], cache=False)  # interleave before backward
        grad_interleaved = net.backward_batch(dscores[None], STANDARD)[0]
        np.testing.assert_array_equal(grad_clean, grad_interleaved)
