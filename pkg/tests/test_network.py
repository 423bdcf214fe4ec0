import numpy as np
import pytest

from conftest import central_diff
from specguard._kernels import gelu as k_gelu
from specguard.network import (ActivationLayer, ConvLayer, DenseLayer, Net,
                               backward, conv2d_periodic, feature_map,
                               forward, forward_batch, input_jacobian_feature,
                               load_checkpoint, make_mlp, parameters, predict,
                               predict_batch, save_checkpoint, softmax)
from specguard.numerics import Rng


def reference_forward(net, x):
    """Independent straightforward re-implementation of the forward pass
    for dense GELU nets."""
    a = np.asarray(x, dtype=np.float64)
    for layer in net.layers:
        if layer.kind == "dense":
            a = layer.W @ a.ravel()
            if layer.b is not None:
                a = a + layer.b
        elif layer.kind == "activation":
            a = k_gelu(a)
    return a


class TestForward:
    def test_zero_weights_zero_logits(self):
        net = Net([DenseLayer(np.zeros((3, 2)), np.zeros(3)),
                   ActivationLayer("gelu")],
                  DenseLayer(np.zeros((2, 3)), np.zeros(2)), (2,))
        logits, _ = forward(net, np.array([1.0, -1.0]))
        assert np.array_equal(logits, np.zeros(2))

    def test_single_identity_layer(self):
        net = Net([], DenseLayer(np.eye(3)), (3,))
        logits, _ = forward(net, np.array([1.0, 0.0, 0.0]))
        assert np.array_equal(logits, np.array([1.0, 0.0, 0.0]))

    def test_matches_reference_implementation(self, rng):
        net = make_mlp([4, 7, 3], "gelu", rng)
        x = rng.gaussian((4,))
        logits, _ = forward(net, x)
        assert np.max(np.abs(logits - reference_forward(net, x))) < 1e-12

    def test_shape_mismatch_rejected(self, rng):
        net = make_mlp([4, 3, 2], "gelu", rng)
        with pytest.raises(ValueError):
            forward(net, rng.gaussian((5,)))


class TestBackward:
    def test_linear_least_squares_gradient(self, rng):
        W = rng.gaussian((3, 4))
        net = Net([], DenseLayer(W.copy()), (4,))
        x = rng.gaussian((2, 4))
        y = rng.gaussian((2, 3))
        logits, cache = forward_batch(net, x)
        # squared error head: d/dlogits = logits - y
        grads = backward(net, cache, logits - y)
        closed = (W @ x.T - y.T) @ x  # gradient of 0.5||Wx - y||^2
        assert np.allclose(grads[0], closed, atol=1e-10)

    def test_zero_dlogits_zero_grads(self, rng):
        net = make_mlp([3, 5, 2], "gelu", rng)
        _, cache = forward_batch(net, rng.gaussian((4, 3)))
        grads = backward(net, cache, np.zeros((4, 2)))
        assert all(np.array_equal(g, np.zeros_like(g)) for g in grads)

    @pytest.mark.parametrize("act", ["gelu", "relu", "tanh"])
    def test_matches_finite_differences(self, act, rng):
        net = make_mlp([3, 6, 4, 2], act, rng)
        X = rng.gaussian((3, 3))
        Y = np.array([0, 1, 1])

        def loss_fn():
            logits, cache = forward_batch(net, X)
            p = softmax(logits)
            m = len(Y)
            loss = -np.mean(np.log(p[np.arange(m), Y]))
            d = p
            d[np.arange(m), Y] -= 1.0
            return loss, cache, d / m

        loss, cache, d = loss_fn()
        grads = backward(net, cache, d)
        for p_arr, g in zip(parameters(net), grads):
            fd = central_diff(lambda _: loss_fn()[0], p_arr)
            denom = max(np.max(np.abs(fd)), 1e-10)
            assert np.max(np.abs(g - fd)) <= 1e-5 * max(denom, 1.0) + 1e-5 * denom

    def test_conv_net_matches_finite_differences(self, rng):
        conv = ConvLayer(rng.gaussian((2, 1, 3, 3)), 6, 6, stride=2,
                         b=rng.gaussian((2,)))
        net = Net([conv, ActivationLayer("tanh")],
                  DenseLayer(rng.gaussian((2, 18)), rng.gaussian((2,))),
                  (1, 6, 6))
        X = rng.gaussian((2, 1, 6, 6))
        Y = np.array([0, 1])

        def loss_fn():
            logits, cache = forward_batch(net, X)
            p = softmax(logits)
            loss = -np.mean(np.log(p[np.arange(2), Y]))
            d = p
            d[np.arange(2), Y] -= 1.0
            return loss, cache, d / 2

        loss, cache, d = loss_fn()
        grads = backward(net, cache, d)
        for p_arr, g in zip(parameters(net), grads):
            fd = central_diff(lambda _: loss_fn()[0], p_arr)
            assert np.max(np.abs(g - fd)) <= 1e-5 * max(np.max(np.abs(fd)), 1.0)


class TestFeatureMap:
    def test_identity_features(self):
        net = Net([], DenseLayer(np.eye(2)), (2,))
        x = np.array([0.3, -0.7])
        assert np.array_equal(feature_map(net, x), x)

    def test_compositional_identity(self, rng):
        net = make_mlp([4, 6, 5, 3], "gelu", rng)
        x = rng.gaussian((4,))
        logits, _ = forward(net, x)
        feats = feature_map(net, x)
        recomposed = net.readout.W @ feats + net.readout.b
        assert np.max(np.abs(logits - recomposed)) < 1e-14

    def test_nonzero_after_training_scale_init(self, rng):
        net = make_mlp([2, 8, 2], "gelu", rng, init_std=0.01)
        assert np.linalg.norm(feature_map(net, np.array([1.0, 1.0]))) > 0


class TestJacobian:
    def test_linear_feature_map(self, rng):
        W = rng.gaussian((5, 3))
        net = Net([DenseLayer(W.copy())], DenseLayer(rng.gaussian((2, 5))), (3,))
        J = input_jacobian_feature(net, rng.gaussian((3,)))
        assert np.allclose(J, W, atol=1e-12)

    @pytest.mark.parametrize("act", ["gelu", "tanh"])
    def test_matches_finite_differences(self, act, rng):
        net = make_mlp([4, 8, 5, 3], act, rng)
        x = rng.gaussian((4,))
        J = input_jacobian_feature(net, x)
        h = 1e-5
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            col = (feature_map(net, x + e) - feature_map(net, x - e)) / (2 * h)
            assert np.max(np.abs(J[:, i] - col)) < 1e-5

    def test_relu_piecewise_scale_invariance(self, rng):
        net = make_mlp([3, 6, 4], "relu", rng, bias=False)
        x = rng.gaussian((3,))
        J1 = input_jacobian_feature(net, x)
        J2 = input_jacobian_feature(net, 2.0 * x)  # same activation pattern
        assert np.array_equal(J1, J2)

    def test_conv_net_jacobian(self, rng):
        conv = ConvLayer(rng.gaussian((2, 1, 2, 2)), 4, 4, stride=1)
        net = Net([conv, ActivationLayer("gelu")],
                  DenseLayer(rng.gaussian((3, 32))), (1, 4, 4))
        x = rng.gaussian((1, 4, 4))
        J = input_jacobian_feature(net, x)
        assert J.shape == (32, 16)
        h = 1e-5
        e = np.zeros(16)
        e[5] = h
        col = (feature_map(net, x + e.reshape(1, 4, 4))
               - feature_map(net, x - e.reshape(1, 4, 4))) / (2 * h)
        assert np.max(np.abs(J[:, 5] - col)) < 1e-5


class TestConv2dPeriodic:
    def test_identity_kernel(self, rng):
        X = rng.gaussian((2, 5, 5))
        K = np.zeros((2, 2, 1, 1))
        K[0, 0] = 1.0
        K[1, 1] = 1.0
        assert np.allclose(conv2d_periodic(X, K, 1), X)

    def test_stride_output_size(self, rng):
        out = conv2d_periodic(rng.gaussian((1, 4, 4)),
                              rng.gaussian((1, 1, 2, 2)), 2)
        assert out.shape == (1, 2, 2)  # floor((4-1)/2 + 1)

    def test_matches_linearization(self, rng):
        from specguard.spectral import conv_linearize

        K = rng.gaussian((2, 2, 3, 3))
        M = conv_linearize(K, 6, 6, 1)
        X = rng.gaussian((2, 6, 6))
        assert np.allclose(M @ X.ravel(), conv2d_periodic(X, K, 1).ravel(),
                           atol=1e-12)


class TestPredict:
    def test_argmax(self):
        net = Net([], DenseLayer(np.eye(2)), (2,))
        assert predict(net, np.array([0.1, 0.9])) == 1

    def test_tie_breaks_low_index(self):
        net = Net([], DenseLayer(np.eye(2)), (2,))
        assert predict(net, np.array([0.5, 0.5])) == 0

    def test_softmax_invariance(self, rng):
        for _ in range(200):
            logits = rng.gaussian((5,)) * 10
            assert np.argmax(logits) == np.argmax(softmax(logits))

    def test_softmax_invariance_on_nets(self, rng):
        hits = 0
        for i in range(50):
            net = make_mlp([3, 6, 4], "gelu", rng)
            x = rng.gaussian((3,))
            logits, _ = forward(net, x)
            hits += int(np.argmax(logits) == np.argmax(softmax(logits)))
        assert hits == 50


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path, rng):
        conv = ConvLayer(rng.gaussian((2, 1, 3, 3)), 6, 6, 2, rng.gaussian((2,)))
        net = Net([conv, ActivationLayer("gelu")],
                  DenseLayer(rng.gaussian((3, 18)), rng.gaussian((3,))),
                  (1, 6, 6))
        p = tmp_path / "net.json"
        save_checkpoint(net, p, extra={"note": "test"})
        net2, extra = load_checkpoint(p)
        assert extra["note"] == "test"
        assert np.array_equal(net.readout.W, net2.readout.W)
        assert np.array_equal(net.feature_layers[0].kernel,
                              net2.feature_layers[0].kernel)
        x = rng.gaussian((1, 6, 6))
        l1, _ = forward(net, x)
        l2, _ = forward(net2, x)
        assert np.array_equal(l1, l2)

    def test_rejects_foreign_documents(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"format": "something-else", "version": 1}')
        with pytest.raises(ValueError):
            load_checkpoint(p)


def test_max_activation_deriv(rng):
    net = make_mlp([3, 4, 4, 2], "gelu", rng)
    assert abs(net.max_activation_deriv() - 1.1289041451851553 ** 2) < 1e-12
    net_r = make_mlp([3, 4, 2], "relu", rng)
    assert net_r.max_activation_deriv() == 1.0
