import numpy as np
import pytest

from demolearn import mlp, serialize
from demolearn.errors import UsageError
from demolearn.numerics import finite_diff_check, renyi_divergence, renyi_grad


def reference_forward(params, x):
    """Independent matrix-chain evaluation used as a second implementation."""
    a = np.asarray(x, dtype=np.float64)
    for layer in params.layers:
        z = layer.weights @ a + layer.biases
        if layer.activation == "tanh":
            a = np.tanh(z)
        elif layer.activation == "relu":
            a = np.where(z > 0, z, 0.0)
        else:
            a = z
    if params.output_head == "softmax":
        e = np.exp(a - a.max())
        a = e / e.sum()
    return a


def random_net(rng, dims=None, head="softmax", activation="tanh"):
    if dims is None:
        depth = int(rng.integers(2, 5))
        dims = [int(rng.integers(2, 7)) for _ in range(depth)]
    return mlp.init_network(dims, seed=int(rng.integers(2**31)), hidden_activation=activation, output_head=head)


def test_identity_network_passes_input_through():
    layer = mlp.LayerParams(np.eye(3), np.zeros(3), "identity")
    net = mlp.NetworkParams([layer], output_head="identity")
    x = np.array([0.5, -1.0, 2.0])
    out, _ = mlp.forward(net, x)
    np.testing.assert_array_equal(out, x)


def test_softmax_head_symmetry():
    layer = mlp.LayerParams(np.eye(2), np.zeros(2), "identity")
    net = mlp.NetworkParams([layer], output_head="softmax")
    out, _ = mlp.forward(net, np.zeros(2))
    np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-15)


def test_forward_matches_reference_on_random_nets():
    rng = np.random.default_rng(5)
    for _ in range(25):
        net = random_net(rng)
        x = rng.normal(size=net.input_dim)
        out, _ = mlp.forward(net, x)
        np.testing.assert_allclose(out, reference_forward(net, x), rtol=1e-12, atol=1e-14)


def test_forward_shape_mismatch_is_usage_error():
    net = mlp.init_network([3, 2], seed=0)
    with pytest.raises(UsageError):
        mlp.forward(net, np.zeros(4))


def test_backward_zero_gradient():
    rng = np.random.default_rng(9)
    net = random_net(rng, dims=[3, 4, 2])
    out, cache = mlp.forward(net, rng.normal(size=3))
    grads, input_grad = mlp.backward(net, cache, np.zeros_like(out))
    for layer in grads.layers:
        assert not layer.weights.any()
        assert not layer.biases.any()
    assert not input_grad.any()


def test_backward_single_identity_layer_squared_error():
    # loss = 0.5 ||Wx + b - y||^2  =>  input grad = W^T (y_hat - y)
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 3))
    net = mlp.NetworkParams([mlp.LayerParams(w, np.zeros(3), "identity")], output_head="identity")
    x = rng.normal(size=3)
    y = rng.normal(size=3)
    y_hat, cache = mlp.forward(net, x)
    _, input_grad = mlp.backward(net, cache, y_hat - y)
    np.testing.assert_allclose(input_grad, w.T @ (y_hat - y), rtol=1e-12)


def test_backward_stale_cache_rejected():
    net = mlp.init_network([3, 2], seed=0)
    out, cache = mlp.forward(net, np.zeros(3))
    stepped = mlp.sgd_step(net, net, 1e-3)
    with pytest.raises(UsageError):
        mlp.backward(stepped, cache, np.zeros_like(out))


def _renyi_loss_grad_check(rng):
    net = random_net(rng)
    x = rng.normal(size=net.input_dim)
    target = int(rng.integers(net.output_dim))
    alpha = float(rng.uniform(0.1, 1.0))

    probs, cache = mlp.forward(net, x)
    grads, input_grad = mlp.backward(net, cache, renyi_grad(probs, target, alpha))

    def loss_of_params(flat):
        candidate = mlp.unflatten_params(net, flat)
        p, _ = mlp.forward(candidate, x)
        return renyi_divergence(p, target, alpha)

    def loss_of_input(v):
        p, _ = mlp.forward(net, v)
        return renyi_divergence(p, target, alpha)

    theta_report = finite_diff_check(loss_of_params, mlp.flatten_params(net), mlp.flatten_params(grads))
    input_report = finite_diff_check(loss_of_input, x, input_grad)
    return theta_report.max_relative_error, input_report.max_relative_error


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(77)
    worst_theta = worst_input = 0.0
    for _ in range(30):
        t, i = _renyi_loss_grad_check(rng)
        worst_theta = max(worst_theta, t)
        worst_input = max(worst_input, i)
    assert worst_theta < 1e-4
    assert worst_input < 1e-4


def test_no_nonfinite_values_for_bounded_inputs():
    rng = np.random.default_rng(13)
    for _ in range(20):
        net = random_net(rng)
        for layer in net.layers:
            layer.weights = np.clip(layer.weights * 10.0, -10.0, 10.0)
        x = rng.uniform(-10.0, 10.0, size=net.input_dim)
        out, cache = mlp.forward(net, x)
        grads, input_grad = mlp.backward(net, cache, rng.normal(size=out.shape))
        assert np.all(np.isfinite(out))
        assert np.all(np.isfinite(input_grad))
        for layer in grads.layers:
            assert np.all(np.isfinite(layer.weights))


def test_sgd_zero_grads_bit_exact():
    net = mlp.init_network([3, 4, 2], seed=2)
    zeros = mlp.NetworkParams(
        [mlp.LayerParams(np.zeros_like(l.weights), np.zeros_like(l.biases), l.activation) for l in net.layers],
        net.output_head,
    )
    stepped = mlp.sgd_step(net, zeros, 0.1)
    for before, after in zip(net.layers, stepped.layers):
        assert np.array_equal(before.weights, after.weights)
        assert np.array_equal(before.biases, after.biases)


def test_sgd_arithmetic():
    net = mlp.NetworkParams([mlp.LayerParams(np.array([[1.0]]), np.zeros(1), "identity")], "identity")
    grads = mlp.NetworkParams([mlp.LayerParams(np.array([[0.5]]), np.zeros(1), "identity")], "identity")
    stepped = mlp.sgd_step(net, grads, 0.1)
    assert stepped.layers[0].weights[0, 0] == pytest.approx(0.95, abs=1e-15)


def test_sgd_small_step_does_not_increase_loss():
    rng = np.random.default_rng(21)
    for _ in range(10):
        net = random_net(rng)
        x = rng.normal(size=net.input_dim)
        target = int(rng.integers(net.output_dim))
        probs, cache = mlp.forward(net, x)
        before = renyi_divergence(probs, target, 0.9)
        grads, _ = mlp.backward(net, cache, renyi_grad(probs, target, 0.9))
        stepped = mlp.sgd_step(net, grads, 1e-6)
        after, _ = mlp.forward(stepped, x)
        assert renyi_divergence(after, target, 0.9) <= before + 1e-12


def test_init_determinism():
    a = mlp.init_network([5, 8, 3], seed=123)
    b = mlp.init_network([5, 8, 3], seed=123)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.weights, lb.weights)
        assert np.array_equal(la.biases, lb.biases)


def test_serialization_round_trip_bit_faithful():
    rng = np.random.default_rng(31)
    net = random_net(rng, dims=[4, 6, 3])
    doc = serialize.network_to_dict(net)
    text = serialize.dumps(doc)
    import json

    restored = serialize.network_from_dict(json.loads(text))
    for la, lb in zip(net.layers, restored.layers):
        assert np.array_equal(la.weights, lb.weights)
        assert np.array_equal(la.biases, lb.biases)
        assert la.activation == lb.activation
    assert serialize.dumps(serialize.network_to_dict(restored)) == text


def test_flatten_round_trip():
    net = mlp.init_network([3, 5, 2], seed=4)
    flat = mlp.flatten_params(net)
    rebuilt = mlp.unflatten_params(net, flat)
    for la, lb in zip(net.layers, rebuilt.layers):
        assert np.array_equal(la.weights, lb.weights)
        assert np.array_equal(la.biases, lb.biases)
