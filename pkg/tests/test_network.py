import numpy as np
import pytest

from odflow.network import (MlpNetwork, StackedRecurrentNetwork, mse_loss,
                            mse_loss_grad)


class TestMseLoss:
    def test_identical_zero(self):
        x = np.arange(12.0).reshape(3, 4)
        assert mse_loss(x, x) == 0.0

    def test_hand_value(self):
        assert mse_loss(np.array([1.0, 2.0]), np.array([0.0, 0.0])) == 2.5

    def test_homogeneity(self):
        rng = np.random.default_rng(0)
        pred = rng.normal(size=(4, 3))
        target = rng.normal(size=(4, 3))
        base = mse_loss(pred, target)
        scaled = mse_loss(target + 2 * (pred - target), target)
        assert scaled == pytest.approx(4 * base, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros(3), np.zeros(4))


class TestStackedForward:
    def test_zero_weight_gru_outputs_bias(self):
        net = StackedRecurrentNetwork(5, (4, 4, 4), 3, cell_kind="gru", seed=0)
        for name, arr in net.params().items():
            arr[...] = 0.0
        net.head_b[:] = [1.5, -2.0, 0.25]
        rng = np.random.default_rng(1)
        y, _ = net.forward(rng.normal(size=(6, 3, 5)))
        np.testing.assert_array_equal(y, np.tile(net.head_b, (6, 1)))

    def test_shape_contract(self):
        net = StackedRecurrentNetwork(112, (64, 64, 64), 100, cell_kind="lstm", seed=0)
        y, cache = net.forward(np.zeros((2, 3, 112)))
        assert y.shape == (2, 100)
        features = cache[3]
        assert features.shape == (2, 64)

    def test_layer_input_widths_follow_concatenation(self):
        net = StackedRecurrentNetwork(7, (5, 6, 4), 3, cell_kind="rnn", seed=0)
        assert net.layers[0].input_size == 7
        assert net.layers[1].input_size == 5 + 7
        assert net.layers[2].input_size == 6 + 7
        wider = StackedRecurrentNetwork(9, (5, 6, 4), 3, cell_kind="rnn", seed=0)
        assert wider.layers[1].input_size - net.layers[1].input_size == 2
        assert wider.layers[2].input_size - net.layers[2].input_size == 2

    def test_scalar_composition_trace(self):
        # 1-unit layers: hand-compose the three cell traces plus affine head
        net = StackedRecurrentNetwork(1, (1, 1, 1), 1, cell_kind="rnn", seed=0)
        p = net.params()
        for name, arr in p.items():
            arr[...] = 0.5
        x = np.array([[[0.3], [0.7]]])
        y, _ = net.forward(x)

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        h1 = 0.0
        h2 = 0.0
        h3 = 0.0
        for t in range(2):
            xt = x[0, t, 0]
            h1 = sig(0.5 * xt + 0.5 * h1 + 0.5)
            x2 = np.array([h1, xt])
            h2 = sig(0.5 * x2.sum() + 0.5 * h2 + 0.5)
            x3 = np.array([h2, xt])
            h3 = sig(0.5 * x3.sum() + 0.5 * h3 + 0.5)
        expected = 0.5 * h3 + 0.5
        assert y[0, 0] == pytest.approx(expected, abs=1e-12)

    def test_invalid_window_width(self):
        net = StackedRecurrentNetwork(4, (3, 3, 3), 2, seed=0)
        with pytest.raises(ValueError):
            net.forward(np.zeros((2, 3, 5)))


def network_gradient_check(net, x, targets, extra=None, step=1e-5,
                           rel_tol=1e-4, abs_floor=1e-6):
    pred, cache = net.forward(x, extra)
    _, grads = net.backward(cache, mse_loss_grad(pred, targets))
    params = net.params()

    def loss():
        p, _ = net.forward(x, extra)
        return mse_loss(p, targets)

    worst = 0.0
    for name, arr in params.items():
        flat = arr.ravel()
        g_flat = grads[name].ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss()
            flat[idx] = orig - step
            down = loss()
            flat[idx] = orig
            num = (up - down) / (2 * step)
            err = abs(g_flat[idx] - num)
            tol = max(rel_tol * max(abs(g_flat[idx]), abs(num)), abs_floor)
            assert err <= tol, f"{name}[{idx}]: analytic {g_flat[idx]} vs numeric {num}"
            worst = max(worst, err / max(tol, 1e-300))
    return worst


@pytest.mark.parametrize("kind", ["rnn", "lstm", "gru"])
def test_stack_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(7)
    net = StackedRecurrentNetwork(3, (4, 4, 4), 3, cell_kind=kind, seed=1)
    x = rng.normal(size=(5, 2, 3))
    targets = rng.normal(size=(5, 3))
    network_gradient_check(net, x, targets)


def test_stack_gradients_with_extra_head_inputs():
    rng = np.random.default_rng(8)
    net = StackedRecurrentNetwork(3, (4, 4, 4), 2, cell_kind="gru", seed=2,
                                  extra_size=2)
    x = rng.normal(size=(4, 2, 3))
    extra = rng.normal(size=(4, 2))
    targets = rng.normal(size=(4, 2))
    network_gradient_check(net, x, targets, extra=extra)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    net = MlpNetwork(6, (5, 4, 3), 2, seed=3)
    x = rng.normal(size=(5, 6))
    targets = rng.normal(size=(5, 2))
    network_gradient_check(net, x, targets)


def test_zero_residual_gives_zero_gradients():
    rng = np.random.default_rng(10)
    net = StackedRecurrentNetwork(2, (3, 3, 3), 2, cell_kind="gru", seed=4)
    x = rng.normal(size=(3, 2, 2))
    pred, cache = net.forward(x)
    _, grads = net.backward(cache, mse_loss_grad(pred, pred))
    for g in grads.values():
        np.testing.assert_array_equal(g, 0.0)


def test_head_bias_gradient_is_twice_mean_residual():
    rng = np.random.default_rng(11)
    net = StackedRecurrentNetwork(2, (3, 3, 3), 4, cell_kind="rnn", seed=5)
    x = rng.normal(size=(6, 2, 2))
    targets = rng.normal(size=(6, 4))
    pred, cache = net.forward(x)
    _, grads = net.backward(cache, mse_loss_grad(pred, targets))
    expect = 2.0 * (pred - targets).sum(axis=0) / pred.size
    np.testing.assert_allclose(grads["head/b"], expect, rtol=1e-12)


def test_mlp_zero_weight_forward_outputs_bias():
    net = MlpNetwork(4, (3, 3, 3), 2, seed=0)
    for arr in net.params().values():
        arr[...] = 0.0
    net.head_b[:] = [0.75, -0.5]
    y, _ = net.forward(np.ones((3, 4)))
    np.testing.assert_array_equal(y, np.tile([0.75, -0.5], (3, 1)))


def test_param_count_reported():
    net = StackedRecurrentNetwork(10, (8, 8, 8), 5, cell_kind="lstm", seed=0)
    total = sum(p.size for p in net.params().values())
    assert net.param_count() == total
