import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcases import LAYER_CASES
from lungsound.nn import (Adam, BatchNorm2d, Conv2d, Dropout, Linear, Sequential, Tensor,
                          check_gradients)
from lungsound.nn import functional as F

RNG_SEED = 1234


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


@pytest.mark.parametrize("layer", sorted(LAYER_CASES))
def test_gradients(layer):
    rng = np.random.default_rng(RNG_SEED)
    for label, op, inputs in LAYER_CASES[layer](8, seed=99):
        errors = check_gradients(op, inputs, rng)
        assert max(errors.values()) < 1e-5, label


class TestConv:
    @pytest.mark.parametrize("method", ["im2col", "fft"])
    def test_identity_kernel(self, method):
        x = np.random.default_rng(0).standard_normal((2, 3, 5, 5))
        w = np.eye(3).reshape(3, 3, 1, 1)
        out = F.conv2d(T(x), T(w), T(np.zeros(3)), method=method)
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    @pytest.mark.parametrize("method", ["im2col", "fft"])
    def test_ones_sum(self, method):
        out = F.conv2d(T(np.ones((1, 1, 5, 5))), T(np.ones((1, 1, 3, 3))), method=method)
        np.testing.assert_allclose(out.data, np.full((1, 1, 3, 3), 9.0))

    def test_methods_agree(self):
        rng = np.random.default_rng(3)
        x, w, b = rng.standard_normal((2, 8, 20, 17)), rng.standard_normal((4, 8, 7, 7)), rng.standard_normal(4)
        for padding in ("same", "valid", 4):
            a = F.conv2d(T(x), T(w), T(b), padding=padding, method="im2col").data
            f = F.conv2d(T(x), T(w), T(b), padding=padding, method="fft").data
            np.testing.assert_allclose(a, f, atol=1e-10)

    def test_output_shape(self):
        out = F.conv2d(T(np.zeros((2, 3, 11, 9))), T(np.zeros((5, 3, 3, 3))), stride=2, padding=1)
        assert out.shape == (2, 5, 6, 5)

    @pytest.mark.parametrize("x_shape, w_shape, kwargs, msg", [
        ((1, 3, 5, 5), (2, 4, 3, 3), {}, "channel mismatch"),
        ((3, 5, 5), (2, 3, 3, 3), {}, "4-D"),
        ((1, 1, 2, 2), (1, 1, 3, 3), {}, "larger than"),
        ((1, 1, 5, 5), (1, 1, 3, 3), {"stride": 2, "padding": "same"}, "stride 1"),
        ((1, 1, 5, 5), (1, 1, 3, 3), {"stride": 2, "method": "fft"}, "stride 1"),
        ((1, 1, 5, 5), (1, 1, 3, 3), {"method": "winograd"}, "unknown"),
    ])
    def test_errors(self, x_shape, w_shape, kwargs, msg):
        with pytest.raises(ValueError, match=msg):
            F.conv2d(T(np.zeros(x_shape)), T(np.zeros(w_shape)), **kwargs)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
    def test_linear_in_input(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((2, 2, 6, 6)), rng.standard_normal((2, 2, 6, 6))
        w = T(rng.standard_normal((3, 2, 3, 3)))
        lhs = F.conv2d(T(a * x + b * y), w, padding="same").data
        rhs = a * F.conv2d(T(x), w, padding="same").data + b * F.conv2d(T(y), w, padding="same").data
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)


class TestPool:
    def test_basic(self):
        assert F.max_pool2d(T([[[[1, 2], [3, 4]]]]), 2).data.tolist() == [[[[4.0]]]]

    def test_constant(self):
        out = F.max_pool2d(T(np.full((1, 2, 6, 6), 3.0)), 2)
        assert out.shape == (1, 2, 3, 3) and (out.data == 3.0).all()

    def test_ties_route_to_first(self):
        x = T(np.ones((1, 1, 2, 2)), grad=True)
        F.max_pool2d(x, 2).backward(np.ones((1, 1, 1, 1)))
        assert x.grad.tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]

    def test_window_too_large(self):
        with pytest.raises(ValueError, match="larger"):
            F.max_pool2d(T(np.zeros((1, 1, 2, 2))), 3)


class TestBatchNorm:
    def test_train_normalizes(self):
        x = np.random.default_rng(0).standard_normal((8, 3, 4, 4)) * 5 + 2
        out = F.batch_norm2d(T(x), T(np.ones(3)), T(np.zeros(3)), np.zeros(3), np.ones(3), True).data
        assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-5
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)

    def test_eval_identity(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
        out = F.batch_norm2d(T(x), T(np.ones(3)), T(np.zeros(3)), np.zeros(3), np.ones(3), False,
                             eps=0.0).data
        np.testing.assert_array_equal(out, x)

    def test_running_stats(self):
        x = np.random.default_rng(0).standard_normal((4, 2, 3, 3)) + 1
        rm, rv = np.zeros(2), np.ones(2)
        F.batch_norm2d(T(x), T(np.ones(2)), T(np.zeros(2)), rm, rv, True)
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))

    def test_single_value_rejected(self):
        with pytest.raises(ValueError, match="more than one"):
            F.batch_norm2d(T(np.zeros((1, 2, 1, 1))), T(np.ones(2)), T(np.zeros(2)), np.zeros(2),
                           np.ones(2), True)


class TestElementwise:
    def test_relu(self):
        assert F.relu(T([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
        x = np.abs(np.random.default_rng(0).standard_normal(10))
        np.testing.assert_array_equal(F.relu(T(x)).data, x)

    @pytest.mark.parametrize("p", [0.0, 0.3, 0.9])
    def test_dropout_eval_identity(self, p):
        x = T(np.arange(10.0))
        assert F.dropout(x, p, training=False) is x

    def test_dropout_p0_train(self):
        x = T(np.arange(10.0))
        np.testing.assert_array_equal(F.dropout(x, 0.0, True, np.random.default_rng(0)).data, x.data)

    def test_dropout_statistics(self):
        x = T(np.ones(1_000_000))
        out = F.dropout(x, 0.5, True, np.random.default_rng(0)).data
        assert abs((out > 0).mean() - 0.5) < 0.01
        assert abs(out.mean() - 1.0) < 0.01

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_dropout_range(self, p):
        with pytest.raises(ValueError):
            F.dropout(T(np.ones(3)), p, True, np.random.default_rng(0))
        with pytest.raises(ValueError):
            Dropout(p)

    def test_linear(self):
        x = np.random.default_rng(0).standard_normal((4, 3))
        np.testing.assert_array_equal(F.linear(T(x), T(np.eye(3)), T(np.zeros(3))).data, x)
        assert F.linear(T([[2.0]]), T([[3.0]]), T([1.0])).data.tolist() == [[7.0]]
        with pytest.raises(ValueError, match="shape"):
            F.linear(T(np.zeros((2, 3))), T(np.zeros((4, 2))))


class TestCrossEntropy:
    def test_uniform_weights_plain_mean(self):
        rng = np.random.default_rng(0)
        z, t = rng.standard_normal((6, 4)), rng.integers(0, 4, 6)
        plain = -F.log_softmax(z)[np.arange(6), t].mean()
        assert float(F.weighted_softmax_cross_entropy(T(z), t, np.ones(4)).data) == pytest.approx(plain)

    def test_direct_formula(self):
        rng = np.random.default_rng(1)
        z, t, w = rng.standard_normal((4, 3)), np.array([0, 2, 1, 2]), np.array([0.5, 1.0, 2.0])
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        expected = -(w[t] * np.log(p[np.arange(4), t])).sum() / w[t].sum()
        assert float(F.weighted_softmax_cross_entropy(T(z), t, w).data) == pytest.approx(expected, rel=1e-12)

    def test_peaked(self):
        z = np.full((3, 3), -50.0)
        z[np.arange(3), [0, 1, 2]] = 50.0
        assert float(F.weighted_softmax_cross_entropy(T(z), [0, 1, 2], np.ones(3)).data) < 1e-30

    def test_bad_target(self):
        with pytest.raises(ValueError, match="out of range"):
            F.weighted_softmax_cross_entropy(T(np.zeros((2, 3))), [0, 3], np.ones(3))

    @settings(max_examples=40)
    @given(st.integers(0, 10_000))
    def test_softmax_rows_and_nonnegative_loss(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((5, 4)) * 10
        np.testing.assert_allclose(F.softmax(z).sum(axis=1), 1.0, atol=1e-6)
        loss = F.weighted_softmax_cross_entropy(T(z), rng.integers(0, 4, 5), rng.uniform(0.1, 2, 4))
        assert float(loss.data) >= 0.0


class TestAdam:
    def test_zero_gradient_noop(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam([("p", p)], lr=0.1)
        p.grad = np.array([0.5, 0.5])
        opt.step()
        before = p.data.copy()
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, before)
        assert opt.t == 2

    @pytest.mark.parametrize("g", [1e-3, 1.0, 1e3])
    def test_first_step_magnitude(self, g):
        p = Tensor(np.zeros(3), requires_grad=True)
        opt = Adam([("p", p)], lr=0.01)
        p.grad = np.full(3, g)
        opt.step()
        np.testing.assert_allclose(p.data, -0.01, rtol=1e-4)

    def test_quadratic_descent(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([("p", p)], lr=0.1)
        trace = []
        for _ in range(100):
            p.grad = 2 * p.data
            opt.step()
            trace.append(abs(float(p.data[0])))
        assert trace[-1] < 0.1
        assert all(b <= a for a, b in zip(trace[:5], trace[1:6]))

    def test_missing_gradient(self):
        opt = Adam([("p", Tensor(np.zeros(1), requires_grad=True))])
        with pytest.raises(ValueError, match="missing gradient.*p"):
            opt.step()


class TestModule:
    def test_state_and_modes(self):
        rng = np.random.default_rng(0)
        net = Sequential(("conv", Conv2d(1, 2, 3, rng=rng, dtype=np.float64)),
                         ("bn", BatchNorm2d(2, dtype=np.float64)),
                         ("fc", Linear(2, 2, rng=rng, dtype=np.float64)))
        assert list(net.state_dict()) == [
            "conv.weight", "conv.bias", "bn.weight", "bn.bias", "fc.weight", "fc.bias",
            "bn.running_mean", "bn.running_var"]
        net.eval()
        assert not net.training and not net.layers[1].training

    def test_eval_deterministic(self):
        rng = np.random.default_rng(0)
        net = Sequential(("conv", Conv2d(3, 4, 3, rng=rng)), ("bn", BatchNorm2d(4)),
                         ("drop", Dropout(0.5))).eval()
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        assert net(x).data.tobytes() == net(x).data.tobytes()
