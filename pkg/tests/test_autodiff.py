import weakref

import numpy as np
import pytest
from scipy.signal import correlate2d
from scipy.special import log_softmax as sp_log_softmax

from divtrain import autodiff as ad


def rand(seed, *shape):
    return np.random.default_rng(seed).normal(size=shape)


class TestForwardValues:
    def test_log_softmax_hand_value(self):
        # log(e + e^2 + e^3) - 3 evaluated by hand
        out = ad.log_softmax(np.array([[1.0, 2.0, 3.0]])).data
        np.testing.assert_allclose(-out[0, 2], 0.4076059644443803, rtol=1e-12)
        np.testing.assert_allclose(out, sp_log_softmax([[1.0, 2.0, 3.0]], axis=1), rtol=1e-12)

    def test_log_softmax_is_stable_for_large_logits(self):
        out = ad.log_softmax(np.array([[1000.0, 0.0]])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out[0, 0], 0.0, atol=1e-12)

    def test_cross_entropy_matches_manual(self):
        z = rand(0, 5, 4)
        y = np.array([0, 1, 2, 3, 1])
        expected = -np.mean(sp_log_softmax(z, axis=1)[np.arange(5), y])
        np.testing.assert_allclose(ad.log_softmax_nll(z, y).item(), expected, rtol=1e-12)

    def test_conv2d_matches_scipy_correlate(self):
        x, w = rand(1, 2, 3, 6, 5), rand(2, 4, 3, 3, 3)
        out = ad.conv2d(x, w).data
        ref = np.zeros((2, 4, 6, 5))
        for n in range(2):
            for o in range(4):
                for c in range(3):
                    ref[n, o] += correlate2d(x[n, c], w[o, c], mode="same")
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_maxpool_matches_block_max(self):
        x = rand(3, 2, 3, 6, 4)
        ref = x.reshape(2, 3, 3, 2, 2, 2).max(axis=(3, 5))
        np.testing.assert_array_equal(ad.maxpool2d(x).data, ref)

    def test_maxpool_drops_odd_edge(self):
        x = rand(4, 1, 1, 5, 5)
        assert ad.maxpool2d(x).shape == (1, 1, 2, 2)

    def test_leaky_relu(self):
        x = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_allclose(ad.leaky_relu(x, 0.1).data, [-0.2, 0.0, 3.0])

    def test_operators_route_through_primitives(self):
        a = ad.Tensor([1.0, 2.0], requires_grad=True)
        b = (2.0 - a) * a / 4.0 + (-a)
        assert b.op == "add"
        np.testing.assert_allclose(b.data, [(2 - 1) * 1 / 4 - 1, 0.0 - 2.0])


class TestGradients:
    def test_linear_gradient(self):
        x = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        (g,) = ad.grad(ad.reduce_sum(ad.mul(x, np.array([4.0, 5.0, 6.0]))), [x])
        np.testing.assert_array_equal(g.data, [4.0, 5.0, 6.0])

    def test_second_derivative_of_cube(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        y = ad.reduce_sum(ad.mul(ad.square(x), x))
        (g,) = ad.grad(y, [x], create_graph=True)
        np.testing.assert_allclose(g.data, [3.0, 12.0])
        (h,) = ad.grad(ad.reduce_sum(g), [x])
        np.testing.assert_allclose(h.data, [6.0, 12.0])

    def test_first_order_result_has_no_graph(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        (g,) = ad.grad(ad.reduce_sum(ad.square(x)), [x])
        assert not g.requires_grad

    def test_unreachable_input_gets_zeros(self):
        x = ad.Tensor([1.0], requires_grad=True)
        z = ad.Tensor(np.ones((2, 2)), requires_grad=True)
        gx, gz = ad.grad(ad.reduce_sum(ad.exp(x)), [x, z])
        np.testing.assert_array_equal(gz.data, np.zeros((2, 2)))

    def test_shared_subexpression_accumulates(self):
        x = ad.Tensor([3.0], requires_grad=True)
        y = ad.mul(x, x)
        (g,) = ad.grad(ad.reduce_sum(ad.add(y, y)), [x])
        np.testing.assert_allclose(g.data, [12.0])

    def test_leaky_relu_slope_at_zero_is_one(self):
        x = ad.Tensor([0.0, -1.0], requires_grad=True)
        (g,) = ad.grad(ad.reduce_sum(ad.leaky_relu(x, 0.1)), [x])
        np.testing.assert_allclose(g.data, [1.0, 0.1])

    def test_max_tie_goes_to_first(self):
        x = ad.Tensor([[2.0, 2.0, 1.0]], requires_grad=True)
        (g,) = ad.grad(ad.reduce_sum(ad.reduce_max(x, axis=1)), [x])
        np.testing.assert_array_equal(g.data, [[1.0, 0.0, 0.0]])

    def test_no_grad_records_nothing(self):
        x = ad.Tensor([1.0], requires_grad=True)
        with ad.no_grad():
            y = ad.exp(x)
        assert y.op is None and not y.requires_grad

    def test_no_reference_cycles_keep_graph_alive(self):
        x = ad.Tensor(rand(0, 3, 4), requires_grad=True)
        y = ad.log_softmax(ad.exp(x))
        ref = weakref.ref(y)
        del y
        assert ref() is None

    def test_deep_chain_does_not_recurse(self):
        x = ad.Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = ad.add(y, 0.0)
        (g,) = ad.grad(ad.reduce_sum(y), [x])
        np.testing.assert_array_equal(g.data, [1.0])


@pytest.mark.parametrize("seed", range(3))
class TestFiniteDifferences:
    def test_elementwise_chain(self, seed):
        p = np.abs(rand(seed, 3, 4)) + 0.5
        f = lambda x: ad.reduce_sum(ad.log(ad.div(ad.sqrt(x), ad.add(ad.exp(ad.neg(x)), 1.0))))
        assert ad.finite_diff_check(f, p) < 1e-6

    def test_matmul_bias(self, seed):
        w, b = rand(seed + 10, 4, 3), rand(seed + 20, 3)
        f = lambda x: ad.reduce_sum(ad.square(ad.bias_add(ad.matmul(x, w), b)))
        assert ad.finite_diff_check(f, rand(seed, 5, 4)) < 1e-6

    def test_conv_pool_network(self, seed):
        w = rand(seed + 30, 2, 1, 3, 3)
        f = lambda x: ad.reduce_sum(ad.square(ad.maxpool2d(ad.leaky_relu(ad.conv2d(x, w)))))
        assert ad.finite_diff_check(f, rand(seed, 2, 1, 4, 4)) < 1e-5

    def test_second_order_through_conv(self, seed):
        w = rand(seed + 40, 2, 1, 3, 3)
        target = rand(seed + 50, 2, 32)

        def f(x):
            inp = ad.Tensor(rand(seed + 60, 2, 1, 4, 4), requires_grad=True)
            h = ad.reshape(ad.maxpool2d(ad.leaky_relu(ad.conv2d(inp, ad.mul(w, x)))), (2, -1))
            loss = ad.reduce_sum(ad.mul(h, target[:, :8]))
            (gi,) = ad.grad(loss, [inp], create_graph=True)
            return ad.reduce_sum(ad.square(gi))

        assert ad.finite_diff_check(f, np.abs(rand(seed, 2, 1, 3, 3)) + 0.5) < 1e-4


class TestErrors:
    def test_non_scalar_output(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ad.grad(ad.exp(x), [x])

    def test_output_without_grad(self):
        with pytest.raises(ad.GraphError):
            ad.grad(ad.Tensor(1.0), [ad.Tensor(1.0)])

    def test_log_of_nonpositive(self):
        with pytest.raises(ValueError, match="positive"):
            ad.log(np.array([1.0, 0.0]))

    def test_broadcast_mismatch(self):
        with pytest.raises(ValueError, match="broadcast"):
            ad.add(np.ones(3), np.ones(4))

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            ad.log_softmax_nll(np.zeros((2, 3)), np.array([0, 3]))

    def test_unknown_primitive(self):
        with pytest.raises(KeyError, match="unknown primitive"):
            ad.primitive_forward("tanh", [np.ones(2)])


def test_recompute_reproduces_every_registered_primitive():
    x = ad.Tensor(np.abs(rand(0, 2, 1, 4, 4)) + 0.1, requires_grad=True)
    w = ad.Tensor(rand(1, 3, 1, 3, 3), requires_grad=True)
    h = ad.maxpool2d(ad.leaky_relu(ad.conv2d(x, w)))
    flat = ad.reshape(h, (2, -1))
    z = ad.log_softmax(ad.bias_add(ad.matmul(flat, rand(2, 12, 4)), rand(3, 4)))
    y = ad.reduce_mean(ad.sqrt(ad.clip(ad.exp(z), lo=1e-3)))
    nodes = [n for n in ad.iter_graph(y) if n.op is not None]
    assert len(nodes) > 8
    for node in nodes:
        np.testing.assert_array_equal(ad.recompute(node), node.data)
