"""Finite-difference cases covering every registered primitive.

Each case maps a seed to ``(f, point)`` where ``f`` takes one Tensor and
returns a scalar Tensor. The other operands are fixed random constants, so a
binary primitive gets one case per differentiable operand.
"""

import numpy as np

from divtrain import autodiff as ad


def cases(seed):
    rng = np.random.default_rng(seed)
    n = lambda *s: rng.normal(size=s)
    pos = lambda *s: rng.uniform(0.5, 2.0, size=s)
    w34 = n(3, 4)

    def weighted(fn, weights):
        return lambda x: ad.reduce_sum(ad.mul(fn(x), weights))

    # constants are drawn once; drawing inside a lambda would change f between evaluations
    b4, b34, d34, m42, m34 = n(4), n(3, 4), pos(3, 4), n(4, 2), n(3, 4)
    # scatter/gather are linear in their operand for any fixed window choice
    idx, pooled_shape = rng.integers(0, 4, size=(2, 2, 2, 2)), (2, 2, 2, 2)
    img, kern, g_img = n(2, 2, 4, 4), n(3, 2, 3, 3), n(2, 3, 4, 4)
    return {
        "add": (weighted(lambda x: ad.add(x, b4), w34), n(3, 4)),
        "add/broadcast-operand": (weighted(lambda x: ad.add(b34, x), w34), n(4)),
        "sub": (weighted(lambda x: ad.sub(b34, x), w34), n(3, 4)),
        "neg": (weighted(ad.neg, w34), n(3, 4)),
        "mul": (weighted(lambda x: ad.mul(x, b34), w34), n(3, 4)),
        "div/numerator": (weighted(lambda x: ad.div(x, d34), w34), n(3, 4)),
        "div/denominator": (weighted(lambda x: ad.div(b34, x), w34), pos(3, 4)),
        "square": (weighted(ad.square, w34), n(3, 4)),
        "sqrt": (weighted(ad.sqrt, w34), pos(3, 4)),
        "exp": (weighted(ad.exp, w34), n(3, 4)),
        "log": (weighted(ad.log, w34), pos(3, 4)),
        "leaky_relu": (weighted(lambda x: ad.leaky_relu(x, 0.1), w34), n(3, 4)),
        "clip": (weighted(lambda x: ad.clip(x, -0.5, 0.5), w34), n(3, 4)),
        "reshape": (weighted(lambda x: ad.reshape(x, (4, 3)), n(4, 3)), n(3, 4)),
        "transpose": (weighted(ad.transpose, n(4, 3)), n(3, 4)),
        "sum": (weighted(lambda x: ad.reduce_sum(x, axis=1), n(3)), n(3, 4)),
        "mean": (weighted(lambda x: ad.reduce_mean(x, axis=0, keepdims=True), n(1, 4)), n(3, 4)),
        "broadcast_to": (weighted(lambda x: ad.broadcast_to(x, (2, 3, 4)), n(2, 3, 4)), n(3, 1)),
        "sum_to": (weighted(lambda x: ad.sum_to(x, (1, 4)), n(1, 4)), n(3, 4)),
        "max": (weighted(lambda x: ad.reduce_max(x, axis=1), n(3)), n(3, 4)),
        "matmul/left": (weighted(lambda x: ad.matmul(x, m42), n(3, 2)), n(3, 4)),
        "matmul/right": (weighted(lambda x: ad.matmul(m34, x), n(3, 2)), n(4, 2)),
        "bias_add/input": (weighted(lambda x: ad.bias_add(x, b4), w34), n(3, 4)),
        "bias_add/bias": (weighted(lambda x: ad.bias_add(b34, x), w34), n(4)),
        "conv2d/input": (weighted(lambda x: ad.conv2d(x, kern), g_img), img),
        "conv2d/weight": (weighted(lambda x: ad.conv2d(img, x), g_img), kern),
        "conv2d_wgrad/input": (weighted(lambda x: ad.conv2d_wgrad(x, g_img, 3), kern), img),
        "conv2d_wgrad/grad": (weighted(lambda x: ad.conv2d_wgrad(img, x, 3), kern), g_img),
        "conv_flip": (weighted(ad.conv_flip, n(2, 3, 3, 3)), kern),
        "maxpool2d": (weighted(ad.maxpool2d, n(2, 2, 2, 2)), n(2, 2, 4, 4)),
        "pool_scatter": (weighted(lambda x: ad.pool_scatter(x, idx, (2, 2, 4, 4)), img), n(*pooled_shape)),
        "pool_gather": (weighted(lambda x: ad.pool_gather(x, idx), n(*pooled_shape)), img),
        "log_softmax": (weighted(ad.log_softmax, w34), n(3, 4)),
    }


def second_order(f):
    """x -> 0.5 * ||d/dx f(x)^2||^2, whose gradient runs through a create_graph backward pass."""

    def g(x):
        if not x.requires_grad:
            x = ad.Tensor(x.data, requires_grad=True)
        (gx,) = ad.grad(ad.square(f(x)), [x], create_graph=True)
        return ad.mul(ad.reduce_sum(ad.square(gx)), 0.5)

    return g
