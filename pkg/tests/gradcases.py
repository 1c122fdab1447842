"""Randomized gradient-check cases shared by the unit and acceptance suites."""

import numpy as np

from lidarmotion.motion_net import MotionNet, NetConfig, multiscale_loss
from lidarmotion.tensor_engine import (
    BatchNormState,
    Tensor,
    add,
    batchnorm,
    channel_scale,
    concat,
    conv2d,
    deconv2d,
    downsample_nearest,
    epe_loss,
    relu,
    upsample_bilinear_2x,
    weighted_sum,
)


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True, dtype=np.float64)


def conv_s1(rng):
    x, w, b = _t(rng, 2, 3, 6, 7), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    return lambda x, w, b: conv2d(x, w, b, stride=1, pad=1), [x, w, b]


def conv_s2(rng):
    x, w = _t(rng, 2, 3, 8, 9), _t(rng, 5, 3, 3, 3)
    return lambda x, w: conv2d(x, w, stride=2, pad=1), [x, w]


def deconv(rng):
    x, w, b = _t(rng, 2, 3, 4, 5), _t(rng, 3, 4, 4, 4), _t(rng, 4)
    return lambda x, w, b: deconv2d(x, w, b, stride=2, pad=1), [x, w, b]


def bn_train(rng):
    x, g, b = _t(rng, 3, 4, 5, 6), _t(rng, 4), _t(rng, 4)
    state = BatchNormState(4)
    return lambda x, g, b: batchnorm(x, g, b, state, mode="train"), [x, g, b]


def bn_eval(rng):
    x, g, b = _t(rng, 3, 4, 5, 6), _t(rng, 4), _t(rng, 4)
    state = BatchNormState(4)
    batchnorm(Tensor(rng.normal(size=(3, 4, 5, 6))), g, b, state, mode="train")
    return lambda x, g, b: batchnorm(x, g, b, state, mode="eval"), [x, g, b]


def relu_case(rng):
    # keep inputs away from the kink so central differences stay one-sided-free
    data = rng.choice([-1.0, 1.0], (2, 3, 4, 5)) * rng.uniform(0.1, 1.0, (2, 3, 4, 5))
    x = Tensor(data, requires_grad=True, dtype=np.float64)
    return relu, [x]


def concat_case(rng):
    a, b = _t(rng, 2, 3, 4, 5), _t(rng, 2, 5, 4, 5)
    return lambda a, b: concat([a, b], axis=1), [a, b]


def upsample(rng):
    x = _t(rng, 2, 3, 4, 5)
    return upsample_bilinear_2x, [x]


def downsample(rng):
    x = _t(rng, 2, 3, 8, 6)
    return lambda x: downsample_nearest(x, 2), [x]


def epe(rng):
    p, g = _t(rng, 2, 2, 5, 6), Tensor(rng.normal(size=(2, 2, 5, 6)), dtype=np.float64)
    return lambda p: epe_loss(p, g), [p]


def scale(rng):
    x = _t(rng, 2, 4, 3, 5)
    s = rng.uniform(0.1, 2.0, 4)
    return lambda x: channel_scale(x, s), [x]


def add_sum(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return lambda a, b: weighted_sum(add(a, b), w), [a, b]


OP_CASES = {
    "conv2d_s1": conv_s1,
    "conv2d_s2": conv_s2,
    "deconv2d": deconv,
    "batchnorm_train": bn_train,
    "batchnorm_eval": bn_eval,
    "relu": relu_case,
    "concat": concat_case,
    "upsample_bilinear_2x": upsample,
    "downsample_nearest": downsample,
    "epe_loss": epe,
    "channel_scale": scale,
    "add_weighted_sum": add_sum,
}


TINY_CONFIG = NetConfig(in_channels=4, base_width=2, levels=2, head_scales=("1/2", "1"))


def tiny_network(seed):
    """End-to-end case: multiscale loss of an 8x28 network w.r.t. all parameters."""
    rng = np.random.default_rng(seed)
    net = MotionNet(TINY_CONFIG, seed=seed)
    x = Tensor(rng.normal(0.0, 20.0, (2, 4, 8, 28)))
    gt = rng.normal(size=(2, 2, 8, 28))

    def op(*_params):
        return multiscale_loss(net.forward(x, mode="train"), gt)

    params = net.parameters()
    for p in params:
        p.requires_grad = True
    return op, params
