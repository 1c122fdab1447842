"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .tensor import Parameter, Tensor, as_tensor, get_default_dtype, set_default_dtype
from .ops import (
    BatchNormState,
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
from .optim import adam_step, he_init
from .gradcheck import grad_check
from . import checkpoint

__all__ = [
    "Tensor",
    "Parameter",
    "as_tensor",
    "get_default_dtype",
    "set_default_dtype",
    "BatchNormState",
    "add",
    "batchnorm",
    "channel_scale",
    "concat",
    "conv2d",
    "deconv2d",
    "downsample_nearest",
    "epe_loss",
    "relu",
    "upsample_bilinear_2x",
    "weighted_sum",
    "adam_step",
    "he_init",
    "grad_check",
    "checkpoint",
]
