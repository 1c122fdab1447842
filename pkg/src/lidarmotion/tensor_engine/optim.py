"""Adam updates and He initialization."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter, Tensor, get_default_dtype


def adam_step(
    params: Iterable[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update of every parameter, in place.

    Gradients are consumed (reset to ``None``) after the update.
    """
    params = list(params)
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for {', '.join(missing)}")
    for p in params:
        g = p.grad
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)
        p.grad = None


def he_init(shape, fan_in: int, seed, dtype=None) -> Tensor:
    """Zero-mean normal samples with variance ``2 / fan_in``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if fan_in <= 0:
        raise ValueError(f"he_init: fan_in must be positive, got {fan_in}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    values = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return Tensor(values.astype(dtype or get_default_dtype()))
