"""Central finite-difference gradient checker."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .ops import weighted_sum
from .tensor import Tensor


def grad_check(
    op: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    seed: int = 0,
    wrt: Sequence[Tensor] | None = None,
) -> float:
    """Largest element-wise relative error between analytic and numeric gradients.

    The op output is reduced to a scalar with fixed random weights, so the
    check covers every output element. The relative error of one element is
    ``max(0, |a - n| - r) / max(1e-8, |a| + |n|)``, where
    ``r = 4 * machine_eps * |f| / eps`` bounds the rounding error of the
    central difference of an objective of size ``|f|``. Only float64 inputs
    are accepted.
    """
    targets = list(wrt) if wrt is not None else [t for t in inputs if t.requires_grad]
    for t in targets:
        if t.dtype != np.float64:
            raise TypeError("grad_check requires 64-bit tensors")
    rng = np.random.default_rng(seed)
    probe = None

    def objective() -> Tensor:
        nonlocal probe
        out = op(*inputs)
        if out.data.size == 1:
            return out
        if probe is None:
            probe = rng.standard_normal(out.shape)
        return weighted_sum(out, probe)

    for t in targets:
        t.grad = None
    base = objective()
    base.backward()
    roundoff = 4.0 * np.finfo(np.float64).eps * max(1.0, abs(base.item())) / eps
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in targets]

    worst = 0.0
    for t, a in zip(targets, analytic):
        flat = t.data.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = objective().item()
            flat[i] = orig - eps
            fm = objective().item()
            flat[i] = orig
            num[i] = (fp - fm) / (2.0 * eps)
        a = a.reshape(-1)
        rel = np.maximum(0.0, np.abs(a - num) - roundoff) / np.maximum(1e-8, np.abs(a) + np.abs(num))
        if rel.size:
            worst = max(worst, float(rel.max()))
    for t in targets:
        t.grad = None
    return worst
