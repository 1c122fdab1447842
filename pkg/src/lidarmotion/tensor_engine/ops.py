"""Differentiable operators over NCHW tensors.

Every op returns a new :class:`Tensor`; when any input requires a gradient the
result carries a closure that scatters the incoming gradient back to its
inputs. Reductions use numpy's fixed-order summation, so results do not depend
on scheduling.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_result

EPE_DELTA = 1e-8


def _check_nchw(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{what} expects an (N, C, H, W) tensor, got shape {x.shape}")


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _unpad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return x[:, :, pad:-pad, pad:-pad]


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def deconv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + k


class _Geometry:
    """Polyphase layout of a strided convolution.

    The padded input is split into ``stride**2`` phase images of size
    (hph, wph), each stored flat as (C, N*hph*wph). Kernel tap (i, j) then
    reads phase (i % s, j % s) shifted by a constant flat offset, so every tap
    is a single matmul on a strided view and no patch matrix is built.
    Output positions are laid out on the same flat grid; cells outside
    (Ho, Wo) are scratch.
    """

    def __init__(self, n: int, h: int, w: int, k: int, stride: int, pad: int):
        self.n, self.k, self.s, self.pad = n, k, stride, pad
        self.hp, self.wp = h + 2 * pad, w + 2 * pad
        self.ho = (self.hp - k) // stride + 1
        self.wo = (self.wp - k) // stride + 1
        self.hph = -(-self.hp // stride)
        self.wph = -(-self.wp // stride)
        self.size = n * self.hph * self.wph
        reach = (k - 1) // stride
        self.length = self.size - (reach * self.wph + reach)
        self.taps = [
            (i, j, i % stride, j % stride, (i // stride) * self.wph + (j // stride))
            for i in range(k)
            for j in range(k)
        ]

    def split(self, xp: np.ndarray) -> np.ndarray:
        s = self.s
        c = xp.shape[1]
        phases = np.zeros((s, s, c, self.n, self.hph, self.wph), dtype=xp.dtype)
        for a in range(s):
            for b in range(s):
                src = xp[:, :, a::s, b::s]
                phases[a, b, :, :, : src.shape[2], : src.shape[3]] = src.transpose(1, 0, 2, 3)
        return phases.reshape(s, s, c, self.size)

    def merge(self, phases: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`split` (phases never overlap, so this is a gather)."""
        s = self.s
        c = phases.shape[2]
        out = np.empty((self.n, c, self.hp, self.wp), dtype=phases.dtype)
        ph = phases.reshape(s, s, c, self.n, self.hph, self.wph)
        for a in range(s):
            for b in range(s):
                dst = out[:, :, a::s, b::s]
                dst[...] = ph[a, b, :, :, : dst.shape[2], : dst.shape[3]].transpose(1, 0, 2, 3)
        return out

    def grid(self, y: np.ndarray) -> np.ndarray:
        """(N, C, Ho, Wo) -> flat (C, size) on the output grid, zero elsewhere."""
        c = y.shape[1]
        g = np.zeros((c, self.n, self.hph, self.wph), dtype=y.dtype)
        g[:, :, : self.ho, : self.wo] = y.transpose(1, 0, 2, 3)
        return g.reshape(c, self.size)

    def ungrid(self, flat: np.ndarray) -> np.ndarray:
        c = flat.shape[0]
        y = flat.reshape(c, self.n, self.hph, self.wph)[:, :, : self.ho, : self.wo]
        return np.ascontiguousarray(y.transpose(1, 0, 2, 3))


def _groups(geo: _Geometry):
    """Taps grouped by the phase they read: {(a, b): [(i, j, offset), ...]}."""
    groups: dict = {}
    for i, j, a, b, off in geo.taps:
        groups.setdefault((a, b), []).append((i, j, off))
    return groups


def _conv_forward(geo: _Geometry, phases: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Per phase, stack the taps on the narrower side of the matmul: output
    # side (one matmul, then shifted adds) when C_out <= C_in, otherwise the
    # input side (shifted copies, then one matmul).
    cout, cin = w.shape[:2]
    L = geo.length
    acc = np.zeros((cout, geo.size), dtype=phases.dtype)
    for (a, b), taps in _groups(geo).items():
        src = phases[a, b]
        if cout <= cin:
            wg = np.concatenate([w[:, :, i, j] for i, j, _ in taps], axis=0)
            y = wg @ src
            for t, (_, _, off) in enumerate(taps):
                acc[:, :L] += y[t * cout:(t + 1) * cout, off:off + L]
        else:
            wg = np.concatenate([w[:, :, i, j] for i, j, _ in taps], axis=1)
            xs = np.concatenate([src[:, off:off + L] for _, _, off in taps], axis=0)
            acc[:, :L] += wg @ xs
    return acc


def _conv_input_grad(geo: _Geometry, gflat: np.ndarray, w: np.ndarray) -> np.ndarray:
    cout, cin = w.shape[:2]
    s = geo.s
    L = geo.length
    dph = np.zeros((s, s, cin, geo.size), dtype=gflat.dtype)
    g = gflat[:, :L]
    for (a, b), taps in _groups(geo).items():
        if cin <= cout:
            wg = np.concatenate([w[:, :, i, j].T for i, j, _ in taps], axis=0)
            z = wg @ g
            for t, (_, _, off) in enumerate(taps):
                dph[a, b, :, off:off + L] += z[t * cin:(t + 1) * cin]
        else:
            wg = np.concatenate([w[:, :, i, j].T for i, j, _ in taps], axis=1)
            gs = np.zeros((len(taps) * cout, geo.size), dtype=gflat.dtype)
            for t, (_, _, off) in enumerate(taps):
                gs[t * cout:(t + 1) * cout, off:off + L] = g
            dph[a, b] += wg @ gs
    return dph


def _conv_weight_grad(geo: _Geometry, phases: np.ndarray, gflat: np.ndarray, w_shape: tuple) -> np.ndarray:
    cout, cin = w_shape[:2]
    L = geo.length
    dw = np.empty(w_shape, dtype=gflat.dtype)
    g = gflat[:, :L]
    for (a, b), taps in _groups(geo).items():
        src = phases[a, b]
        if cout <= cin:
            gs = np.zeros((len(taps) * cout, geo.size), dtype=gflat.dtype)
            for t, (_, _, off) in enumerate(taps):
                gs[t * cout:(t + 1) * cout, off:off + L] = g
            block = gs @ src.T
            for t, (i, j, _) in enumerate(taps):
                dw[:, :, i, j] = block[t * cout:(t + 1) * cout]
        else:
            xs = np.concatenate([src[:, off:off + L] for _, _, off in taps], axis=0)
            block = g @ xs.T
            for t, (i, j, _) in enumerate(taps):
                dw[:, :, i, j] = block[:, t * cin:(t + 1) * cin]
    return dw


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding; ``w`` has shape (C_out, C_in, k, k)."""
    _check_nchw(x, "conv2d")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d weight must be (C_out, C_in, k, k), got {w.shape}")
    n, c, h, wd = x.shape
    cout, cin, k, _ = w.shape
    if cin != c:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {cin}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {b.shape} != ({cout},)")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if conv_output_size(h, k, stride, pad) <= 0 or conv_output_size(wd, k, stride, pad) <= 0:
        raise ValueError(f"conv2d: kernel {k} does not fit input {h}x{wd} with pad {pad}")

    geo = _Geometry(n, h, wd, k, stride, pad)
    phases = geo.split(_pad(x.data, pad))
    out = geo.ungrid(_conv_forward(geo, phases, w.data))
    if b is not None:
        out += b.data[None, :, None, None]

    def backward(g: np.ndarray) -> None:
        gflat = geo.grid(g)
        if w.requires_grad:
            w.accumulate(_conv_weight_grad(geo, phases, gflat, w.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxp = geo.merge(_conv_input_grad(geo, gflat, w.data))
            x.accumulate(np.ascontiguousarray(_unpad(dxp, pad)))

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward)


def deconv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 2, pad: int = 1) -> Tensor:
    """Transposed convolution; ``w`` has shape (C_in, C_out, k, k).

    The forward pass is exactly the input-gradient of :func:`conv2d` run with
    the same weight array, so ``k=4, stride=2, pad=1`` doubles H and W.
    """
    _check_nchw(x, "deconv2d")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"deconv2d weight must be (C_in, C_out, k, k), got {w.shape}")
    n, c, h, wd = x.shape
    cin, cout, k, _ = w.shape
    if cin != c:
        raise ValueError(f"deconv2d: input has {c} channels, weight expects {cin}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"deconv2d: bias shape {b.shape} != ({cout},)")
    if stride not in (1, 2):
        raise ValueError(f"deconv2d: stride must be 1 or 2, got {stride}")
    ho = deconv_output_size(h, k, stride, pad)
    wo = deconv_output_size(wd, k, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"deconv2d: output would be empty for input {h}x{wd}")
    geo = _Geometry(n, ho, wo, k, stride, pad)
    if (geo.ho, geo.wo) != (h, wd):
        raise ValueError(f"deconv2d: {h}x{wd} is not a conv output size for k={k}, stride={stride}, pad={pad}")

    xflat = geo.grid(x.data)
    out = np.ascontiguousarray(_unpad(geo.merge(_conv_input_grad(geo, xflat, w.data)), pad))
    if b is not None:
        out += b.data[None, :, None, None]

    def backward(g: np.ndarray) -> None:
        phases = geo.split(_pad(g, pad))
        if w.requires_grad:
            w.accumulate(_conv_weight_grad(geo, phases, xflat, w.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x.accumulate(geo.ungrid(_conv_forward(geo, phases, w.data)))

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward)


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels: int, dtype=np.float64):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.updates = 0

    def astype(self, dtype) -> None:
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of an NCHW tensor.

    In train mode the batch mean and (biased) variance are used and the
    running statistics are blended as ``(1 - momentum) * old + momentum * new``.
    Eval mode uses the running statistics and refuses to run before any
    train-mode update.
    """
    _check_nchw(x, "batchnorm")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm: gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    bshape = (1, c, 1, 1)
    if mode == "train":
        mean = x.data.mean(axis=axes)
        xc = x.data - mean.reshape(bshape)
        var = (xc * xc).mean(axis=axes)
        state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mean
        state.running_var = (1.0 - momentum) * state.running_var + momentum * var
        state.updates += 1
    elif mode == "eval":
        if state.updates == 0:
            raise RuntimeError("batchnorm: eval mode requested before any train-mode statistics exist")
        mean = state.running_mean.astype(x.dtype, copy=False)
        var = state.running_var.astype(x.dtype, copy=False)
        xc = x.data - mean.reshape(bshape)
    else:
        raise ValueError(f"batchnorm: unknown mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx = g * gamma.data.reshape(bshape)
            if mode == "train":
                m = x.data.size // c
                sum_g = gx.sum(axis=axes).reshape(bshape)
                sum_gx = (gx * xhat).sum(axis=axes).reshape(bshape)
                dx = (inv_std.reshape(bshape) / m) * (m * gx - sum_g - xhat * sum_gx)
            else:
                dx = gx * inv_std.reshape(bshape)
            x.accumulate(dx)

    return make_result(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = x.data * mask

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return make_result(out, (x,), backward)


def channel_scale(x: Tensor, scale) -> Tensor:
    """Multiply each channel of an NCHW tensor by a constant."""
    x = as_tensor(x)
    s = np.asarray(scale, dtype=x.dtype).reshape(1, -1, 1, 1)
    if s.shape[1] != x.shape[1]:
        raise ValueError(f"{s.shape[1]} scales for {x.shape[1]} channels")

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * s)

    return make_result(x.data * s, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ValueError("concat of an empty list")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or any(a != b for d, (a, b) in enumerate(zip(t.shape, ref)) if d != axis):
            raise ValueError(f"concat: shapes {ref} and {t.shape} differ outside axis {axis}")
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(np.ascontiguousarray(g[tuple(idx)]))

    return make_result(out, xs, backward)


def _upsample_axis(a: np.ndarray, axis: int) -> np.ndarray:
    # align_corners=False: out[2m] = .75 a[m] + .25 a[m-1], out[2m+1] = .75 a[m] + .25 a[m+1], edges clamped
    a = np.moveaxis(a, axis, -1)
    prev = np.concatenate([a[..., :1], a[..., :-1]], axis=-1)
    nxt = np.concatenate([a[..., 1:], a[..., -1:]], axis=-1)
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=a.dtype)
    out[..., 0::2] = 0.75 * a + 0.25 * prev
    out[..., 1::2] = 0.75 * a + 0.25 * nxt
    return np.moveaxis(out, -1, axis)


def _upsample_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    ge, go = g[..., 0::2], g[..., 1::2]
    out = 0.75 * (ge + go)
    # the "prev" tap of even outputs feeds m-1 (clamped to 0 at the left edge)
    out[..., :-1] += 0.25 * ge[..., 1:]
    out[..., :1] += 0.25 * ge[..., :1]
    # the "next" tap of odd outputs feeds m+1 (clamped at the right edge)
    out[..., 1:] += 0.25 * go[..., :-1]
    out[..., -1:] += 0.25 * go[..., -1:]
    return np.moveaxis(out, -1, axis)


def upsample_bilinear_2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling of H and W (half-pixel centers, edge clamp)."""
    _check_nchw(x, "upsample_bilinear_2x")
    out = np.ascontiguousarray(_upsample_axis(_upsample_axis(x.data, 2), 3))

    def backward(g: np.ndarray) -> None:
        x.accumulate(np.ascontiguousarray(_upsample_axis_adjoint(_upsample_axis_adjoint(g, 3), 2)))

    return make_result(out, (x,), backward)


def downsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Keep the top-left element of each ``factor x factor`` block."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ValueError("downsample_nearest needs at least two spatial dims")
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"downsample_nearest: {h}x{w} not divisible by {factor}")
    out = np.ascontiguousarray(x.data[..., ::factor, ::factor])

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.data)
        gx[..., ::factor, ::factor] = g
        x.accumulate(gx)

    return make_result(out, (x,), backward)


def epe_loss(pred: Tensor, gt, delta: float = EPE_DELTA) -> Tensor:
    """Mean per-pixel euclidean distance between 2-vector fields.

    Accepts (2, H, W) or (N, 2, H, W). The norm is smoothed as
    ``sqrt(|d|^2 + delta^2) - delta`` so the gradient exists at zero error.
    """
    pred = as_tensor(pred)
    gt = as_tensor(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise ValueError(f"epe_loss: shape mismatch {pred.shape} vs {gt.shape}")
    axis = pred.ndim - 3
    if axis < 0 or pred.shape[axis] != 2:
        raise ValueError(f"epe_loss expects a 2-channel vector field, got shape {pred.shape}")
    diff = pred.data - gt.data
    norm = np.sqrt((diff * diff).sum(axis=axis, keepdims=True) + delta * delta)
    count = norm.size
    value = np.asarray((norm - delta).sum() / count, dtype=pred.dtype)

    def backward(g: np.ndarray) -> None:
        d = diff / norm * (g / count)
        if pred.requires_grad:
            pred.accumulate(d)
        if gt.requires_grad:
            gt.accumulate(-d)

    return make_result(value, (pred, gt), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return make_result(a.data + b.data, (a, b), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)`` with constant weights (used to probe gradients)."""
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=x.dtype)
    if weights.shape != x.shape:
        raise ValueError("weighted_sum: weights must match x")
    value = np.asarray((x.data * weights).sum(), dtype=x.dtype)

    def backward(g: np.ndarray) -> None:
        x.accumulate(weights * g)

    return make_result(value, (x,), backward)
