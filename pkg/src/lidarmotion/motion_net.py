"""FlowNet-style encoder-decoder that regresses ground-plane motion per cell.

Compared with FlowNetS the network keeps the decoder going up to full input
resolution, stops the encoder at 1/32 (no 1/64 block), and attaches a 2-channel
prediction head at every decoder scale. Each head's output is upsampled and
concatenated into the next finer decoder level together with the encoder skip
of equal resolution; at full resolution the skip is the input stack itself,
after a fixed per-channel rescaling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .tensor_engine import (
    BatchNormState,
    Parameter,
    Tensor,
    adam_step,
    add,
    batchnorm,
    channel_scale,
    concat,
    conv2d,
    deconv2d,
    downsample_nearest,
    epe_loss,
    he_init,
    relu,
    upsample_bilinear_2x,
)
from .tensor_engine import checkpoint as ckpt

log = logging.getLogger(__name__)

VALID_IN_CHANNELS = (4, 6, 8, 11)
MAX_LEVELS = 5

# fixed multipliers for [range_t, refl_t, range_tn, refl_tn, flow_u, flow_v,
# veh_t, veh_tn, dZ, dX, dYaw]: brings metres and pixels to order one
STACK_INPUT_SCALE = (1 / 80, 1.0, 1 / 80, 1.0, 1 / 20, 1 / 20, 1.0, 1.0, 1.0, 1.0, 1.0)


def default_input_scale(channels: int) -> Tuple[float, ...]:
    scale = STACK_INPUT_SCALE[:channels]
    return scale + (1.0,) * (channels - len(scale))


class NetConfigError(ValueError):
    pass


def _default_heads() -> Tuple[str, ...]:
    return ("1/16", "1/8", "1/4", "1/2", "1")


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 4
    base_width: int = 8
    levels: int = 5
    out_channels: int = 2
    head_scales: Tuple[str, ...] = field(default_factory=_default_heads)
    # a 2-channel lidar-flow predictor uses the same graph with these settings
    allow_any_in_channels: bool = False
    # per-channel input multipliers; None selects default_input_scale
    input_scale: Optional[Tuple[float, ...]] = None

    def validate(self) -> None:
        problems = []
        if not self.allow_any_in_channels and self.in_channels not in VALID_IN_CHANNELS:
            problems.append(f"in_channels must be one of {VALID_IN_CHANNELS}, got {self.in_channels}")
        if self.in_channels < 1:
            problems.append("in_channels must be positive")
        if self.base_width < 1:
            problems.append(f"base_width must be >= 1, got {self.base_width}")
        if not 1 <= self.levels <= MAX_LEVELS:
            problems.append(f"levels must be in 1..{MAX_LEVELS} (1/64 is never reached), got {self.levels}")
        if self.out_channels != 2:
            problems.append(f"out_channels must be 2, got {self.out_channels}")
        try:
            exps = self.head_exponents()
        except (ValueError, ZeroDivisionError) as exc:
            problems.append(f"bad head_scales: {exc}")
        else:
            if not exps or exps[-1] != 0:
                problems.append("head_scales must include full resolution (1)")
            elif exps != list(range(exps[0], -1, -1)):
                problems.append("head_scales must be consecutive powers of 1/2 ending at 1")
            elif exps[0] > self.levels - 1:
                problems.append(f"coarsest head 1/{2 ** exps[0]} is not a decoder scale for levels={self.levels}")
        if self.input_scale is not None and len(self.input_scale) != self.in_channels:
            problems.append(f"input_scale has {len(self.input_scale)} entries for {self.in_channels} channels")
        if problems:
            raise NetConfigError("; ".join(problems))

    def head_exponents(self) -> List[int]:
        """Head scales as exponents l (scale 1/2^l), coarsest first."""
        exps = []
        for s in self.head_scales:
            frac = Fraction(str(s))
            if frac <= 0 or frac > 1 or frac.numerator != 1 or frac.denominator & (frac.denominator - 1):
                raise ValueError(f"{s} is not a power of 1/2")
            exps.append(frac.denominator.bit_length() - 1)
        return sorted(set(exps), reverse=True)

    def input_scales(self) -> Tuple[float, ...]:
        if self.input_scale is None:
            return default_input_scale(self.in_channels)
        return tuple(float(v) for v in self.input_scale)

    def encoder_width(self, level: int) -> int:
        return min(self.base_width * 2 ** (level - 1), 8 * self.base_width)

    def decoder_width(self, level: int) -> int:
        return self.base_width if level == 0 else self.encoder_width(level)


class MotionNet:
    """Parameters, batch-norm state and the forward graph of one network."""

    def __init__(self, config: NetConfig, seed: int = 0, dtype=np.float64):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype).type
        self.params: dict = {}
        self.bn: dict = {}
        rng = np.random.default_rng(seed)
        heads = set(config.head_exponents())

        cin = config.in_channels
        self.enc_channels = {0: config.in_channels}
        for lvl in range(1, config.levels + 1):
            cout = config.encoder_width(lvl)
            self._conv(f"enc{lvl}.conv", cout, cin, 3, rng, bias=False)
            self._bn(f"enc{lvl}.bn", cout)
            self.enc_channels[lvl] = cout
            cin = cout

        prev_pred = False
        for lvl in range(config.levels - 1, -1, -1):
            cout = config.decoder_width(lvl)
            self._deconv(f"dec{lvl}.deconv", cin, cout, 4, rng)
            self._bn(f"dec{lvl}.bn", cout)
            cin = cout + self.enc_channels[lvl] + (2 if prev_pred else 0)
            if lvl in heads:
                self._conv(f"head{lvl}", 2, cin, 3, rng, bias=True)
                prev_pred = True
            else:
                prev_pred = False
        if dtype != np.float64:
            self.astype(dtype)

    def _conv(self, name, cout, cin, k, rng, bias):
        self.params[f"{name}.w"] = Parameter(he_init((cout, cin, k, k), cin * k * k, rng, np.float64).data, f"{name}.w")
        if bias:
            self.params[f"{name}.b"] = Parameter(np.zeros(cout), f"{name}.b")

    def _deconv(self, name, cin, cout, k, rng):
        # each output pixel of a stride-2, k=4 deconv sees cin * (k/2)^2 inputs
        fan_in = cin * (k // 2) ** 2
        self.params[f"{name}.w"] = Parameter(he_init((cin, cout, k, k), fan_in, rng, np.float64).data, f"{name}.w")

    def _bn(self, name, c):
        self.params[f"{name}.gamma"] = Parameter(np.ones(c), f"{name}.gamma")
        self.params[f"{name}.beta"] = Parameter(np.zeros(c), f"{name}.beta")
        self.bn[name] = BatchNormState(c)

    def astype(self, dtype) -> "MotionNet":
        self.dtype = np.dtype(dtype).type
        for p in self.params.values():
            p.astype(self.dtype)
        for s in self.bn.values():
            s.astype(self.dtype)
        return self

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def zero_(self) -> None:
        for p in self.params.values():
            p.data[...] = 0.0

    def _block_bn(self, x, name, mode):
        p = self.params
        return relu(batchnorm(x, p[f"{name}.gamma"], p[f"{name}.beta"], self.bn[name], mode=mode))

    def forward(self, x, mode: str = "train") -> List[Tensor]:
        """Predictions from coarsest to finest head; the last one is full resolution."""
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected input (N, {cfg.in_channels}, H, W), got {x.shape}")
        h, w = x.shape[2:]
        div = 2 ** cfg.levels
        if h % div or w % div:
            raise ValueError(f"input {h}x{w} is not divisible by 2^{cfg.levels}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        p = self.params
        heads = set(cfg.head_exponents())

        scale = cfg.input_scales()
        if any(v != 1.0 for v in scale):
            x = channel_scale(x, scale)
        skips = {0: x}
        feat = x
        for lvl in range(1, cfg.levels + 1):
            feat = conv2d(feat, p[f"enc{lvl}.conv.w"], stride=2, pad=1)
            feat = self._block_bn(feat, f"enc{lvl}.bn", mode)
            skips[lvl] = feat

        preds: List[Tensor] = []
        pred = None
        for lvl in range(cfg.levels - 1, -1, -1):
            up = deconv2d(feat, p[f"dec{lvl}.deconv.w"], stride=2, pad=1)
            up = self._block_bn(up, f"dec{lvl}.bn", mode)
            parts = [up, skips[lvl]]
            if pred is not None:
                parts.append(upsample_bilinear_2x(pred))
            feat = concat(parts, axis=1)
            if lvl in heads:
                pred = conv2d(feat, p[f"head{lvl}.w"], p[f"head{lvl}.b"], stride=1, pad=1)
                preds.append(pred)
            else:
                pred = None
        return preds

    def predict(self, x, mode: str = "eval") -> np.ndarray:
        """Full-resolution prediction as a plain array (N, 2, H, W)."""
        return self.forward(x, mode=mode)[-1].data

    # checkpoint plumbing -------------------------------------------------
    def state_entries(self) -> List[ckpt.CheckpointEntry]:
        entries = []
        for name, p in self.params.items():
            entries.append(ckpt.CheckpointEntry(name, p.data.astype(np.float64), p.m.astype(np.float64), p.v.astype(np.float64)))
        steps = {p.step for p in self.params.values()}
        step = float(max(steps)) if steps else 0.0
        zero1 = np.zeros(1)
        entries.append(ckpt.CheckpointEntry("optimizer.step", np.array([step]), zero1, zero1))
        for name, s in self.bn.items():
            c = s.running_mean.shape
            entries.append(ckpt.CheckpointEntry(f"{name}.running_mean", s.running_mean.astype(np.float64), np.zeros(c), np.zeros(c)))
            entries.append(ckpt.CheckpointEntry(f"{name}.running_var", s.running_var.astype(np.float64), np.zeros(c), np.zeros(c)))
            entries.append(ckpt.CheckpointEntry(f"{name}.updates", np.array([float(s.updates)]), zero1, zero1))
        return entries

    def load_entries(self, entries: Sequence[ckpt.CheckpointEntry]) -> None:
        by_name = {e.name: e for e in entries}
        expected = set(self.params) | {"optimizer.step"}
        for name in self.bn:
            expected |= {f"{name}.running_mean", f"{name}.running_var", f"{name}.updates"}
        if set(by_name) != expected:
            missing = sorted(expected - set(by_name))
            extra = sorted(set(by_name) - expected)
            raise ckpt.CheckpointError(f"checkpoint does not match network (missing={missing}, unexpected={extra})")
        step = int(by_name["optimizer.step"].values[0])
        for name, p in self.params.items():
            e = by_name[name]
            if e.values.shape != p.shape:
                raise ckpt.CheckpointError(f"{name}: shape {e.values.shape} != {p.shape}")
            p.data = e.values.astype(self.dtype)
            p.m = e.m.astype(self.dtype)
            p.v = e.v.astype(self.dtype)
            p.step = step
        for name, s in self.bn.items():
            s.running_mean = by_name[f"{name}.running_mean"].values.astype(self.dtype)
            s.running_var = by_name[f"{name}.running_var"].values.astype(self.dtype)
            s.updates = int(by_name[f"{name}.updates"].values[0])

    def save(self, path) -> None:
        ckpt.save(path, self.state_entries())

    def load(self, path) -> "MotionNet":
        self.load_entries(ckpt.load(path))
        return self


def build(config: NetConfig, seed: int = 0, dtype=np.float64) -> MotionNet:
    return MotionNet(config, seed=seed, dtype=dtype)


def multiscale_loss(preds: Sequence[Tensor], gt) -> Tensor:
    """Unit-weighted sum of per-head EPE losses against nearest-downsampled GT."""
    gt_arr = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    full_h = gt_arr.shape[-2]
    total = None
    for pred in preds:
        factor = full_h // pred.shape[-2]
        target = downsample_nearest(Tensor(gt_arr.astype(pred.dtype, copy=False)), factor)
        term = epe_loss(pred, target)
        total = term if total is None else add(total, term)
    if total is None:
        raise ValueError("multiscale_loss: no predictions")
    return total


@dataclass(frozen=True)
class TrainSchedule:
    iterations: int = 2000
    lr: float = 1e-3
    halve_after: int = 150_000
    halve_every: int = 60_000
    batch_size: int = 10
    seed: int = 0
    flip_prob: float = 0.5

    def lr_at(self, it: int) -> float:
        if it < self.halve_after:
            return self.lr
        return self.lr * 0.5 ** (1 + (it - self.halve_after) // self.halve_every)

    def halving_points(self) -> Iterator[int]:
        point = self.halve_after
        while point < self.iterations:
            yield point
            point += self.halve_every


FULL_SCALE_SCHEDULE = TrainSchedule(iterations=400_000, lr=1e-3, halve_after=150_000, halve_every=60_000, batch_size=10)

Augment = Callable[[np.ndarray, np.ndarray, np.random.Generator], Tuple[np.ndarray, np.ndarray]]


def train(
    net: MotionNet,
    samples: Sequence[Tuple[np.ndarray, np.ndarray]],
    schedule: TrainSchedule,
    sampler: Optional[Iterator[Sequence[int]]] = None,
    augment: Optional[Augment] = None,
    callback: Optional[Callable[[int, float], None]] = None,
) -> List[float]:
    """Adam training on (input (C,H,W), target (2,H,W)) pairs.

    ``sampler`` yields lists of sample indices; by default every iteration
    draws ``batch_size`` indices uniformly with replacement (or takes the whole
    set when it is no larger than a batch). Returns the per-iteration loss.
    """
    if len(samples) == 0:
        raise ValueError("train: empty dataset")
    rng = np.random.default_rng(schedule.seed)
    if sampler is None:
        sampler = _default_sampler(len(samples), schedule.batch_size, rng)
    curve: List[float] = []
    params = net.parameters()
    for it in range(schedule.iterations):
        idx = next(sampler)
        xs, gts = [], []
        for i in idx:
            x, g = samples[i]
            if augment is not None:
                x, g = augment(x, g, rng)
            xs.append(x)
            gts.append(g)
        xb = np.stack(xs).astype(net.dtype, copy=False)
        gb = np.stack(gts).astype(net.dtype, copy=False)
        preds = net.forward(Tensor(xb), mode="train")
        loss = multiscale_loss(preds, gb)
        loss.backward()
        adam_step(params, schedule.lr_at(it))
        value = loss.item()
        curve.append(value)
        if callback is not None:
            callback(it, value)
        if it % 100 == 0:
            log.debug("iter %d loss %.6f", it, value)
    return curve


def _default_sampler(n: int, batch: int, rng: np.random.Generator) -> Iterator[List[int]]:
    while True:
        if n <= batch:
            yield list(range(n))
        else:
            yield rng.integers(0, n, size=batch).tolist()
