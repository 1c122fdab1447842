"""Network inputs (prior stacks), dataset indexing, balanced sampling and flips."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..lidar_geom import SensorModel, project
from ..motion_gt import IntervalSpec, MotionMap, rasterize_gt
from ..priors import lidar_flow_gt, odometry_planes, oracle_vehicle_mask
from .formats import STACK_MAGIC, read_grid, write_grid
from .scene import PrerequisiteError, ScenePair

MODES = {"D": 4, "D&F": 6, "D&F&S": 8, "D&F&S&O": 11}
FLOW_SOURCES = ("gt", "pred")

# channel positions inside the full 11-channel layout
CH_FLOW_U = 4
CH_ODO_DX = 9
CH_ODO_DYAW = 10


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    return mode


def mode_for_channels(c: int) -> str:
    for mode, count in MODES.items():
        if count == c:
            return mode
    raise ValueError(f"no input mode has {c} channels")


@dataclass
class PriorStack:
    """Network input of one frame pair, stored channel-first as (C, H, W)."""

    tensor: np.ndarray
    mode: str

    def __post_init__(self):
        check_mode(self.mode)
        self.tensor = np.asarray(self.tensor, dtype=np.float64)
        if self.tensor.ndim != 3 or self.tensor.shape[0] != MODES[self.mode]:
            raise ValueError(f"mode {self.mode} needs {MODES[self.mode]} channels, tensor is {self.tensor.shape}")

    @property
    def channels(self) -> int:
        return self.tensor.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.tensor.shape[1:]

    def lidar(self) -> np.ndarray:
        return self.tensor[:4]


FlowPredictor = Callable[[np.ndarray], np.ndarray]


def net_flow_predictor(net) -> FlowPredictor:
    """Wrap a 2-output network trained on lidar channels as a Pred.F source."""

    def predict(lidar: np.ndarray) -> np.ndarray:
        return net.predict(lidar[None].astype(net.dtype))[0].astype(np.float64)

    return predict


def assemble_input(
    pair: ScenePair,
    mode: str,
    sensor: Optional[SensorModel] = None,
    spec: Optional[IntervalSpec] = None,
    flow_source: str = "gt",
    flow_predictor: Optional[FlowPredictor] = None,
) -> Tuple[PriorStack, MotionMap]:
    """Stack ``[range_t, refl_t, range_tn, refl_tn] + flow + vehicleness + odometry``."""
    check_mode(mode)
    if flow_source not in FLOW_SOURCES:
        raise ValueError(f"flow_source must be one of {FLOW_SOURCES}")
    sensor = sensor or SensorModel()
    spec = spec or pair.interval
    img_t = project(pair.scan_t, sensor)
    img_tn = project(pair.scan_tn, sensor)
    gt = rasterize_gt(img_t, sensor, pair.boxes_t, pair.box_motions(), spec)

    channels = [img_t.range, img_t.reflectivity, img_tn.range, img_tn.reflectivity]
    if "F" in mode:
        if flow_source == "gt":
            if pair.flow is None or pair.calib is None:
                raise PrerequisiteError(f"{pair.name or 'pair'}: mode {mode} with GT flow needs a flow image and camera calibration")
            lf = lidar_flow_gt(img_t, sensor, pair.calib, pair.flow)
            channels += [lf.flow[0], lf.flow[1]]
        else:
            if flow_predictor is None:
                raise PrerequisiteError(f"mode {mode} with predicted flow needs a flow network")
            pred = flow_predictor(np.stack(channels))
            pred = np.where(img_t.valid, pred, 0.0)
            channels += [pred[0], pred[1]]
    if "S" in mode:
        veh_t = pair.vehicleness_t or oracle_vehicle_mask(img_t, sensor, pair.boxes_t)
        veh_tn = pair.vehicleness_tn or oracle_vehicle_mask(img_tn, sensor, pair.boxes_tn)
        for vmap, img in ((veh_t, img_t), (veh_tn, img_tn)):
            if vmap.prob.shape != img.shape:
                raise ValueError(f"vehicleness map {vmap.prob.shape} does not match range image {img.shape}")
            channels.append(np.where(img.valid, vmap.prob, 0.0))
    if "O" in mode:
        # odometry is a property of the pair, so these planes stay constant
        channels += list(odometry_planes(pair.transform, sensor.shape).planes)
    return PriorStack(np.stack(channels), mode), gt


def lidar_flow_target(pair: ScenePair, sensor: Optional[SensorModel] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(lidar channels, GT lidar-flow) for training a Pred.F network."""
    sensor = sensor or SensorModel()
    if pair.flow is None or pair.calib is None:
        raise PrerequisiteError(f"{pair.name or 'pair'}: lidar-flow target needs a flow image and camera calibration")
    img_t = project(pair.scan_t, sensor)
    img_tn = project(pair.scan_tn, sensor)
    lidar = np.stack([img_t.range, img_t.reflectivity, img_tn.range, img_tn.reflectivity])
    return lidar, lidar_flow_gt(img_t, sensor, pair.calib, pair.flow).flow


# --- flips ------------------------------------------------------------------

def _negated_channels(mode: str) -> List[int]:
    neg = []
    if "F" in mode:
        neg.append(CH_FLOW_U)
    if "O" in mode:
        neg += [CH_ODO_DX, CH_ODO_DYAW]
    return neg


def flip_arrays(x: np.ndarray, gt: np.ndarray, mode: str) -> Tuple[np.ndarray, np.ndarray]:
    """Mirror an input (C, H, W) and a GT (2, H, W) about the vertical image axis."""
    x = x[..., ::-1].copy()
    gt = gt[..., ::-1].copy()
    for c in _negated_channels(mode):
        x[c] = -x[c]
    gt[1] = -gt[1]
    return x, gt


def hflip(stack: PriorStack, gt: MotionMap) -> Tuple[PriorStack, MotionMap]:
    x, v = flip_arrays(stack.tensor, gt.vectors, stack.mode)
    return PriorStack(x, stack.mode), MotionMap(v, gt.dynamic[:, ::-1].copy())


def flip_augmenter(mode: str, prob: float = 0.5):
    """Training augmentation: mirror a sample with probability ``prob``."""
    check_mode(mode)

    def augment(x, g, rng: np.random.Generator):
        if rng.random() < prob:
            return flip_arrays(x, g, mode)
        return x, g

    return augment


# --- index and sampling -----------------------------------------------------

@dataclass
class DatasetIndex:
    """Sample references with their motion flag."""

    entries: List[Tuple[int, bool]]

    @classmethod
    def from_motion_maps(cls, maps: Sequence[MotionMap]) -> "DatasetIndex":
        return cls([(i, m.has_motion) for i, m in enumerate(maps)])

    def __len__(self) -> int:
        return len(self.entries)

    def strata(self) -> Tuple[List[int], List[int]]:
        moving = [ref for ref, flag in self.entries if flag]
        static = [ref for ref, flag in self.entries if not flag]
        return moving, static


def batch_sampler(index: DatasetIndex, seed: int, n_motion: int = 8, n_static: int = 2) -> Iterator[List[int]]:
    """Endless batches of ``n_motion`` moving then ``n_static`` static references.

    Each stratum is drawn uniformly with replacement.
    """
    if len(index) == 0:
        raise ValueError("batch_sampler: empty dataset index")
    moving, static = index.strata()
    if n_motion and not moving:
        raise ValueError("batch_sampler: no frames with motion")
    if n_static and not static:
        raise ValueError("batch_sampler: no static frames")
    return _draw(np.asarray(moving), np.asarray(static), n_motion, n_static, np.random.default_rng(seed))


def _draw(moving, static, n_motion, n_static, rng) -> Iterator[List[int]]:
    while True:
        a = rng.choice(moving, n_motion) if n_motion else []
        b = rng.choice(static, n_static) if n_static else []
        yield [int(i) for i in a] + [int(i) for i in b]


# --- serialization ----------------------------------------------------------

def save_stack(path, stack: PriorStack) -> None:
    write_grid(path, STACK_MAGIC, np.moveaxis(stack.tensor, 0, -1))


def load_stack(path) -> PriorStack:
    data = np.moveaxis(read_grid(path, STACK_MAGIC), -1, 0)
    return PriorStack(data, mode_for_channels(data.shape[0]))
