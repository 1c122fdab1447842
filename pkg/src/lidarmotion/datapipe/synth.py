"""Synthetic scenes: flat ground plus oriented vehicle boxes, ray-cast exactly.

Every sensor ray passes through a cell centre, so the synthetic scans project
back onto the range-image grid without quantization loss. Vehicles move
rigidly over one interval: their ground centroid shifts by ``motion`` (dZ, dX)
expressed in frame t and the heading turns by ``yaw_rate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..lidar_geom import PointCloud, SensorModel
from ..motion_gt import EgoPose, IntervalSpec, RelativeTransform, TrackedBox
from ..priors import CameraCalib, FlowImage
from .scene import ScenePair

GROUND_REFLECTIVITY = 0.2
BOX_REFLECTIVITY = 0.6
SENSOR_HEIGHT = 1.73
MAX_RANGE = 80.0

# hit codes returned by raycast
NO_HIT = -2
GROUND = -1


def synthetic_camera() -> CameraCalib:
    """Forward camera at the lidar origin with a centred principal point."""
    width, height = 345, 150
    return CameraCalib(200.0, 200.0, (width - 1) / 2.0, 20.0, width=width, height=height)


@dataclass(frozen=True)
class VehicleSpec:
    track_id: int
    x: float
    z: float
    yaw: float = math.pi / 2
    motion: Tuple[float, float] = (0.0, 0.0)
    yaw_rate: float = 0.0
    length: float = 4.0
    width: float = 1.8
    height: float = 1.5

    def box(self, sensor_height: float = SENSOR_HEIGHT) -> TrackedBox:
        return TrackedBox(
            self.track_id, self.x, self.z, self.yaw, self.length, self.width, self.height,
            -sensor_height + self.height / 2,
        )

    def box_after(self, sensor_height: float = SENSOR_HEIGHT) -> TrackedBox:
        """Box at t+n, still in frame-t coordinates."""
        dz, dx = self.motion
        return self.box(sensor_height).moved(self.x + dx, self.z + dz, self.yaw + self.yaw_rate)

    def mirrored(self) -> "VehicleSpec":
        dz, dx = self.motion
        return replace(self, x=-self.x, yaw=math.pi - self.yaw, motion=(dz, -dx), yaw_rate=-self.yaw_rate)


@dataclass(frozen=True)
class SceneSpec:
    vehicles: Tuple[VehicleSpec, ...] = ()
    ego_motion: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # (tx, tz, yaw) of t+n in frame t
    pose_t: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    sensor_height: float = SENSOR_HEIGHT
    max_range: float = MAX_RANGE
    range_noise: float = 0.0
    with_flow: bool = True
    interval: IntervalSpec = field(default_factory=IntervalSpec)

    @property
    def transform(self) -> RelativeTransform:
        return RelativeTransform(*self.ego_motion)

    def mirrored(self) -> "SceneSpec":
        tx, tz, yaw = self.ego_motion
        px, pz, pyaw = self.pose_t
        return replace(
            self,
            vehicles=tuple(v.mirrored() for v in self.vehicles),
            ego_motion=(-tx, tz, -yaw),
            pose_t=(-px, pz, -pyaw),
        )


def _slab(o: np.ndarray, d: np.ndarray, half: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Entry/exit distances of rays (o + s d) against an axis-aligned box [-half, half]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    # rays parallel to a slab: inside it -> unconstrained, outside -> miss
    parallel = d == 0
    inside = np.abs(o) <= half
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
    return lo.max(axis=-1), hi.min(axis=-1)


def _to_box_frame(box: TrackedBox, p: np.ndarray, is_dir: bool) -> np.ndarray:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = p[..., 0] if is_dir else p[..., 0] - box.x
    z = p[..., 2] if is_dir else p[..., 2] - box.z
    y = p[..., 1] if is_dir else p[..., 1] - box.center_height
    return np.stack([x * c + z * s, y, -x * s + z * c], axis=-1)


def raycast(
    origin: np.ndarray,
    dirs: np.ndarray,
    boxes: Sequence[TrackedBox],
    ground_y: float,
    max_range: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Distance along unit ``dirs`` to the first surface, and what was hit.

    Returns ``(dist, hit)`` where ``hit`` is a box index, ``GROUND`` or
    ``NO_HIT``; ``dist`` is zero where nothing lies within ``max_range``.
    """
    origin = np.asarray(origin, dtype=float)
    dist = np.full(dirs.shape[:-1], np.inf)
    hit = np.full(dirs.shape[:-1], NO_HIT, dtype=np.int64)
    dy = dirs[..., 1]
    if origin[1] > ground_y:
        with np.errstate(divide="ignore"):
            tg = np.where(dy < 0, (ground_y - origin[1]) / np.where(dy < 0, dy, -1.0), np.inf)
        dist = np.minimum(dist, tg)
        hit[np.isfinite(tg)] = GROUND
    for k, box in enumerate(boxes):
        o = _to_box_frame(box, origin, is_dir=False)
        d = _to_box_frame(box, dirs, is_dir=True)
        half = np.array([box.length / 2, box.height / 2, box.width / 2])
        if np.all(np.abs(o) <= half):
            raise ValueError(f"box {box.track_id} contains the sensor origin")
        near, far = _slab(o, d, half)
        take = (near <= far) & (near > 0) & (near < dist)
        dist = np.where(take, near, dist)
        hit[take] = k
    miss = dist > max_range
    hit[miss] = NO_HIT
    dist[miss] = 0.0
    return dist, hit


def _scan(dirs, boxes, spec: SceneSpec, rng: np.random.Generator) -> PointCloud:
    dist, hit = raycast(np.zeros(3), dirs, boxes, -spec.sensor_height, spec.max_range)
    ok = hit != NO_HIT
    r = dist[ok]
    if spec.range_noise > 0:
        r = np.maximum(r + rng.normal(0.0, spec.range_noise, size=r.shape), 1e-3)
    pts = dirs[ok] * r[:, None]
    refl = np.where(hit[ok] == GROUND, GROUND_REFLECTIVITY, BOX_REFLECTIVITY)
    return PointCloud(np.column_stack([pts, refl]))


def _boxes_in_tn(spec: SceneSpec) -> List[TrackedBox]:
    T = spec.transform
    out = []
    for v in spec.vehicles:
        b = v.box_after(spec.sensor_height)
        x, z = T.to_frame_tn(b.centroid)
        out.append(b.moved(float(x), float(z), b.yaw - T.yaw))
    return out


def _move_points(pts: np.ndarray, hit: np.ndarray, spec: SceneSpec) -> np.ndarray:
    """Frame-t positions at t+n of surface points (ground is static)."""
    moved = pts.copy()
    for k, v in enumerate(spec.vehicles):
        m = hit == k
        if not m.any():
            continue
        dz, dx = v.motion
        c, s = math.cos(v.yaw_rate), math.sin(v.yaw_rate)
        rx = pts[m, 0] - v.x
        rz = pts[m, 2] - v.z
        moved[m, 0] = v.x + dx + c * rx - s * rz
        moved[m, 2] = v.z + dz + s * rx + c * rz
    return moved


def synth_flow(spec: SceneSpec, calib: CameraCalib, boxes_t: Sequence[TrackedBox]) -> FlowImage:
    """Exact forward optical flow of the synthetic camera between t and t+n."""
    h, w = calib.height, calib.width
    v, u = np.mgrid[0:h, 0:w].astype(float)
    cam = np.stack([(u - calib.cx) / calib.fx, (v - calib.cy) / calib.fy, np.ones_like(u)], axis=-1)
    dirs = cam @ calib.R
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origin = calib.from_camera(np.zeros(3))
    dist, hit = raycast(origin, dirs, boxes_t, -spec.sensor_height, spec.max_range)
    pts = origin + dirs * dist[..., None]
    later = _move_points(pts, hit, spec)
    xz = spec.transform.to_frame_tn(later[..., [0, 2]])
    later_tn = np.stack([xz[..., 0], later[..., 1], xz[..., 1]], axis=-1)
    uv, front = calib.project(later_tn)
    flow = uv - np.stack([u, v], axis=-1)
    flow[(hit == NO_HIT) | ~front] = np.nan
    return FlowImage(flow)


def synth_scene(spec: SceneSpec, seed: int = 0, sensor: Optional[SensorModel] = None, name: str = "") -> ScenePair:
    """Ray-cast both scans of a scene; the pair carries the analytic box motions."""
    sensor = sensor or SensorModel()
    rng = np.random.default_rng(seed)
    dirs = sensor.ray_directions()
    boxes_t = [v.box(spec.sensor_height) for v in spec.vehicles]
    boxes_tn = _boxes_in_tn(spec)
    ids = [v.track_id for v in spec.vehicles]
    if len(set(ids)) != len(ids):
        raise ValueError("vehicle track ids must be unique")
    scan_t = _scan(dirs, boxes_t, spec, rng)
    scan_tn = _scan(dirs, boxes_tn, spec, rng)
    pose_t = EgoPose(*spec.pose_t)
    pose_tn = pose_t.compose(spec.transform)
    calib = flow = None
    if spec.with_flow:
        calib = synthetic_camera()
        flow = synth_flow(spec, calib, boxes_t)
    return ScenePair(
        scan_t=scan_t,
        scan_tn=scan_tn,
        pose_t=pose_t,
        pose_tn=pose_tn,
        boxes_t=boxes_t,
        boxes_tn=boxes_tn,
        interval=spec.interval,
        flow=flow,
        calib=calib,
        motions=[np.array(v.motion, dtype=float) for v in spec.vehicles],
        name=name,
    )


# --- random scenes ----------------------------------------------------------

@dataclass(frozen=True)
class SceneDistribution:
    """Sampling ranges for :func:`random_scene_spec` (metres and metres per interval)."""

    max_vehicles: int = 4
    min_vehicles: int = 0
    z_range: Tuple[float, float] = (7.0, 35.0)
    lanes: Tuple[float, ...] = (-7.0, -3.5, 0.0, 3.5, 7.0)
    moving_prob: float = 0.7
    speed_range: Tuple[float, float] = (0.6, 1.6)
    ego_speed_range: Tuple[float, float] = (0.0, 1.0)
    ego_yaw_std: float = 0.01
    heading_std: float = 0.05


def random_scene_spec(rng: np.random.Generator, dist: SceneDistribution = SceneDistribution()) -> SceneSpec:
    """Road-like scene: vehicles in lanes, driving along or against the ego heading."""
    n = int(rng.integers(dist.min_vehicles, dist.max_vehicles + 1))
    vehicles: List[VehicleSpec] = []
    placed: List[Tuple[float, float]] = []
    attempts = 0
    while len(vehicles) < n and attempts < 100:
        attempts += 1
        lane = float(rng.choice(dist.lanes))
        x = lane + float(rng.normal(0.0, 0.3))
        z = float(rng.uniform(*dist.z_range))
        # keep a full car length (plus one interval of travel) between vehicles
        if any(abs(x - px) < 2.6 and abs(z - pz) < 7.0 for px, pz in placed):
            continue
        if abs(x) < 1.8 and z < 5.0:
            continue
        forward = rng.random() < 0.5
        heading = (math.pi / 2 if forward else -math.pi / 2) + float(rng.normal(0.0, dist.heading_std))
        if rng.random() < dist.moving_prob:
            speed = float(rng.uniform(*dist.speed_range))
            motion = (speed * math.sin(heading), speed * math.cos(heading))
        else:
            motion = (0.0, 0.0)
        length = float(rng.uniform(3.8, 4.8))
        width = float(rng.uniform(1.6, 1.9))
        height = float(rng.uniform(1.4, 1.7))
        vehicles.append(VehicleSpec(len(vehicles) + 1, x, z, heading, motion, 0.0, length, width, height))
        placed.append((x, z))
    ego_speed = float(rng.uniform(*dist.ego_speed_range))
    ego_yaw = float(rng.normal(0.0, dist.ego_yaw_std))
    return SceneSpec(vehicles=tuple(vehicles), ego_motion=(0.0, ego_speed, ego_yaw))
