"""Pretext-prior channels: lidar-flow, vehicleness and odometry planes."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from .lidar_geom import RangeImage, SensorModel, unproject_all
from .motion_gt import BOX_INFLATION, RelativeTransform, TrackedBox

NEAR_PLANE = 0.1
FLOW_MAGIC = b"LFL1\n"
VEH_MAGIC = b"VEH1\n"


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class CameraCalib:
    """Pinhole camera fed by lidar points.

    ``rotation``/``translation`` map points from the package's lidar frame
    (X right, Y up, Z forward) into camera coordinates (x right, y down,
    z forward).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: Tuple[Tuple[float, ...], ...] = ((1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, 1.0))
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise ValueError("camera rotation is not orthonormal")
        if np.asarray(self.translation).shape != (3,):
            raise ValueError("translation must have three components")

    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=float)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=float)

    def to_camera(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=float) @ self.R.T + self.t

    def from_camera(self, pc: np.ndarray) -> np.ndarray:
        return (np.asarray(pc, dtype=float) - self.t) @ self.R

    def project(self, xyz: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (..., 2) and an in-front-of-camera mask."""
        pc = self.to_camera(xyz)
        z = pc[..., 2]
        front = z > NEAR_PLANE
        zs = np.where(front, z, 1.0)
        u = self.fx * pc[..., 0] / zs + self.cx
        v = self.fy * pc[..., 1] / zs + self.cy
        return np.stack([u, v], axis=-1), front

    def mirrored(self) -> "CameraCalib":
        """Calibration of the X -> -X mirrored rig (requires a centred principal point)."""
        m = np.diag([-1.0, 1.0, 1.0])
        r = m @ self.R @ m
        t = m @ self.t
        return CameraCalib(
            self.fx, self.fy, self.cx, self.cy,
            tuple(map(tuple, r)), tuple(t), self.width, self.height,
        )


@dataclass
class FlowImage:
    """Dense (u, v) pixel displacements; NaN marks pixels without flow."""

    flow: np.ndarray  # (H, W, 2)

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise ValueError(f"flow must be (H, W, 2), got {self.flow.shape}")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.flow).all(axis=-1)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.flow.shape[:2]


@dataclass
class LidarFlowMap:
    flow: np.ndarray  # (2, H, W), zero where invalid
    valid: np.ndarray  # (H, W) bool


@dataclass
class VehiclenessMap:
    prob: np.ndarray  # (H, W)

    def __post_init__(self):
        self.prob = np.asarray(self.prob, dtype=np.float64)
        if self.prob.ndim != 2:
            raise ValueError("vehicleness map must be 2D")
        if np.any(~np.isfinite(self.prob)) or np.any((self.prob < 0) | (self.prob > 1)):
            raise ValueError("vehicleness values must lie in [0, 1]")


@dataclass
class OdometryPlanes:
    planes: np.ndarray  # (3, H, W): dZ, dX, dYaw


def bilinear_sample(flow: FlowImage, uv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sample flow at continuous pixel positions (pixel centres at integers).

    A sample is valid when it lies inside the image and every neighbour with
    non-zero weight holds finite flow.
    """
    h, w = flow.shape
    u = uv[..., 0]
    v = uv[..., 1]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    u0 = np.minimum(np.floor(uc).astype(np.int64), max(w - 2, 0))
    v0 = np.minimum(np.floor(vc).astype(np.int64), max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (uc - u0)[..., None]
    fv = (vc - v0)[..., None]
    f = flow.flow
    ok = inside.copy()
    corners = []
    for vv, uu, used in (
        (v0, u0, (fu < 1) & (fv < 1)),
        (v0, u1, (fu > 0) & (fv < 1)),
        (v1, u0, (fu < 1) & (fv > 0)),
        (v1, u1, (fu > 0) & (fv > 0)),
    ):
        val = f[vv, uu]
        finite = np.isfinite(val).all(axis=-1, keepdims=True)
        ok &= (finite | ~used)[..., 0]
        corners.append(np.where(finite, val, 0.0))
    # nested lerps keep constant fields exact
    top = corners[0] + fu * (corners[1] - corners[0])
    bottom = corners[2] + fu * (corners[3] - corners[2])
    out = top + fv * (bottom - top)
    out[~ok] = 0.0
    return out, ok


def lidar_flow_gt(image_t: RangeImage, sensor: SensorModel, calib: CameraCalib, flow: FlowImage) -> LidarFlowMap:
    """Camera optical flow looked up at the image projection of every valid cell."""
    pts = unproject_all(image_t, sensor)
    uv, front = calib.project(pts)
    sampled, ok = bilinear_sample(flow, uv)
    valid = image_t.valid & front & ok
    vec = np.moveaxis(sampled, -1, 0).copy()
    vec[:, ~valid] = 0.0
    return LidarFlowMap(vec, valid)


def oracle_vehicle_mask(
    image: RangeImage, sensor: SensorModel, boxes: Sequence[TrackedBox], inflate: float = BOX_INFLATION
) -> VehiclenessMap:
    prob = np.zeros(image.shape)
    if boxes:
        pts = unproject_all(image, sensor)
        inside = np.zeros(image.shape, dtype=bool)
        for box in boxes:
            inside |= box.contains(pts, inflate)
        prob[inside & image.valid] = 1.0
    return VehiclenessMap(prob)


def odometry_planes(T: RelativeTransform, shape) -> OdometryPlanes:
    h, w = shape
    planes = np.empty((3, h, w))
    planes[0] = T.tz
    planes[1] = T.tx
    planes[2] = T.yaw
    return OdometryPlanes(planes)


# --- file formats ---------------------------------------------------------

def _write_grid(path, magic: bytes, data: np.ndarray) -> None:
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<II", h, w))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_grid(path, magic: bytes, per_pixel: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(magic):
        raise FormatError(f"{path}: missing {magic!r} header")
    off = len(magic)
    if len(raw) < off + 8:
        raise FormatError(f"{path}: truncated header")
    h, w = struct.unpack_from("<II", raw, off)
    off += 8
    expected = h * w * per_pixel * 4
    if len(raw) - off != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes for {h}x{w}, found {len(raw) - off}")
    data = np.frombuffer(raw, dtype="<f4", offset=off).astype(np.float64)
    return data.reshape((h, w, per_pixel) if per_pixel > 1 else (h, w))


def save_flow_image(path, flow: FlowImage) -> None:
    _write_grid(path, FLOW_MAGIC, flow.flow)


def load_flow_image(path) -> FlowImage:
    return FlowImage(_read_grid(path, FLOW_MAGIC, 2))


def save_vehicleness(path, vmap: VehiclenessMap) -> None:
    _write_grid(path, VEH_MAGIC, vmap.prob)


def load_vehicleness(path, shape: Tuple[int, int] = (64, 448)) -> VehiclenessMap:
    prob = _read_grid(path, VEH_MAGIC, 1)
    if shape is not None and prob.shape != tuple(shape):
        raise FormatError(f"{path}: vehicleness shape mismatch, expected {tuple(shape)}, found {prob.shape}")
    bad = ~np.isfinite(prob) | (prob < 0) | (prob > 1)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValueError(f"{path}: vehicleness value {prob[r, c]} at ({r}, {c}) outside [0, 1]")
    return VehiclenessMap(prob)
