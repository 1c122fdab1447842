"""Readers and writers for the on-disk formats.

* Kitti velodyne ``.bin``: little-endian float32 quadruples (x, y, z, r) in the
  velodyne frame (x forward, y left, z up).
* Kitti tracking labels (17 whitespace-separated columns) and calibration.
* Pose files: one ``frame tx tz yaw`` line per frame.
* Grid tensors of the ``LFL1`` family: magic, u32 H, u32 W, u32 C, then
  H*W*C little-endian float32 values, pixel-interleaved, row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np

from ..lidar_geom import PointCloud, RangeImage
from ..motion_gt import EgoPose, MotionMap, TrackedBox
from ..priors import CameraCalib, FormatError

VEHICLE_TYPES = ("Car", "Van", "Truck")

# internal (X right, Y up, Z forward) -> velodyne (x forward, y left, z up)
INTERNAL_TO_VELO = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

STACK_MAGIC = b"LFS1\n"
MOTION_MAGIC = b"LFM1\n"
RANGE_MAGIC = b"LFR1\n"


# --- velodyne ---------------------------------------------------------------

def velo_to_internal(xyz: np.ndarray) -> np.ndarray:
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    return np.column_stack([-y, z, x])


def internal_to_velo(xyz: np.ndarray) -> np.ndarray:
    X, Y, Z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    return np.column_stack([Z, -X, Y])


def read_velodyne_bin(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        whole = len(raw) // 16 * 16
        raise FormatError(f"{path}: truncated point record at byte offset {whole} (file has {len(raw)} bytes)")
    quads = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    if not np.all(np.isfinite(quads[:, :3])):
        bad = int(np.argwhere(~np.isfinite(quads[:, :3]))[0, 0])
        raise FormatError(f"{path}: non-finite coordinate in point {bad}")
    pts = np.column_stack([velo_to_internal(quads[:, :3]), quads[:, 3]])
    return PointCloud(pts)


def write_velodyne_bin(path, cloud: PointCloud) -> None:
    pts = cloud.points
    quads = np.column_stack([internal_to_velo(pts[:, :3]), pts[:, 3]])
    Path(path).write_bytes(np.ascontiguousarray(quads, dtype="<f4").tobytes())


# --- kitti calibration and labels ------------------------------------------

@dataclass
class KittiCalib:
    P2: np.ndarray  # (3, 4)
    R_rect: np.ndarray  # (3, 3)
    Tr_velo_cam: np.ndarray  # (3, 4)

    def velo_to_rect(self, xyz: np.ndarray) -> np.ndarray:
        return (xyz @ self.Tr_velo_cam[:, :3].T + self.Tr_velo_cam[:, 3]) @ self.R_rect.T

    def rect_to_velo(self, xyz: np.ndarray) -> np.ndarray:
        r = self.Tr_velo_cam[:, :3]
        t = self.Tr_velo_cam[:, 3]
        cam = xyz @ np.linalg.inv(self.R_rect).T
        return (cam - t) @ np.linalg.inv(r).T

    def rect_to_internal(self, xyz: np.ndarray) -> np.ndarray:
        return velo_to_internal(self.rect_to_velo(np.atleast_2d(xyz)))

    def camera_calib(self, width: int = 1242, height: int = 375) -> CameraCalib:
        """Pinhole model of the left colour camera fed with internal-frame points."""
        k = self.P2[:, :3]
        fx, fy, cx, cy = k[0, 0], k[1, 1], k[0, 2], k[1, 2]
        # P2 = K [I | K^-1 p4] on rectified coordinates
        offset = np.linalg.solve(k, self.P2[:, 3])
        rot = self.R_rect @ self.Tr_velo_cam[:, :3] @ INTERNAL_TO_VELO
        trans = self.R_rect @ self.Tr_velo_cam[:, 3] + offset
        # re-orthonormalize: calibration files carry ~1e-6 rounding
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        return CameraCalib(fx, fy, cx, cy, tuple(map(tuple, rot)), tuple(trans), width, height)


def read_kitti_calib(path) -> KittiCalib:
    """Parse tracking (``R_rect``, ``Tr_velo_cam``) or object (``R0_rect``, ``Tr_velo_to_cam``) calib files."""
    values: Dict[str, np.ndarray] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        # tracking files use "key v0 v1 ...", object files "key: v0 v1 ..."
        key, *rest = line.replace(":", " ", 1).split()
        try:
            values[key] = np.array([float(t) for t in rest])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: malformed calibration line") from exc

    def get(*names, size):
        for n in names:
            if n in values:
                if values[n].size != size:
                    raise FormatError(f"{path}: {n} has {values[n].size} values, expected {size}")
                return values[n]
        raise FormatError(f"{path}: missing {' / '.join(names)}")

    return KittiCalib(
        P2=get("P2", size=12).reshape(3, 4),
        R_rect=get("R_rect", "R0_rect", size=9).reshape(3, 3),
        Tr_velo_cam=get("Tr_velo_cam", "Tr_velo_to_cam", size=12).reshape(3, 4),
    )


def read_kitti_tracking_labels(path, calib: KittiCalib) -> Dict[int, List[TrackedBox]]:
    """Vehicle boxes per frame, converted to the internal lidar frame.

    Columns: frame, track_id, type, truncated, occluded, alpha, bbox (4),
    dimensions h w l, location x y z (bottom centre, rectified camera),
    rotation_y. Non-vehicle classes and ``DontCare`` rows are dropped.
    """
    frames: Dict[int, List[TrackedBox]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split()
        if len(cols) < 17:
            raise FormatError(f"{path}:{lineno}: expected 17 columns, found {len(cols)}")
        try:
            frame, track = int(cols[0]), int(cols[1])
            kind = cols[2]
            h, w, l = (float(c) for c in cols[10:13])
            loc = np.array([float(c) for c in cols[13:16]])
            ry = float(cols[16])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: malformed label line ({exc})") from exc
        if kind not in VEHICLE_TYPES:
            continue
        if min(h, w, l) <= 0:
            raise FormatError(f"{path}:{lineno}: non-positive box dimensions")
        bottom = calib.rect_to_internal(loc)[0]
        # heading in the rectified camera frame is (cos ry, 0, -sin ry)
        ahead = loc + np.array([np.cos(ry), 0.0, -np.sin(ry)])
        heading = calib.rect_to_internal(ahead)[0] - bottom
        yaw = float(np.arctan2(heading[2], heading[0]))
        box = TrackedBox(track, float(bottom[0]), float(bottom[2]), yaw, l, w, h, float(bottom[1] + h / 2), kind)
        frames.setdefault(frame, []).append(box)
    return frames


# --- poses ------------------------------------------------------------------

def write_pose_file(path, poses: Dict[int, EgoPose]) -> None:
    lines = [f"{f} {float(p.tx)!r} {float(p.tz)!r} {float(p.yaw)!r}" for f, p in sorted(poses.items())]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_pose_file(path) -> Dict[int, EgoPose]:
    poses: Dict[int, EgoPose] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split()
        if len(cols) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'frame tx tz yaw', found {len(cols)} fields")
        try:
            poses[int(cols[0])] = EgoPose(float(cols[1]), float(cols[2]), float(cols[3]))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: malformed pose line ({exc})") from exc
    return poses


# --- LFL-family grids -------------------------------------------------------

def write_grid(path, magic: bytes, data: np.ndarray) -> None:
    """Write an (H, W, C) array."""
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[..., None]
    h, w, c = data.shape
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<III", h, w, c))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_grid(path, magic: bytes) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(magic):
        raise FormatError(f"{path}: missing {magic!r} header")
    off = len(magic)
    if len(raw) < off + 12:
        raise FormatError(f"{path}: truncated header")
    h, w, c = struct.unpack_from("<III", raw, off)
    off += 12
    if len(raw) - off != h * w * c * 4:
        raise FormatError(f"{path}: payload size does not match {h}x{w}x{c}")
    return np.frombuffer(raw, dtype="<f4", offset=off).reshape(h, w, c).astype(np.float64)


def write_motion_map(path, mm: MotionMap) -> None:
    data = np.concatenate([np.moveaxis(mm.vectors, 0, -1), mm.dynamic[..., None].astype(float)], axis=-1)
    write_grid(path, MOTION_MAGIC, data)


def read_motion_map(path) -> MotionMap:
    data = read_grid(path, MOTION_MAGIC)
    if data.shape[2] != 3:
        raise FormatError(f"{path}: motion map needs 3 channels, found {data.shape[2]}")
    return MotionMap(np.moveaxis(data[..., :2], -1, 0), data[..., 2] > 0.5)


def write_range_image(path, image: RangeImage) -> None:
    data = np.stack([image.range, image.reflectivity, image.valid.astype(float)], axis=-1)
    write_grid(path, RANGE_MAGIC, data)


def read_range_image(path) -> RangeImage:
    data = read_grid(path, RANGE_MAGIC)
    if data.shape[2] != 3:
        raise FormatError(f"{path}: range image needs 3 channels, found {data.shape[2]}")
    valid = data[..., 2] > 0.5
    return RangeImage(np.where(valid, data[..., 0], 0.0), np.where(valid, data[..., 1], 0.0), valid)
