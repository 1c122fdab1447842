"""Ground-plane motion ground truth.

Poses and transforms are SE(2) on the (X, Z) ground plane; yaw is the angle
about Y, positive when rotating +X towards +Z. A 2D point is handled as
``(x, z)``. Motion vectors are stored as ``(dZ, dX)`` in metres per interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .lidar_geom import RangeImage, SensorModel, unproject_all

BOX_INFLATION = 0.1


def normalize_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


def _rot(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class EgoPose:
    """Pose of the ego frame in a world frame: ``world = R(yaw) @ p + (tx, tz)``."""

    tx: float = 0.0
    tz: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.tz])

    @property
    def rotation(self) -> np.ndarray:
        return _rot(self.yaw)

    def apply(self, p) -> np.ndarray:
        """Map (..., 2) points given in this frame to the parent frame."""
        p = np.asarray(p, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_inverse(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return (p - self.translation) @ self.rotation

    def compose(self, other: "EgoPose") -> "EgoPose":
        """``self * other``: first ``other``, then ``self``."""
        t = self.apply(other.translation)
        return type(self)(float(t[0]), float(t[1]), self.yaw + other.yaw)

    def inverse(self) -> "EgoPose":
        t = -(self.rotation.T @ self.translation)
        return type(self)(float(t[0]), float(t[1]), -self.yaw)

    def mirrored(self) -> "EgoPose":
        """Reflection X -> -X of the whole world."""
        return type(self)(-self.tx, self.tz, -self.yaw)


class RelativeTransform(EgoPose):
    """Ego displacement between frames t and t+n, expressed in frame t.

    ``tz`` is the forward displacement, ``tx`` the transversal one and ``yaw``
    the heading change. As a change of coordinates the transform maps frame-t
    coordinates of a fixed point to its frame-(t+n) coordinates; its inverse,
    :meth:`to_frame_t`, brings frame-(t+n) observations back into frame t.
    """

    def to_frame_tn(self, p_t) -> np.ndarray:
        return self.apply_inverse(p_t)

    def to_frame_t(self, p_tn) -> np.ndarray:
        return self.apply(p_tn)


IDENTITY = RelativeTransform(0.0, 0.0, 0.0)


def relative_transform(pose_t: EgoPose, pose_tn: EgoPose) -> RelativeTransform:
    rel = pose_t.inverse().compose(pose_tn)
    return RelativeTransform(rel.tx, rel.tz, rel.yaw)


def motion_vector(c_t, c_tn, T: RelativeTransform) -> np.ndarray:
    """Ground-plane motion ``(dZ, dX)`` of a centroid observed at t and t+n.

    Centroids are ``(x, z)`` pairs in their own ego frames.
    """
    c_t = np.asarray(c_t, dtype=float)
    c_tn_in_t = T.to_frame_t(c_tn)
    d = c_tn_in_t - c_t
    return np.array([d[1], d[0]])


@dataclass(frozen=True)
class IntervalSpec:
    n: int = 1
    frame_rate: float = 10.0
    v_min: float = 10.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.v_min < 0:
            raise ValueError("v_min must be non-negative")

    @property
    def threshold(self) -> float:
        """Minimum displacement (metres per interval) counted as motion."""
        return self.v_min * self.n / (3.6 * self.frame_rate)

    @property
    def seconds(self) -> float:
        return self.n / self.frame_rate


def dynamic_filter(v, spec: IntervalSpec) -> bool:
    return bool(np.hypot(*np.asarray(v, dtype=float)[:2]) > spec.threshold)


@dataclass(frozen=True)
class TrackedBox:
    """A vehicle box in an ego frame: ground centroid (x, z), heading yaw, size."""

    track_id: int
    x: float
    z: float
    yaw: float
    length: float
    width: float
    height: float
    center_height: float
    kind: str = "Car"

    def __post_init__(self):
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError(f"box {self.track_id}: dimensions must be positive")

    @property
    def centroid(self) -> np.ndarray:
        return np.array([self.x, self.z])

    def contains(self, xyz: np.ndarray, inflate: float = BOX_INFLATION) -> np.ndarray:
        """Point-in-oriented-box test for (..., 3) points (X, Y, Z)."""
        xyz = np.asarray(xyz, dtype=float)
        d = xyz[..., [0, 2]] - self.centroid
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        along = d[..., 0] * c + d[..., 1] * s
        across = -d[..., 0] * s + d[..., 1] * c
        up = xyz[..., 1] - self.center_height
        return (
            (np.abs(along) <= 0.5 * self.length + inflate)
            & (np.abs(across) <= 0.5 * self.width + inflate)
            & (np.abs(up) <= 0.5 * self.height + inflate)
        )

    def moved(self, x: float, z: float, yaw: float) -> "TrackedBox":
        return TrackedBox(self.track_id, x, z, yaw, self.length, self.width, self.height, self.center_height, self.kind)

    def mirrored(self) -> "TrackedBox":
        return self.moved(-self.x, self.z, math.pi - self.yaw)


@dataclass
class MotionMap:
    """Per-cell motion ``(dZ, dX)`` with the dynamic mask."""

    vectors: np.ndarray  # (2, H, W)
    dynamic: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.dynamic = np.asarray(self.dynamic, dtype=bool)
        if self.vectors.ndim != 3 or self.vectors.shape[0] != 2 or self.vectors.shape[1:] != self.dynamic.shape:
            raise ValueError(f"vectors {self.vectors.shape} do not match mask {self.dynamic.shape}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.dynamic.shape

    @classmethod
    def zeros(cls, shape) -> "MotionMap":
        return cls(np.zeros((2,) + tuple(shape)), np.zeros(shape, dtype=bool))

    @property
    def has_motion(self) -> bool:
        return bool(self.dynamic.any())


def box_membership(
    image: RangeImage, sensor: SensorModel, boxes: Sequence[TrackedBox], inflate: float = BOX_INFLATION
) -> np.ndarray:
    """Index of the box owning each valid cell, -1 for none.

    A cell inside several boxes goes to the box whose centroid is nearest to
    the cell's point on the ground plane.
    """
    owner = np.full(image.shape, -1, dtype=np.int64)
    if not boxes:
        return owner
    pts = unproject_all(image, sensor)
    best = np.full(image.shape, np.inf)
    for k, box in enumerate(boxes):
        inside = box.contains(pts, inflate) & image.valid
        if not inside.any():
            continue
        dist = np.hypot(pts[..., 0] - box.x, pts[..., 2] - box.z)
        take = inside & (dist < best)
        owner[take] = k
        best[take] = dist[take]
    return owner


def rasterize_gt(
    image: RangeImage,
    sensor: SensorModel,
    boxes_t: Sequence[TrackedBox],
    motions: Sequence,
    spec: IntervalSpec,
) -> MotionMap:
    if len(motions) != len(boxes_t):
        raise ValueError(f"{len(motions)} motion vectors for {len(boxes_t)} boxes")
    out = MotionMap.zeros(image.shape)
    owner = box_membership(image, sensor, boxes_t)
    for k, v in enumerate(motions):
        v = np.asarray(v, dtype=float)
        if not dynamic_filter(v, spec):
            continue
        cells = owner == k
        out.vectors[0][cells] = v[0]
        out.vectors[1][cells] = v[1]
        out.dynamic[cells] = True
    return out


def box_motions(
    boxes_t: Sequence[TrackedBox], boxes_tn: Sequence[TrackedBox], T: RelativeTransform
) -> list:
    """Motion vector of every frame-t box, matched to frame t+n by track id.

    Tracks missing at t+n get a zero vector (no correspondence, no motion claim).
    """
    later = {b.track_id: b for b in boxes_tn}
    out = []
    for b in boxes_t:
        m = later.get(b.track_id)
        out.append(np.zeros(2) if m is None else motion_vector(b.centroid, m.centroid, T))
    return out


# --- optical-flow color wheel -------------------------------------------------

def make_color_wheel() -> np.ndarray:
    """The standard 55-bin optical-flow wheel, RGB in [0, 1], shape (55, 3)."""
    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((RY + YG + GC + CB + BM + MR, 3))
    col = 0
    wheel[col:col + RY, 0] = 1
    wheel[col:col + RY, 1] = np.arange(RY) / RY
    col += RY
    wheel[col:col + YG, 0] = 1 - np.arange(YG) / YG
    wheel[col:col + YG, 1] = 1
    col += YG
    wheel[col:col + GC, 1] = 1
    wheel[col:col + GC, 2] = np.arange(GC) / GC
    col += GC
    wheel[col:col + CB, 1] = 1 - np.arange(CB) / CB
    wheel[col:col + CB, 2] = 1
    col += CB
    wheel[col:col + BM, 2] = 1
    wheel[col:col + BM, 0] = np.arange(BM) / BM
    col += BM
    wheel[col:col + MR, 2] = 1 - np.arange(MR) / MR
    wheel[col:col + MR, 0] = 1
    return wheel


_WHEEL = make_color_wheel()
_NCOLS = len(_WHEEL)


def _image_flow(vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # forward motion is drawn as upward image flow, rightward as rightward
    return vectors[1], -vectors[0]


def flow_color_encode(vectors, max_magnitude: float) -> np.ndarray:
    """Encode (2, H, W) ``(dZ, dX)`` vectors as an (H, W, 3) uint8 image.

    Direction picks the hue on the wheel, ``|v| / max_magnitude`` (clamped to
    1) the saturation; the zero vector is white.
    """
    if not max_magnitude > 0:
        raise ValueError("max_magnitude must be positive")
    vectors = np.asarray(vectors.vectors if isinstance(vectors, MotionMap) else vectors, dtype=float)
    u, v = _image_flow(vectors)
    rad = np.minimum(np.hypot(u, v) / max_magnitude, 1.0)
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1) / 2 * (_NCOLS - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % _NCOLS
    f = (fk - k0)[..., None]
    base = (1 - f) * _WHEEL[k0] + f * _WHEEL[k1]
    col = 1 - rad[..., None] * (1 - base)
    return np.clip(np.rint(255 * col), 0, 255).astype(np.uint8)


# (max channel, min channel) -> (segment start, segment length, ramp rises?)
_SEGMENTS = {
    (0, 2): (0.0, 15.0, True),    # red -> yellow, green rises
    (1, 2): (15.0, 6.0, False),   # yellow -> green, red falls
    (1, 0): (21.0, 4.0, True),    # green -> cyan, blue rises
    (2, 0): (25.0, 11.0, False),  # cyan -> blue, green falls
    (2, 1): (36.0, 13.0, True),   # blue -> magenta, red rises
    (0, 1): (49.0, 6.0, False),   # magenta -> red, blue falls
}


def _wheel_position(base: np.ndarray) -> np.ndarray:
    """Invert the piecewise-linear wheel: fractional bin index of a hue colour."""
    hi = base.argmax(axis=-1)
    lo = base.argmin(axis=-1)
    mid = 3 - hi - lo
    vmax = np.take_along_axis(base, hi[..., None], -1)[..., 0]
    vmin = np.take_along_axis(base, lo[..., None], -1)[..., 0]
    vmid = np.take_along_axis(base, mid[..., None], -1)[..., 0]
    span = vmax - vmin
    ramp = np.where(span > 0, (vmid - vmin) / np.where(span > 0, span, 1.0), 0.0)
    pos = np.zeros(base.shape[:-1])
    for (h, l), (start, width, rising) in _SEGMENTS.items():
        m = (hi == h) & (lo == l)
        pos[m] = start + width * (ramp[m] if rising else 1.0 - ramp[m])
    return pos


def flow_color_decode(rgb, max_magnitude: float) -> np.ndarray:
    """Recover (2, H, W) ``(dZ, dX)`` vectors from :func:`flow_color_encode` output."""
    if not max_magnitude > 0:
        raise ValueError("max_magnitude must be positive")
    col = np.asarray(rgb, dtype=float) / 255.0
    rad = 1.0 - col.min(axis=-1)
    safe = np.where(rad > 0, rad, 1.0)
    base = np.clip(1.0 - (1.0 - col) / safe[..., None], 0.0, 1.0)
    # positions past the last bin wrap onto the same angle (+-pi)
    fk = np.minimum(_wheel_position(base), _NCOLS - 1)
    a = fk / (_NCOLS - 1) * 2 - 1
    ang = a * np.pi
    # a = atan2(-v, -u) / pi  =>  (-u, -v) points along angle a*pi
    u = -np.cos(ang) * rad * max_magnitude
    v = -np.sin(ang) * rad * max_magnitude
    u = np.where(rad > 0, u, 0.0)
    v = np.where(rad > 0, v, 0.0)
    return np.stack([-v, u])
