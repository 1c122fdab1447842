"""Frame pairs and the canonical on-disk scene directory.

A scene directory holds one sequence::

    scene.txt             key=value records (interval, camera, boxes, motions)
    poses.txt             optional "frame tx tz yaw" lines
    velodyne/NNNNNN.bin   one Kitti-layout scan per frame
    flow/NNNNNN.lfl       optional optical flow from frame N to N+n
    vehicleness/NNNNNN.veh  optional external vehicleness maps

Records in ``scene.txt`` are single lines starting with a record type
(``interval``, ``camera``, ``box``, ``motion``) followed by ``key=value``
fields. Floats are written with ``repr`` so text round trips are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..lidar_geom import PointCloud
from ..motion_gt import EgoPose, IntervalSpec, RelativeTransform, TrackedBox, box_motions, relative_transform
from ..priors import (
    CameraCalib,
    FlowImage,
    FormatError,
    VehiclenessMap,
    load_flow_image,
    load_vehicleness,
    save_flow_image,
    save_vehicleness,
)
from .formats import read_pose_file, read_velodyne_bin, write_pose_file, write_velodyne_bin


class PrerequisiteError(ValueError):
    """Data needed by the requested input mode (or ground truth) is absent."""


@dataclass
class ScenePair:
    scan_t: PointCloud
    scan_tn: PointCloud
    pose_t: Optional[EgoPose]
    pose_tn: Optional[EgoPose]
    boxes_t: List[TrackedBox]
    boxes_tn: List[TrackedBox]
    interval: IntervalSpec = field(default_factory=IntervalSpec)
    flow: Optional[FlowImage] = None
    calib: Optional[CameraCalib] = None
    vehicleness_t: Optional[VehiclenessMap] = None
    vehicleness_tn: Optional[VehiclenessMap] = None
    motions: Optional[List[np.ndarray]] = None  # known motion of each boxes_t entry
    name: str = ""

    def __post_init__(self):
        for label, boxes in (("t", self.boxes_t), ("t+n", self.boxes_tn)):
            ids = [b.track_id for b in boxes]
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate track ids in frame {label}")
        if (self.pose_t is None) != (self.pose_tn is None):
            raise ValueError("either both poses or neither must be given")
        if self.motions is not None and len(self.motions) != len(self.boxes_t):
            raise ValueError("one motion vector per frame-t box required")

    @property
    def has_poses(self) -> bool:
        return self.pose_t is not None

    @property
    def transform(self) -> RelativeTransform:
        if not self.has_poses:
            raise PrerequisiteError(f"{self.name or 'pair'}: odometry requires poses for both frames")
        return relative_transform(self.pose_t, self.pose_tn)

    def box_motions(self) -> List[np.ndarray]:
        """Per-box motion of frame t: from odometry when available, else the stored motions."""
        if self.has_poses:
            return box_motions(self.boxes_t, self.boxes_tn, self.transform)
        if self.motions is not None:
            return [np.asarray(m, dtype=float) for m in self.motions]
        raise PrerequisiteError(f"{self.name or 'pair'}: ground truth needs poses or stored box motions")


@dataclass
class Scene:
    """A sequence of frames sharing one interval spec and camera."""

    scans: Dict[int, PointCloud]
    boxes: Dict[int, List[TrackedBox]] = field(default_factory=dict)
    poses: Dict[int, EgoPose] = field(default_factory=dict)
    interval: IntervalSpec = field(default_factory=IntervalSpec)
    calib: Optional[CameraCalib] = None
    flows: Dict[int, FlowImage] = field(default_factory=dict)
    vehicleness: Dict[int, VehiclenessMap] = field(default_factory=dict)
    motions: Dict[int, Dict[int, np.ndarray]] = field(default_factory=dict)
    name: str = ""

    def frames(self) -> List[int]:
        return sorted(self.scans)

    def pair_starts(self) -> List[int]:
        n = self.interval.n
        return [f for f in self.frames() if f + n in self.scans]

    def pair(self, t: int) -> ScenePair:
        tn = t + self.interval.n
        if t not in self.scans or tn not in self.scans:
            raise KeyError(f"frames {t} and {tn} are not both present")
        has_poses = t in self.poses and tn in self.poses
        boxes_t = list(self.boxes.get(t, []))
        motions = None
        if t in self.motions:
            known = self.motions[t]
            motions = [np.asarray(known.get(b.track_id, np.zeros(2)), dtype=float) for b in boxes_t]
        return ScenePair(
            scan_t=self.scans[t],
            scan_tn=self.scans[tn],
            pose_t=self.poses[t] if has_poses else None,
            pose_tn=self.poses[tn] if has_poses else None,
            boxes_t=boxes_t,
            boxes_tn=list(self.boxes.get(tn, [])),
            interval=self.interval,
            flow=self.flows.get(t),
            calib=self.calib,
            vehicleness_t=self.vehicleness.get(t),
            vehicleness_tn=self.vehicleness.get(tn),
            motions=motions,
            name=f"{self.name}:{t}" if self.name else str(t),
        )

    @classmethod
    def from_pair(cls, pair: ScenePair, name: str = "") -> "Scene":
        n = pair.interval.n
        scene = cls(
            scans={0: pair.scan_t, n: pair.scan_tn},
            boxes={0: list(pair.boxes_t), n: list(pair.boxes_tn)},
            interval=pair.interval,
            calib=pair.calib,
            name=name or pair.name,
        )
        if pair.has_poses:
            scene.poses = {0: pair.pose_t, n: pair.pose_tn}
        if pair.flow is not None:
            scene.flows[0] = pair.flow
        if pair.vehicleness_t is not None:
            scene.vehicleness[0] = pair.vehicleness_t
        if pair.vehicleness_tn is not None:
            scene.vehicleness[n] = pair.vehicleness_tn
        if pair.motions is not None:
            scene.motions[0] = {b.track_id: np.asarray(m, dtype=float) for b, m in zip(pair.boxes_t, pair.motions)}
        return scene


# --- scene.txt records ------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _record(record: str, **fields) -> str:
    return " ".join([record] + [f"{k}={_fmt(v)}" for k, v in fields.items()])


def _parse_record(line: str, where: str):
    kind, *items = line.split()
    fields = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise FormatError(f"{where}: expected key=value, found {item!r}")
        fields[key] = value
    return kind, fields


def _take(fields: dict, key: str, conv, where: str):
    if key not in fields:
        raise FormatError(f"{where}: missing field {key!r}")
    try:
        return conv(fields.pop(key))
    except ValueError as exc:
        raise FormatError(f"{where}: bad value for {key!r}") from exc


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(","))


def _frame_file(directory: Path, frame: int, suffix: str) -> Path:
    return directory / f"{frame:06d}{suffix}"


def write_scene(path, scene: Scene) -> None:
    root = Path(path)
    (root / "velodyne").mkdir(parents=True, exist_ok=True)
    iv = scene.interval
    lines = [_record("interval", n=iv.n, frame_rate=float(iv.frame_rate), v_min=float(iv.v_min))]
    if scene.name:
        lines.append(_record("name", value=scene.name))
    if scene.calib is not None:
        c = scene.calib
        lines.append(_record(
            "camera", fx=float(c.fx), fy=float(c.fy), cx=float(c.cx), cy=float(c.cy),
            width=int(c.width), height=int(c.height),
            rotation=",".join(repr(float(v)) for v in c.R.ravel()),
            translation=",".join(repr(float(v)) for v in c.t),
        ))
    for frame in sorted(scene.boxes):
        for b in scene.boxes[frame]:
            lines.append(_record(
                "box", frame=frame, track=b.track_id, kind=b.kind, x=float(b.x), z=float(b.z), yaw=float(b.yaw),
                length=float(b.length), width=float(b.width), height=float(b.height),
                center_height=float(b.center_height),
            ))
    for frame in sorted(scene.motions):
        for track, m in sorted(scene.motions[frame].items()):
            lines.append(_record("motion", frame=frame, track=track, dz=float(m[0]), dx=float(m[1])))
    (root / "scene.txt").write_text("\n".join(lines) + "\n")

    if scene.poses:
        write_pose_file(root / "poses.txt", scene.poses)
    for frame, cloud in scene.scans.items():
        write_velodyne_bin(_frame_file(root / "velodyne", frame, ".bin"), cloud)
    if scene.flows:
        (root / "flow").mkdir(exist_ok=True)
        for frame, flow in scene.flows.items():
            save_flow_image(_frame_file(root / "flow", frame, ".lfl"), flow)
    if scene.vehicleness:
        (root / "vehicleness").mkdir(exist_ok=True)
        for frame, vmap in scene.vehicleness.items():
            save_vehicleness(_frame_file(root / "vehicleness", frame, ".veh"), vmap)


def _frames_in(directory: Path, suffix: str) -> Dict[int, Path]:
    out = {}
    if directory.is_dir():
        for p in sorted(directory.glob(f"*{suffix}")):
            try:
                out[int(p.stem)] = p
            except ValueError:
                raise FormatError(f"{p}: frame files must be named by frame number") from None
    return out


def read_scene(path, vehicleness_shape=(64, 448)) -> Scene:
    root = Path(path)
    desc = root / "scene.txt"
    if not desc.is_file():
        raise FileNotFoundError(f"{root}: not a scene directory (no scene.txt)")
    scene = Scene(scans={})
    for lineno, line in enumerate(desc.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        where = f"{desc}:{lineno}"
        kind, f = _parse_record(line, where)
        if kind == "interval":
            scene.interval = IntervalSpec(
                _take(f, "n", int, where), _take(f, "frame_rate", float, where), _take(f, "v_min", float, where)
            )
        elif kind == "name":
            scene.name = _take(f, "value", str, where)
        elif kind == "camera":
            rot = _take(f, "rotation", _floats, where)
            if len(rot) != 9:
                raise FormatError(f"{where}: rotation needs 9 values")
            scene.calib = CameraCalib(
                _take(f, "fx", float, where), _take(f, "fy", float, where),
                _take(f, "cx", float, where), _take(f, "cy", float, where),
                tuple(tuple(rot[i:i + 3]) for i in (0, 3, 6)),
                _take(f, "translation", _floats, where),
                _take(f, "width", int, where), _take(f, "height", int, where),
            )
        elif kind == "box":
            frame = _take(f, "frame", int, where)
            box = TrackedBox(
                _take(f, "track", int, where), _take(f, "x", float, where), _take(f, "z", float, where),
                _take(f, "yaw", float, where), _take(f, "length", float, where), _take(f, "width", float, where),
                _take(f, "height", float, where), _take(f, "center_height", float, where),
                _take(f, "kind", str, where),
            )
            scene.boxes.setdefault(frame, []).append(box)
        elif kind == "motion":
            frame = _take(f, "frame", int, where)
            track = _take(f, "track", int, where)
            scene.motions.setdefault(frame, {})[track] = np.array(
                [_take(f, "dz", float, where), _take(f, "dx", float, where)]
            )
        else:
            raise FormatError(f"{where}: unknown record type {kind!r}")
        if f:
            raise FormatError(f"{where}: unknown field(s) {sorted(f)}")

    if (root / "poses.txt").is_file():
        scene.poses = read_pose_file(root / "poses.txt")
    for frame, p in _frames_in(root / "velodyne", ".bin").items():
        scene.scans[frame] = read_velodyne_bin(p)
    for frame, p in _frames_in(root / "flow", ".lfl").items():
        scene.flows[frame] = load_flow_image(p)
    for frame, p in _frames_in(root / "vehicleness", ".veh").items():
        scene.vehicleness[frame] = load_vehicleness(p, vehicleness_shape)
    if not scene.scans:
        raise FormatError(f"{root}: no scans under velodyne/")
    return scene
