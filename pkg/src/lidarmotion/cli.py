"""Command-line interface.

Every command reads a flat JSON config (``--config``) whose keys can be
overridden by flags of the same name. Unknown keys are rejected and all
violations are reported together. Failures print one line
``error: <category>: <message>`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import evalkit
from .datapipe import (
    MODES,
    DatasetIndex,
    PrerequisiteError,
    Scene,
    SceneDistribution,
    assemble_input,
    batch_sampler,
    flip_augmenter,
    lidar_flow_target,
    net_flow_predictor,
    random_scene_spec,
    read_kitti_calib,
    read_kitti_tracking_labels,
    read_motion_map,
    read_pose_file,
    read_scene,
    read_velodyne_bin,
    save_stack,
    synth_scene,
    write_motion_map,
    write_range_image,
    write_scene,
)
from .lidar_geom import SensorModel, project
from .motion_gt import IntervalSpec, MotionMap, flow_color_encode
from .motion_net import MotionNet, NetConfig, NetConfigError, TrainSchedule, train
from .priors import FlowImage, FormatError, lidar_flow_gt, save_flow_image
from .tensor_engine.checkpoint import CheckpointError

log = logging.getLogger("lidarmotion")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    type: type
    default: Any
    help: str
    choices: Optional[Tuple[Any, ...]] = None
    path_must_exist: bool = False


SCHEMA: Dict[str, Key] = {
    # sensor
    "n_rows": Key(int, 64, "laser rows of the range image"),
    "n_cols": Key(int, 448, "azimuth columns of the range image"),
    "azimuth_min": Key(float, -40.5, "left edge of the horizontal field of view, degrees"),
    "azimuth_max": Key(float, 40.5, "right edge of the horizontal field of view, degrees"),
    "elevation_max": Key(float, 2.0, "elevation of the top laser, degrees"),
    "elevation_min": Key(float, -24.8, "elevation of the bottom laser, degrees"),
    # interval
    "n": Key(int, 1, "frame interval between the two scans of a pair"),
    "frame_rate": Key(float, 10.0, "sensor frame rate, Hz"),
    "v_min": Key(float, 10.0, "speed threshold for dynamic vehicles, km/h"),
    # data
    "data": Key(str, None, "scene directory, or a directory of scene directories", path_must_exist=True),
    "train_data": Key(str, None, "training scenes used for the error@mean vector (eval)", path_must_exist=True),
    "output": Key(str, None, "output path (file or directory, per command)"),
    "input": Key(str, None, "input file", path_must_exist=True),
    "mode": Key(str, "D", "input mode", choices=tuple(MODES)),
    "flow_source": Key(str, "gt", "flow channels from camera flow (gt) or a lidar-flow network (pred)", choices=("gt", "pred")),
    "flow_checkpoint": Key(str, None, "checkpoint of the lidar-flow network used when flow_source is pred", path_must_exist=True),
    # synth
    "scenes": Key(int, 10, "number of synthetic scenes to generate"),
    "min_vehicles": Key(int, 0, "fewest vehicles per synthetic scene"),
    "max_vehicles": Key(int, 4, "most vehicles per synthetic scene"),
    "moving_prob": Key(float, 0.7, "probability that a synthetic vehicle moves"),
    "ego_speed_max": Key(float, 1.0, "largest ego displacement per interval, metres"),
    # kitti
    "velodyne_dir": Key(str, None, "directory of Kitti velodyne .bin files", path_must_exist=True),
    "label_file": Key(str, None, "Kitti tracking label file of the sequence", path_must_exist=True),
    "calib_file": Key(str, None, "Kitti calibration file of the sequence", path_must_exist=True),
    "pose_file": Key(str, None, "pose file with 'frame tx tz yaw' lines", path_must_exist=True),
    # network
    "target": Key(str, "motion", "regression target: vehicle motion, or lidar-flow for a pretext network", choices=("motion", "flow")),
    "base_width": Key(int, 8, "channels of the first encoder level"),
    "levels": Key(int, 5, "encoder levels (stride-2 steps)"),
    "heads": Key(str, "1/16,1/8,1/4,1/2,1", "comma-separated prediction head scales"),
    "dtype": Key(str, "float32", "floating point precision of training", choices=("float32", "float64")),
    "checkpoint": Key(str, None, "trained network checkpoint", path_must_exist=True),
    # training
    "iterations": Key(int, 2000, "training iterations"),
    "lr": Key(float, 1e-3, "Adam learning rate"),
    "halve_after": Key(int, 150000, "iteration of the first learning-rate halving"),
    "halve_every": Key(int, 60000, "iterations between later halvings"),
    "batch_size": Key(int, 10, "samples per batch for the uniform sampler"),
    "sampler": Key(str, "balanced", "balanced (8 moving + 2 static per batch) or uniform", choices=("balanced", "uniform")),
    "flip_prob": Key(float, 0.5, "probability of a horizontal flip per sample"),
    "seed": Key(int, 0, "seed of every random choice"),
    # render
    "max_magnitude": Key(float, 2.0, "vector length drawn at full saturation, metres per interval"),
    "verbose": Key(bool, False, "log progress to stderr"),
}

SENSOR_KEYS = ("n_rows", "n_cols", "azimuth_min", "azimuth_max", "elevation_max", "elevation_min")
INTERVAL_KEYS = ("n", "frame_rate", "v_min")
NET_KEYS = ("base_width", "levels", "heads")
TRAIN_KEYS = ("iterations", "lr", "halve_after", "halve_every", "batch_size", "sampler", "flip_prob", "seed", "dtype")

COMMANDS: Dict[str, Tuple[str, Tuple[str, ...], Tuple[str, ...]]] = {
    # name: (help, keys read, required keys)
    "synth": (
        "generate synthetic scene directories",
        ("output", "scenes", "min_vehicles", "max_vehicles", "moving_prob", "ego_speed_max", "seed", "verbose")
        + INTERVAL_KEYS + SENSOR_KEYS,
        ("output",),
    ),
    "ingest-kitti": (
        "convert one Kitti tracking sequence into a scene directory",
        ("velodyne_dir", "label_file", "calib_file", "pose_file", "output", "verbose") + INTERVAL_KEYS,
        ("velodyne_dir", "label_file", "calib_file", "output"),
    ),
    "project": (
        "write the range image of every frame",
        ("data", "output", "verbose") + SENSOR_KEYS,
        ("data", "output"),
    ),
    "gen-gt": (
        "write the ground-truth motion map of every frame pair",
        ("data", "output", "verbose") + SENSOR_KEYS + INTERVAL_KEYS,
        ("data", "output"),
    ),
    "gen-flowprior": (
        "write the lidar-flow map of every frame pair (NaN where undefined)",
        ("data", "output", "verbose") + SENSOR_KEYS + INTERVAL_KEYS,
        ("data", "output"),
    ),
    "assemble": (
        "write the input stack and ground truth of every frame pair",
        ("data", "output", "mode", "flow_source", "flow_checkpoint", "verbose") + SENSOR_KEYS + INTERVAL_KEYS,
        ("data", "output"),
    ),
    "train": (
        "train a network and write its checkpoint",
        ("data", "output", "mode", "flow_source", "flow_checkpoint", "target", "verbose")
        + NET_KEYS + TRAIN_KEYS + SENSOR_KEYS + INTERVAL_KEYS,
        ("data", "output"),
    ),
    "eval": (
        "evaluate a checkpoint and the baselines; writes <output>.txt and <output>.json",
        ("data", "checkpoint", "output", "mode", "flow_source", "flow_checkpoint", "train_data", "verbose")
        + SENSOR_KEYS + INTERVAL_KEYS,
        ("data", "output"),
    ),
    "render": (
        "draw a motion map file as a colour-coded PPM image",
        ("input", "output", "max_magnitude", "verbose"),
        ("input", "output"),
    ),
}


# --- config -----------------------------------------------------------------

def _coerce(name: str, key: Key, value, problems: List[str]):
    if value is None:
        return None
    if key.type is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        problems.append(f"{name}: expected true/false, got {value!r}")
        return None
    if key.type is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if key.type is int and isinstance(value, bool):
        problems.append(f"{name}: expected an integer, got {value!r}")
        return None
    if isinstance(value, key.type):
        out = value
    elif isinstance(value, str):
        try:
            out = key.type(value)
        except ValueError:
            problems.append(f"{name}: cannot parse {value!r} as {key.type.__name__}")
            return None
    else:
        problems.append(f"{name}: expected {key.type.__name__}, got {type(value).__name__}")
        return None
    if key.choices is not None and out not in key.choices:
        problems.append(f"{name}: {out!r} is not one of {', '.join(map(str, key.choices))}")
    return out


def resolve_config(command: str, file_values: Dict[str, Any], flag_values: Dict[str, Any]) -> Dict[str, Any]:
    """Merge defaults, config file and flags; raise ConfigError listing every problem."""
    _, keys, required = COMMANDS[command]
    problems = []
    for name in sorted(file_values):
        if name not in SCHEMA:
            problems.append(f"unknown key {name!r}")
    cfg = {}
    for name in keys:
        value = SCHEMA[name].default
        if name in file_values:
            value = file_values[name]
        if flag_values.get(name) is not None:
            value = flag_values[name]
        cfg[name] = _coerce(name, SCHEMA[name], value, problems)
    for name in required:
        if cfg.get(name) is None:
            problems.append(f"{name}: required")
    for name in keys:
        key = SCHEMA[name]
        if key.path_must_exist and cfg.get(name) is not None and not Path(cfg[name]).exists():
            problems.append(f"{name}: path does not exist: {cfg[name]}")
    for name in ("iterations", "scenes", "batch_size", "n_rows", "n_cols", "base_width", "levels", "n"):
        if name in cfg and isinstance(cfg[name], int) and cfg[name] < 1:
            problems.append(f"{name}: must be >= 1")
    if "flip_prob" in cfg and cfg["flip_prob"] is not None and not 0 <= cfg["flip_prob"] <= 1:
        problems.append("flip_prob: must lie in [0, 1]")
    if cfg.get("flow_source") == "pred" and "F" in (cfg.get("mode") or "") and cfg.get("flow_checkpoint") is None:
        problems.append("flow_checkpoint: required when flow_source is pred")
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def sensor_from(cfg) -> SensorModel:
    angles = tuple(float(a) for a in np.linspace(cfg["elevation_max"], cfg["elevation_min"], cfg["n_rows"]))
    return SensorModel(cfg["n_rows"], cfg["n_cols"], cfg["azimuth_min"], cfg["azimuth_max"], angles)


def interval_from(cfg) -> IntervalSpec:
    return IntervalSpec(cfg["n"], cfg["frame_rate"], cfg["v_min"])


def net_config_from(cfg, in_channels: int) -> NetConfig:
    return NetConfig(
        in_channels=in_channels,
        base_width=cfg["base_width"],
        levels=cfg["levels"],
        head_scales=tuple(s.strip() for s in cfg["heads"].split(",")),
    )


# --- data helpers -----------------------------------------------------------

def scene_dirs(root) -> List[Path]:
    root = Path(root)
    if (root / "scene.txt").is_file():
        return [root]
    dirs = sorted(p for p in root.iterdir() if (p / "scene.txt").is_file())
    if not dirs:
        raise FileNotFoundError(f"{root}: no scene directories found")
    return dirs


def iter_pairs(root, interval: IntervalSpec):
    """(output stem, ScenePair) for every pair of every scene under ``root``."""
    for d in scene_dirs(root):
        scene = read_scene(d)
        scene.interval = interval
        for t in scene.pair_starts():
            yield f"{d.name}_{t:06d}", scene.pair(t)


def _net_sidecar(path) -> Path:
    return Path(str(path) + ".json")


def save_network(net: MotionNet, path, mode: str, target: str) -> None:
    net.save(path)
    c = net.config
    meta = {
        "in_channels": c.in_channels,
        "base_width": c.base_width,
        "levels": c.levels,
        "heads": ",".join(c.head_scales),
        "mode": mode,
        "target": target,
        "dtype": np.dtype(net.dtype).name,
    }
    _net_sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_network(path) -> Tuple[MotionNet, Dict[str, Any]]:
    side = _net_sidecar(path)
    if not side.is_file():
        raise FileNotFoundError(f"network description {side} not found")
    meta = json.loads(side.read_text())
    config = NetConfig(
        in_channels=meta["in_channels"],
        base_width=meta["base_width"],
        levels=meta["levels"],
        head_scales=tuple(meta["heads"].split(",")),
    )
    net = MotionNet(config, dtype=np.dtype(meta["dtype"]).type)
    net.load(path)
    return net, meta


def flow_predictor_from(cfg):
    if cfg.get("flow_source") != "pred" or "F" not in cfg.get("mode", ""):
        return None
    net, meta = load_network(cfg["flow_checkpoint"])
    if meta["target"] != "flow":
        raise ConfigError(f"flow_checkpoint: {cfg['flow_checkpoint']} is not a lidar-flow network")
    return net_flow_predictor(net)


def assembled(cfg, sensor, interval):
    predictor = flow_predictor_from(cfg)
    out = []
    for stem, pair in iter_pairs(cfg["data"], interval):
        stack, gt = assemble_input(pair, cfg["mode"], sensor, interval, cfg["flow_source"], predictor)
        out.append((stem, stack, gt))
    return out


# --- commands ---------------------------------------------------------------

def cmd_synth(cfg) -> None:
    sensor = sensor_from(cfg)
    interval = interval_from(cfg)
    dist = SceneDistribution(
        min_vehicles=cfg["min_vehicles"],
        max_vehicles=cfg["max_vehicles"],
        moving_prob=cfg["moving_prob"],
        ego_speed_range=(0.0, cfg["ego_speed_max"]),
    )
    rng = np.random.default_rng(cfg["seed"])
    root = Path(cfg["output"])
    root.mkdir(parents=True, exist_ok=True)
    for i in range(cfg["scenes"]):
        spec = random_scene_spec(rng, dist)
        spec = replace(spec, interval=interval)
        pair = synth_scene(spec, seed=int(rng.integers(2**31)), sensor=sensor, name=f"synth{i:04d}")
        write_scene(root / f"scene_{i:04d}", Scene.from_pair(pair))
        log.info("scene %d: %d vehicles", i, len(spec.vehicles))


def cmd_ingest_kitti(cfg) -> None:
    calib = read_kitti_calib(cfg["calib_file"])
    boxes = read_kitti_tracking_labels(cfg["label_file"], calib)
    scans = {}
    for p in sorted(Path(cfg["velodyne_dir"]).glob("*.bin")):
        scans[int(p.stem)] = read_velodyne_bin(p)
    if not scans:
        raise FormatError(f"{cfg['velodyne_dir']}: no .bin files")
    poses = read_pose_file(cfg["pose_file"]) if cfg.get("pose_file") else {}
    scene = Scene(scans=scans, boxes=boxes, poses=poses, interval=interval_from(cfg), calib=calib.camera_calib())
    write_scene(cfg["output"], scene)
    log.info("wrote %d frames", len(scans))


def cmd_project(cfg) -> None:
    sensor = sensor_from(cfg)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    for d in scene_dirs(cfg["data"]):
        scene = read_scene(d)
        for frame in scene.frames():
            write_range_image(out / f"{d.name}_{frame:06d}.lfr", project(scene.scans[frame], sensor))


def cmd_gen_gt(cfg) -> None:
    sensor, interval = sensor_from(cfg), interval_from(cfg)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    for stem, pair in iter_pairs(cfg["data"], interval):
        _, gt = assemble_input(pair, "D", sensor, interval)
        write_motion_map(out / f"{stem}.lfm", gt)


def cmd_gen_flowprior(cfg) -> None:
    sensor, interval = sensor_from(cfg), interval_from(cfg)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    for stem, pair in iter_pairs(cfg["data"], interval):
        if pair.flow is None or pair.calib is None:
            raise PrerequisiteError(f"{stem}: lidar-flow needs a flow image and camera calibration")
        lf = lidar_flow_gt(project(pair.scan_t, sensor), sensor, pair.calib, pair.flow)
        grid = np.moveaxis(lf.flow, 0, -1).copy()
        grid[~lf.valid] = np.nan
        save_flow_image(out / f"{stem}.lfl", FlowImage(grid))


def cmd_assemble(cfg) -> None:
    sensor, interval = sensor_from(cfg), interval_from(cfg)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    for stem, stack, gt in assembled(cfg, sensor, interval):
        save_stack(out / f"{stem}.lfs", stack)
        write_motion_map(out / f"{stem}.lfm", gt)


def cmd_train(cfg) -> None:
    sensor, interval = sensor_from(cfg), interval_from(cfg)
    dtype = np.dtype(cfg["dtype"]).type
    if cfg["target"] == "flow":
        # the lidar-flow network regresses pixel displacements from the D channels
        samples = []
        for _, pair in iter_pairs(cfg["data"], interval):
            x, y = lidar_flow_target(pair, sensor)
            samples.append((x.astype(dtype), y.astype(dtype)))
        flags = None
        mode = "D"
        augment = _flow_flip_augmenter(cfg["flip_prob"])
    else:
        data = assembled(cfg, sensor, interval)
        samples = [(s.tensor.astype(dtype), g.vectors.astype(dtype)) for _, s, g in data]
        flags = [g.has_motion for _, _, g in data]
        mode = cfg["mode"]
        augment = flip_augmenter(mode, cfg["flip_prob"])
    if not samples:
        raise FormatError(f"{cfg['data']}: no frame pairs")
    net = MotionNet(net_config_from(cfg, samples[0][0].shape[0]), seed=cfg["seed"], dtype=dtype)
    schedule = TrainSchedule(
        iterations=cfg["iterations"], lr=cfg["lr"], halve_after=cfg["halve_after"], halve_every=cfg["halve_every"],
        batch_size=cfg["batch_size"], seed=cfg["seed"], flip_prob=cfg["flip_prob"],
    )
    sampler = None
    if cfg["sampler"] == "balanced" and flags is not None:
        index = DatasetIndex([(i, f) for i, f in enumerate(flags)])
        sampler = batch_sampler(index, cfg["seed"])

    def progress(it, loss):
        if it % 50 == 0 or it == schedule.iterations - 1:
            log.info("iteration %d loss %.5f", it, loss)

    train(net, samples, schedule, sampler=sampler, augment=augment, callback=progress)
    out = Path(cfg["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_network(net, out, mode, cfg["target"])


def _flow_flip_augmenter(prob: float):
    """Flip for (lidar, lidar-flow) samples: the flow u component changes sign."""

    def augment(x, y, rng):
        if rng.random() < prob:
            x = x[..., ::-1].copy()
            y = y[..., ::-1].copy()
            y[0] = -y[0]
        return x, y

    return augment


def cmd_eval(cfg) -> None:
    sensor, interval = sensor_from(cfg), interval_from(cfg)
    data = assembled(cfg, sensor, interval)
    if not data:
        raise FormatError(f"{cfg['data']}: no frame pairs")
    gts = [g for _, _, g in data]
    report = evalkit.EvalReport()
    report.add(evalkit.EvalRow("error@zero", *_zero_row(gts)))
    if cfg.get("train_data"):
        mean = evalkit.train_mean([g for _, g in _gt_only(cfg, sensor, interval)])
        full, dyn = evalkit.baseline_mean(gts, mean)
        report.add(evalkit.EvalRow("error@mean", full, dyn, len(gts), sum(int(g.dynamic.sum()) for g in gts)))
    if cfg.get("checkpoint"):
        net, meta = load_network(cfg["checkpoint"])
        if meta["target"] != "motion":
            raise ConfigError(f"checkpoint: {cfg['checkpoint']} is not a motion network")
        if meta["mode"] != cfg["mode"]:
            raise ConfigError(f"mode: checkpoint was trained with mode {meta['mode']}, evaluating {cfg['mode']}")
        report.add(evalkit.evaluate_model(net, [(s, g) for _, s, g in data], cfg["mode"], name=cfg["mode"]))
    text, machine = evalkit.render_report(report)
    out = Path(cfg["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    Path(str(out) + ".txt").write_text(text)
    Path(str(out) + ".json").write_text(machine)
    sys.stdout.write(text)


def _zero_row(gts):
    full, dyn = evalkit.baseline_zero(gts)
    return full, dyn, len(gts), sum(int(g.dynamic.sum()) for g in gts)


def _gt_only(cfg, sensor, interval):
    for _, pair in iter_pairs(cfg["train_data"], interval):
        yield assemble_input(pair, "D", sensor, interval)


def write_ppm(path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def cmd_render(cfg) -> None:
    mm: MotionMap = read_motion_map(cfg["input"])
    write_ppm(cfg["output"], flow_color_encode(mm, cfg["max_magnitude"]))


HANDLERS: Dict[str, Callable[[Dict[str, Any]], None]] = {
    "synth": cmd_synth,
    "ingest-kitti": cmd_ingest_kitti,
    "project": cmd_project,
    "gen-gt": cmd_gen_gt,
    "gen-flowprior": cmd_gen_flowprior,
    "assemble": cmd_assemble,
    "train": cmd_train,
    "eval": cmd_eval,
    "render": cmd_render,
}


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidarmotion", description="Lidar-only vehicle motion estimation.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, (help_text, keys, required) in COMMANDS.items():
        p = sub.add_parser(
            name,
            help=help_text,
            description=f"{help_text}. Config keys may come from --config (JSON) and be overridden by flags.",
        )
        p.add_argument("--config", help="JSON file with config keys", default=None)
        for key in keys:
            spec = SCHEMA[key]
            extra = []
            if spec.choices:
                extra.append("one of " + ", ".join(map(str, spec.choices)))
            if key in required:
                extra.append("required")
            if key not in required and spec.default is not None:
                extra.append(f"default {spec.default}")
            text = spec.help + (f" ({'; '.join(extra)})" if extra else "")
            p.add_argument(f"--{key}", dest=key, default=None, metavar=spec.type.__name__.upper(), help=text)
    return parser


ERROR_CATEGORIES = (
    (ConfigError, "config"),
    (NetConfigError, "config"),
    (PrerequisiteError, "mode prerequisite missing"),
    (CheckpointError, "checkpoint"),
    (FormatError, "format"),
    (FileNotFoundError, "io"),
    (OSError, "io"),
    (ValueError, "invalid"),
)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve_config(args.command, load_config_file(args.config), flags)
        logging.basicConfig(level=logging.INFO if cfg.get("verbose") else logging.WARNING, stream=sys.stderr,
                            format="%(message)s")
        HANDLERS[args.command](cfg)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error line
        for cls, category in ERROR_CATEGORIES:
            if isinstance(exc, cls):
                message = " ".join(str(exc).split())
                print(f"error: {category}: {message}", file=sys.stderr)
                return 2 if category == "config" else 1
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
