"""End-to-end acceptance checks, one test per criterion.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints one
PASS/FAIL line per criterion with the measured values.
"""

import math
import time

import numpy as np
import pytest

from gradcases import OP_CASES, tiny_network
from oracles import brute_force_image, clustered_cloud, random_pose, round_trip_errors
from lidarmotion import cli
from lidarmotion.datapipe import (
    MODES,
    DatasetIndex,
    Scene,
    SceneDistribution,
    SceneSpec,
    assemble_input,
    batch_sampler,
    flip_augmenter,
    hflip,
    random_scene_spec,
    read_pose_file,
    read_scene,
    read_velodyne_bin,
    synth_scene,
    write_pose_file,
    write_scene,
    write_velodyne_bin,
)
from lidarmotion.evalkit import baseline_zero, evaluate_model
from lidarmotion.lidar_geom import PointCloud, project
from lidarmotion.motion_gt import EgoPose, motion_vector, relative_transform
from lidarmotion.motion_net import MotionNet, NetConfig, TrainSchedule, train
from lidarmotion.priors import FlowImage, VehiclenessMap, load_flow_image, load_vehicleness, save_flow_image, save_vehicleness
from lidarmotion.tensor_engine import grad_check
from lidarmotion.tensor_engine import checkpoint as ckpt

GRAD_SEEDS = 20


@pytest.mark.criterion(1, "gradient correctness")
def test_gradient_correctness(detail):
    start = time.perf_counter()
    worst = {}
    for name, make in OP_CASES.items():
        for seed in range(GRAD_SEEDS):
            op, inputs = make(np.random.default_rng(seed))
            worst[name] = max(worst.get(name, 0.0), grad_check(op, inputs, seed=1000 + seed))
    for seed in range(GRAD_SEEDS):
        op, params = tiny_network(seed)
        worst["network"] = max(worst.get("network", 0.0), grad_check(op, params, seed=1000 + seed, wrt=params))
    elapsed = time.perf_counter() - start
    name = max(worst, key=worst.get)
    detail(f"{len(worst)} cases x {GRAD_SEEDS} seeds, max rel err {worst[name]:.2e} ({name}), {elapsed:.1f} s")
    assert all(v < 1e-4 for v in worst.values()), worst
    assert elapsed < 120


@pytest.mark.criterion(2, "static invariance of box motion")
def test_static_invariance(detail):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        p_t, p_tn = random_pose(rng), random_pose(rng)
        world = rng.uniform(-100, 100, 2)
        v = motion_vector(p_t.apply_inverse(world), p_tn.apply_inverse(world), relative_transform(p_t, p_tn))
        worst = max(worst, float(np.hypot(*v)))
    detail(f"max |v| over 1000 ego motions {worst:.2e} m")
    assert worst < 1e-9


@pytest.mark.criterion(3, "projection oracle")
def test_projection_oracle(sensor, detail):
    rng = np.random.default_rng(3)
    worst_trip = 0.0
    mismatched = 0
    for _ in range(1000):
        _, trip = round_trip_errors(sensor, rng, 40)
        worst_trip = max(worst_trip, trip)
        pts = clustered_cloud(rng, 150)
        img = project(PointCloud(pts), sensor)
        expect = brute_force_image(pts, sensor)
        ok = img.valid.sum() == len(expect) and all(
            img.valid[c] and img.range[c] == r and img.reflectivity[c] == refl for c, (r, refl) in expect.items()
        )
        mismatched += not ok
    detail(f"worst round trip {worst_trip:.3f} half-pitches, {mismatched}/1000 clouds differ from brute force")
    assert worst_trip <= 1.0
    assert mismatched == 0


@pytest.mark.criterion(4, "dataset identities")
def test_dataset_identities(sensor, detail):
    rng = np.random.default_rng(4)
    gts = []
    channels = {}
    for i in range(12):
        pair = synth_scene(random_scene_spec(rng, SceneDistribution(min_vehicles=1)), seed=i)
        for mode in MODES:
            stack, gt = assemble_input(pair, mode, sensor)
            channels.setdefault(mode, set()).add(stack.channels)
        gts.append(gt)
    mags = np.concatenate([np.hypot(*g.vectors[:, g.dynamic]) for g in gts])
    gap = abs(baseline_zero(gts)[1] - float(mags.mean()))

    flags = [True] * 7 + [False] * 5
    batches = batch_sampler(DatasetIndex([(i, f) for i, f in enumerate(flags)]), seed=4)
    bad = 0
    for _ in range(10_000):
        b = next(batches)
        bad += len(b) != 10 or sum(flags[i] for i in b) != 8 or any(flags[i] for i in b[8:])
    detail(f"error@zero gap {gap:.1e}, channels {dict((m, sorted(c)) for m, c in channels.items())}, {bad} bad batches")
    assert gap < 1e-12
    assert {m: c for m, c in channels.items()} == {"D": {4}, "D&F": {6}, "D&F&S": {8}, "D&F&S&O": {11}}
    assert bad == 0


# --- training criteria -------------------------------------------------------

OVERFIT_PAIRS = 10
OVERFIT_SCHEDULE = TrainSchedule(iterations=2000, lr=3e-3, halve_after=1500, halve_every=150, batch_size=10)


def overfit_set(sensor):
    rng = np.random.default_rng(1)
    samples, maps = [], []
    for i in range(OVERFIT_PAIRS):
        spec = random_scene_spec(rng, SceneDistribution(min_vehicles=1))
        stack, gt = assemble_input(synth_scene(spec, seed=i), "D", sensor)
        samples.append((stack.tensor.astype(np.float32), gt.vectors.astype(np.float32)))
        maps.append(gt)
    return samples, maps


def dynamic_epe(pred, maps):
    return float(np.concatenate([np.hypot(*(p - m.vectors))[m.dynamic] for p, m in zip(pred, maps)]).mean())


@pytest.mark.criterion(5, "overfit demonstration")
def test_overfit(sensor, detail):
    samples, maps = overfit_set(sensor)
    zero = baseline_zero(maps)[1]
    net = MotionNet(NetConfig(in_channels=4, base_width=8), seed=0, dtype=np.float32)
    start = time.perf_counter()
    curve = train(net, samples, OVERFIT_SCHEDULE)
    elapsed = time.perf_counter() - start
    dyn = dynamic_epe(net.predict(np.stack([x for x, _ in samples])), maps)
    windows = [float(np.mean(curve[i:i + 200])) for i in range(0, len(curve), 200)]
    detail(f"dynamic EPE {dyn:.4f} vs error@zero {zero:.4f} ({100 * dyn / zero:.1f}%), {elapsed / 60:.1f} min")
    assert all(b <= a for a, b in zip(windows, windows[1:])), windows
    assert dyn < 0.1 * zero
    assert elapsed < 15 * 60


PRIOR_TRAIN_PAIRS = 200
PRIOR_TEST_PAIRS = 50
PRIOR_SCHEDULE = TrainSchedule(iterations=1500, lr=1e-3, halve_after=1000, halve_every=250, batch_size=10, seed=6)


def prior_sets(sensor):
    def build(seed, count):
        rng = np.random.default_rng(seed)
        out = {"D": [], "D&F": []}
        for i in range(count):
            pair = synth_scene(random_scene_spec(rng), seed=seed * 100_000 + i)
            for mode in out:
                out[mode].append(assemble_input(pair, mode, sensor))
        return out

    return build(61, PRIOR_TRAIN_PAIRS), build(62, PRIOR_TEST_PAIRS)


@pytest.mark.criterion(6, "prior-benefit trend")
def test_prior_benefit(sensor, detail):
    train_sets, test_sets = prior_sets(sensor)
    results = {}
    for mode in ("D", "D&F"):
        data = train_sets[mode]
        samples = [(s.tensor.astype(np.float32), g.vectors.astype(np.float32)) for s, g in data]
        index = DatasetIndex.from_motion_maps([g for _, g in data])
        net = MotionNet(NetConfig(in_channels=MODES[mode], base_width=8), seed=0, dtype=np.float32)
        train(net, samples, PRIOR_SCHEDULE, sampler=batch_sampler(index, PRIOR_SCHEDULE.seed),
              augment=flip_augmenter(mode, PRIOR_SCHEDULE.flip_prob))
        results[mode] = evaluate_model(net, test_sets[mode], mode).epe_dynamic
    zero = baseline_zero([g for _, g in test_sets["D"]])[1]
    ordering = "holds" if results["D&F"] <= results["D"] else "does not hold"
    detail(
        f"held-out dynamic EPE D {results['D']:.4f}, D&GT.F {results['D&F']:.4f}, error@zero {zero:.4f}; "
        f"D&GT.F <= D {ordering}"
    )
    for mode, dyn in results.items():
        assert dyn <= 0.7 * zero, f"{mode}: {dyn:.4f} vs error@zero {zero:.4f}"


# --- determinism, formats, flips ---------------------------------------------

@pytest.mark.criterion(7, "determinism")
def test_determinism(tmp_path, detail):
    outputs = []
    for run in ("a", "b"):
        root = tmp_path / run
        steps = [
            ["synth", "--output", root / "scenes", "--scenes", "4", "--seed", "7", "--min_vehicles", "1"],
            ["train", "--data", root / "scenes", "--output", root / "net.ckpt", "--iterations", "15",
             "--base_width", "4", "--sampler", "uniform", "--seed", "7"],
            ["eval", "--data", root / "scenes", "--train_data", root / "scenes", "--checkpoint", root / "net.ckpt",
             "--output", root / "report"],
            ["gen-gt", "--data", root / "scenes", "--output", root / "gt"],
            ["render", "--input", root / "gt" / "scene_0000_000000.lfm", "--output", root / "motion.ppm"],
        ]
        for argv in steps:
            assert cli.main([str(a) for a in argv]) == 0, argv
        outputs.append({name: (root / name).read_bytes() for name in ("net.ckpt", "report.json", "report.txt", "motion.ppm")})
    same = [name for name in outputs[0] if outputs[0][name] == outputs[1][name]]
    detail(f"byte-identical: {', '.join(same)}")
    assert len(same) == len(outputs[0])


def _exact(a, b):
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


@pytest.mark.criterion(8, "format round trips")
def test_format_round_trips(tmp_path, detail):
    rng = np.random.default_rng(8)
    counts = dict.fromkeys(("velodyne", "LFL1", "VEH1", "checkpoint", "pose", "scene"), 0)
    for i in range(30):
        # velodyne: random float32 quadruples must survive read + write unchanged
        raw = rng.normal(0, 30, (int(rng.integers(0, 500)), 4)).astype("<f4")
        raw[:, 3] = rng.uniform(0, 1, len(raw))
        p = tmp_path / f"{i}.bin"
        p.write_bytes(raw.tobytes())
        write_velodyne_bin(tmp_path / f"{i}b.bin", read_velodyne_bin(p))
        counts["velodyne"] += (tmp_path / f"{i}b.bin").read_bytes() == raw.tobytes()

        h, w = (int(v) for v in rng.integers(1, 40, 2))
        flow = rng.normal(0, 5, (h, w, 2)).astype(np.float32).astype(np.float64)
        flow[rng.random((h, w)) < 0.2] = np.nan
        save_flow_image(tmp_path / "f.lfl", FlowImage(flow))
        back = load_flow_image(tmp_path / "f.lfl").flow
        counts["LFL1"] += _exact(np.isnan(back), np.isnan(flow)) and _exact(np.nan_to_num(back), np.nan_to_num(flow))

        prob = rng.uniform(0, 1, (h, w)).astype(np.float32).astype(np.float64)
        save_vehicleness(tmp_path / "v.veh", VehiclenessMap(prob))
        counts["VEH1"] += _exact(load_vehicleness(tmp_path / "v.veh", (h, w)).prob, prob)

        entries = []
        for k in range(int(rng.integers(1, 6))):
            shape = tuple(int(s) for s in rng.integers(1, 4, int(rng.integers(1, 5))))
            entries.append(ckpt.CheckpointEntry(f"layer{k}.w", rng.normal(size=shape), rng.normal(size=shape), rng.random(shape)))
        data = ckpt.dumps(entries)
        loaded = ckpt.loads(data)
        counts["checkpoint"] += ckpt.dumps(loaded) == data and all(
            a.name == b.name and _exact(a.values, b.values) and _exact(a.m, b.m) and _exact(a.v, b.v)
            for a, b in zip(entries, loaded)
        )

        poses = {int(f): EgoPose(*rng.normal(0, 50, 2), float(rng.uniform(-math.pi, math.pi)))
                 for f in rng.choice(1000, 5, replace=False)}
        write_pose_file(tmp_path / "p.txt", poses)
        counts["pose"] += read_pose_file(tmp_path / "p.txt") == poses

        spec = random_scene_spec(rng)
        spec = SceneSpec(spec.vehicles, spec.ego_motion, pose_t=tuple(rng.normal(0, 10, 3)), with_flow=bool(i % 2))
        pair = synth_scene(spec, seed=i, name=f"scene{i}")
        scene = Scene.from_pair(pair)
        if i % 3 == 0:
            scene.vehicleness[0] = VehiclenessMap(rng.uniform(0, 1, (64, 448)).astype(np.float32).astype(np.float64))
        write_scene(tmp_path / f"s{i}", scene)
        again = read_scene(tmp_path / f"s{i}")
        write_scene(tmp_path / f"t{i}", again)
        files = sorted(f.relative_to(tmp_path / f"s{i}") for f in (tmp_path / f"s{i}").rglob("*") if f.is_file())
        same_files = files == sorted(f.relative_to(tmp_path / f"t{i}") for f in (tmp_path / f"t{i}").rglob("*") if f.is_file())
        same_bytes = same_files and all((tmp_path / f"s{i}" / f).read_bytes() == (tmp_path / f"t{i}" / f).read_bytes() for f in files)
        # frames without boxes have no records on disk
        boxes = {f: b for f, b in scene.boxes.items() if b}
        same_data = again.boxes == boxes and again.poses == scene.poses and again.calib == scene.calib
        counts["scene"] += same_bytes and same_data
    detail(", ".join(f"{k} {v}/30" for k, v in counts.items()))
    assert all(v == 30 for v in counts.values()), counts


@pytest.mark.criterion(9, "hflip physical consistency")
def test_hflip_consistency(sensor, detail):
    rng = np.random.default_rng(9)
    matched = total = 0
    for i in range(8):
        spec = random_scene_spec(rng, SceneDistribution(min_vehicles=1))
        spec = SceneSpec(spec.vehicles, ego_motion=(float(rng.normal(0, 0.2)), spec.ego_motion[1], spec.ego_motion[2]),
                         pose_t=(0.0, 0.0, 0.0))
        original = synth_scene(spec, seed=i)
        mirrored = synth_scene(spec.mirrored(), seed=i)
        for mode in MODES:
            flipped, fgt = hflip(*assemble_input(original, mode, sensor))
            direct, dgt = assemble_input(mirrored, mode, sensor)
            valid = direct.tensor[0] > 0
            close = np.all(np.isclose(flipped.tensor, direct.tensor, rtol=1e-6, atol=1e-6), axis=0)
            close &= np.all(np.isclose(fgt.vectors, dgt.vectors, atol=1e-9), axis=0) & (fgt.dynamic == dgt.dynamic)
            matched += int(close[valid].sum())
            total += int(valid.sum())
    share = matched / total
    detail(f"{100 * share:.3f}% of {total} valid cells match")
    assert share >= 0.99
