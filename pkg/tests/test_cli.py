import json
import math
import struct

import numpy as np
import pytest

from lidarmotion import cli
from lidarmotion.datapipe import read_motion_map, read_scene


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    assert cli.main(["synth", "--output", str(root), "--scenes", "3", "--min_vehicles", "1", "--seed", "4"]) == 0
    return root


@pytest.mark.parametrize("command", list(cli.COMMANDS))
def test_help_documents_every_key(capsys, command):
    with pytest.raises(SystemExit) as exc:
        cli.main([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for key in cli.COMMANDS[command][1]:
        assert f"--{key}" in text


def test_schema_covers_command_keys():
    for _, keys, required in cli.COMMANDS.values():
        assert set(required) <= set(keys) <= set(cli.SCHEMA)


def test_config_errors_listed_together(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1, "lr": "fast", "mode": "Q"}))
    code, _, err = run(capsys, "train", "--config", cfg, "--iterations", "0")
    assert code == 2
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error: config: ")
    for fragment in ("unknown key 'bogus'", "lr: cannot parse", "mode: 'Q'", "iterations: must be >= 1", "data: required"):
        assert fragment in lines[0]


def test_flags_override_config(tmp_path):
    cfg = cli.resolve_config("render", {"max_magnitude": 3.0, "input": str(tmp_path)}, {"max_magnitude": "5", "output": "x"})
    assert cfg["max_magnitude"] == 5.0
    with pytest.raises(cli.ConfigError, match="invalid JSON"):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        cli.load_config_file(bad)


def test_pipeline_outputs(capsys, scenes, tmp_path):
    assert run(capsys, "project", "--data", scenes, "--output", tmp_path / "ri")[0] == 0
    assert len(list((tmp_path / "ri").glob("*.lfr"))) == 6
    assert run(capsys, "gen-gt", "--data", scenes, "--output", tmp_path / "gt")[0] == 0
    maps = sorted((tmp_path / "gt").glob("*.lfm"))
    assert len(maps) == 3 and all(read_motion_map(p).has_motion for p in maps)
    assert run(capsys, "gen-flowprior", "--data", scenes, "--output", tmp_path / "fp")[0] == 0
    assert len(list((tmp_path / "fp").glob("*.lfl"))) == 3
    assert run(capsys, "assemble", "--data", scenes, "--output", tmp_path / "st", "--mode", "D&F&S&O")[0] == 0
    assert len(list((tmp_path / "st").glob("*.lfs"))) == 3


def test_render_ppm(capsys, scenes, tmp_path):
    run(capsys, "gen-gt", "--data", scenes, "--output", tmp_path / "gt")
    lfm = sorted((tmp_path / "gt").glob("*.lfm"))[0]
    assert run(capsys, "render", "--input", lfm, "--output", tmp_path / "a.ppm")[0] == 0
    raw = (tmp_path / "a.ppm").read_bytes()
    header = b"P6\n448 64\n255\n"
    assert raw.startswith(header) and len(raw) == len(header) + 448 * 64 * 3
    run(capsys, "render", "--input", lfm, "--output", tmp_path / "b.ppm")
    assert (tmp_path / "b.ppm").read_bytes() == raw


def _train(capsys, scenes, out, *extra):
    args = ["train", "--data", scenes, "--output", out, "--iterations", "3", "--base_width", "2", "--sampler", "uniform"]
    code, _, err = run(capsys, *args, *extra)
    assert code == 0, err


def test_train_and_eval_are_deterministic(capsys, scenes, tmp_path):
    _train(capsys, scenes, tmp_path / "a.ckpt")
    _train(capsys, scenes, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert json.loads((tmp_path / "a.ckpt.json").read_text())["mode"] == "D"
    reports = []
    for name in ("r1", "r2"):
        code, out, _ = run(capsys, "eval", "--data", scenes, "--train_data", scenes, "--checkpoint", tmp_path / "a.ckpt",
                           "--output", tmp_path / name)
        assert code == 0
        reports.append((tmp_path / f"{name}.json").read_bytes())
    assert reports[0] == reports[1]
    rows = [r["name"] for r in json.loads(reports[0])["rows"]]
    assert rows == ["error@zero", "error@mean", "D"]
    assert out.splitlines()[0].split()[0] == "name"


def test_eval_mode_mismatch(capsys, scenes, tmp_path):
    _train(capsys, scenes, tmp_path / "a.ckpt")
    code, _, err = run(capsys, "eval", "--data", scenes, "--checkpoint", tmp_path / "a.ckpt", "--mode", "D&F", "--output", tmp_path / "r")
    assert code == 2 and "trained with mode D" in err


def test_predicted_flow_pipeline(capsys, scenes, tmp_path):
    _train(capsys, scenes, tmp_path / "flow.ckpt", "--target", "flow")
    _train(capsys, scenes, tmp_path / "m.ckpt", "--mode", "D&F", "--flow_source", "pred", "--flow_checkpoint", tmp_path / "flow.ckpt")
    code, _, err = run(capsys, "eval", "--data", scenes, "--checkpoint", tmp_path / "m.ckpt", "--mode", "D&F",
                       "--flow_source", "pred", "--flow_checkpoint", tmp_path / "m.ckpt", "--output", tmp_path / "r")
    assert code == 2 and "not a lidar-flow network" in err


def test_missing_odometry_is_a_prerequisite_error(capsys, scenes, tmp_path):
    import shutil

    data = tmp_path / "data"
    shutil.copytree(scenes, data)
    (data / "scene_0001" / "poses.txt").unlink()
    code, _, err = run(capsys, "eval", "--data", data, "--mode", "D&F&S&O", "--output", tmp_path / "r")
    assert code != 0
    assert err.startswith("error: mode prerequisite missing: ") and len(err.strip().splitlines()) == 1


def test_balanced_sampler_needs_static_frames(capsys, scenes, tmp_path):
    code, _, err = run(capsys, "train", "--data", scenes, "--output", tmp_path / "x", "--iterations", "1", "--base_width", "2")
    assert code == 1 and "no static frames" in err


def test_synth_is_deterministic(capsys, tmp_path):
    for name in ("a", "b"):
        run(capsys, "synth", "--output", tmp_path / name, "--scenes", "2", "--seed", "9")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_ingest_kitti(capsys, tmp_path):
    velo = tmp_path / "velodyne"
    velo.mkdir()
    for frame in (0, 1):
        (velo / f"{frame:06d}.bin").write_bytes(struct.pack("<8f", 10.0, 0.0, -1.0, 0.3, 20.0, 3.0, -1.0, 0.5))
    (tmp_path / "calib.txt").write_text(
        "P2: 700 0 600 0 0 700 180 0 0 0 1 0\nR_rect 1 0 0 0 1 0 0 0 1\nTr_velo_cam 0 -1 0 0 0 0 -1 0 1 0 0 0\n"
    )
    labels = [
        f"{f} 1 Car 0 0 0 0 0 10 10 1.5 1.6 4.0 2.0 1.65 {20.0 + f} {-math.pi / 2}" for f in (0, 1)
    ] + ["0 -1 DontCare -1 -1 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10"]
    (tmp_path / "labels.txt").write_text("\n".join(labels) + "\n")
    (tmp_path / "poses.txt").write_text("0 0 0 0\n1 0 0.5 0\n")
    code, _, err = run(capsys, "ingest-kitti", "--velodyne_dir", velo, "--label_file", tmp_path / "labels.txt",
                       "--calib_file", tmp_path / "calib.txt", "--pose_file", tmp_path / "poses.txt", "--output", tmp_path / "scene")
    assert code == 0, err
    scene = read_scene(tmp_path / "scene")
    pair = scene.pair(0)
    (motion,) = pair.box_motions()
    # labels are per-frame sensor coordinates: the car gains 1 m on an ego that advanced 0.5 m
    np.testing.assert_allclose(motion, [1.5, 0.0], atol=1e-9)


def test_unreadable_scan_is_a_format_error(capsys, tmp_path, scenes):
    import shutil

    data = tmp_path / "data"
    shutil.copytree(scenes / "scene_0000", data)
    (data / "velodyne" / "000000.bin").write_bytes(b"\0" * 17)
    code, _, err = run(capsys, "gen-gt", "--data", data, "--output", tmp_path / "gt")
    assert code == 1 and err.startswith("error: format: ")
