import json

import numpy as np
import pytest

from lidarmotion.datapipe import PriorStack
from lidarmotion.evalkit import (
    EpeAccumulator,
    EvalReport,
    EvalRow,
    baseline_mean,
    baseline_rows,
    baseline_zero,
    epe,
    evaluate_model,
    parse_report,
    render_report,
    train_mean,
)
from lidarmotion.motion_gt import MotionMap
from lidarmotion.motion_net import MotionNet, NetConfig


def _map(cells):
    """2x3 map; ``cells`` maps (row, col) to a dynamic (dZ, dX) vector."""
    v = np.zeros((2, 2, 3))
    d = np.zeros((2, 3), bool)
    for (r, c), vec in cells.items():
        v[:, r, c] = vec
        d[r, c] = True
    return MotionMap(v, d)


def test_epe_single_frame():
    gt = _map({(0, 0): (3.0, 4.0)})
    full, dyn = epe(np.zeros((2, 2, 3)), gt)
    assert full == pytest.approx(5.0 / 6) and dyn == pytest.approx(5.0)
    assert epe(gt.vectors, gt) == (0.0, 0.0)
    assert epe(np.zeros((2, 2, 3)), _map({}))[1] is None
    with pytest.raises(ValueError):
        epe(np.zeros((2, 3, 3)), gt)


def test_dataset_aggregates_are_cell_weighted():
    gts = [_map({(0, 0): (3.0, 4.0)}), _map({(0, 0): (1.0, 0.0), (1, 2): (0.0, 1.0)})]
    full, dyn = baseline_zero(gts)
    assert dyn == pytest.approx((5.0 + 1.0 + 1.0) / 3)
    assert full == pytest.approx(7.0 / 12)
    mean = train_mean(gts)
    np.testing.assert_allclose(mean, [4.0 / 3, 5.0 / 3])
    _, dyn_mean = baseline_mean(gts, mean)
    expect = np.mean([np.hypot(3 - 4 / 3, 4 - 5 / 3), np.hypot(1 - 4 / 3, -5 / 3), np.hypot(-4 / 3, 1 - 5 / 3)])
    assert dyn_mean == pytest.approx(expect)


def test_zero_baseline_equals_mean_dynamic_magnitude(rng):
    gts = []
    for _ in range(5):
        v = rng.normal(size=(2, 4, 6))
        d = rng.random((4, 6)) < 0.3
        gts.append(MotionMap(np.where(d, v, 0.0), d))
    mags = np.concatenate([np.hypot(*g.vectors[:, g.dynamic]) for g in gts])
    assert abs(baseline_zero(gts)[1] - mags.mean()) < 1e-12


def test_empty_inputs():
    with pytest.raises(ValueError):
        baseline_zero([])
    with pytest.raises(ValueError):
        EpeAccumulator().result()
    np.testing.assert_array_equal(train_mean([_map({})]), [0.0, 0.0])


def test_report_rendering_round_trip():
    gts = [_map({(0, 0): (3.0, 4.0)}), _map({})]
    report = EvalReport(baseline_rows(gts, (0.5, 0.0)))
    report.add(EvalRow("static only", 0.0, None, 1, 0))
    text, doc = render_report(report)
    lines = text.splitlines()
    assert lines[0].split() == ["name", "full", "dynamic", "frames", "dyn_cells"]
    assert lines[1].split() == ["error@zero", "0.4167", "5.0000", "2", "1"]
    assert lines[3].split()[-3:] == ["-", "1", "0"]
    assert parse_report(doc) == report
    assert json.loads(doc)["rows"][0]["name"] == "error@zero"
    with pytest.raises(KeyError):
        report.row("missing")


def test_negative_errors_rejected():
    with pytest.raises(ValueError):
        EvalRow("x", -1.0, None, 1, 0)


def test_evaluate_model(rng):
    net = MotionNet(NetConfig(in_channels=4, base_width=2, levels=2, head_scales=("1",)), seed=0)
    net.zero_()
    net.forward(np.ones((1, 4, 8, 28)), mode="train")  # populate batch-norm statistics
    data = []
    for _ in range(3):
        v = rng.normal(size=(2, 8, 28))
        d = rng.random((8, 28)) < 0.2
        data.append((PriorStack(rng.normal(size=(4, 8, 28)), "D"), MotionMap(np.where(d, v, 0.0), d)))
    row = evaluate_model(net, data, "D", batch_size=2)
    zero = baseline_zero([g for _, g in data])
    assert (row.name, row.n_frames) == ("D", 3)
    assert row.epe_full == pytest.approx(zero[0]) and row.epe_dynamic == pytest.approx(zero[1])
    with pytest.raises(ValueError, match="mode mismatch"):
        evaluate_model(net, data, "D&F")
    with pytest.raises(ValueError, match="empty"):
        evaluate_model(net, [], "D")
