import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarmotion.lidar_geom import (
    PointCloud,
    RangeImage,
    SensorModel,
    project,
    to_cloud,
    unproject,
)
from oracles import brute_force_image, clustered_cloud, point_at, round_trip_errors



def test_sensor_defaults(sensor):
    assert sensor.shape == (64, 448)
    assert sensor.vertical_angles[0] == pytest.approx(2.0)
    assert sensor.vertical_angles[-1] == pytest.approx(-24.8)
    assert sensor.col_pitch == pytest.approx(81.0 / 448)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_rows=3, vertical_angles=(1.0, 0.0)),
        dict(azimuth_min=10.0, azimuth_max=-10.0),
        dict(n_rows=3, vertical_angles=(0.0, 1.0, 2.0)),
    ],
)
def test_sensor_invariants(kwargs):
    with pytest.raises(ValueError):
        SensorModel(**kwargs)


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, 0.0, 1.0, 1.5]]))
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.nan, 0.0, 1.0, 0.5]]))
    assert len(PointCloud.empty()) == 0


def test_range_image_invariants():
    r = np.zeros((2, 2))
    with pytest.raises(ValueError):
        RangeImage(r + 1.0, r, np.zeros((2, 2), bool))
    with pytest.raises(ValueError):
        RangeImage(r, r, np.ones((2, 2), bool))


def test_project_single_point_at_row_10_azimuth_zero(sensor):
    el = math.radians(sensor.vertical_angles[10])
    p = 10.0 * np.array([0.0, math.sin(el), math.cos(el)])
    img = project(PointCloud(np.array([[*p, 0.5]])), sensor)
    assert img.valid.sum() == 1
    assert img.valid[10, 224]
    assert img.range[10, 224] == pytest.approx(10.0, abs=1e-12)
    assert img.reflectivity[10, 224] == 0.5


def test_project_empty_cloud(sensor):
    img = project(PointCloud.empty(), sensor)
    assert not img.valid.any()
    assert not img.range.any()


def test_collision_nearest_wins(sensor):
    a = point_at(sensor, 20, 100, 9.0, 0.1, 0.1)
    b = point_at(sensor, 20, 100, 5.0, -0.1, -0.2)
    img = project(PointCloud(np.array([[*a, 0.9], [*b, 0.1]])), sensor)
    assert img.valid.sum() == 1
    assert img.range[20, 100] == pytest.approx(5.0)
    assert img.reflectivity[20, 100] == 0.1


def test_collision_tie_goes_to_first_point(sensor):
    a = point_at(sensor, 5, 5, 7.0)
    img = project(PointCloud(np.array([[*a, 0.3], [*a, 0.8]])), sensor)
    assert img.reflectivity[5, 5] == 0.3


def test_fov_soundness(sensor):
    outside = [
        point_at(sensor, 30, 0, 10.0, 0.0, -0.6),   # left of the first column
        point_at(sensor, 30, 447, 10.0, 0.0, 0.6),  # right of the last column
        point_at(sensor, 0, 100, 10.0, 0.6, 0.0),  # above the top laser
        point_at(sensor, 63, 100, 10.0, -0.6, 0.0),  # below the bottom laser
        np.array([0.0, 0.0, -10.0]),                # behind the sensor
    ]
    img = project(PointCloud(np.column_stack([np.array(outside), np.full(5, 0.5)])), sensor)
    assert not img.valid.any()


def test_row_boundaries_are_midpoints(sensor):
    img = project(PointCloud(np.array([[*point_at(sensor, 12, 50, 8.0, -0.49), 0.5],
                                       [*point_at(sensor, 40, 50, 8.0, 0.49), 0.5]])), sensor)
    assert img.valid[12, 50] and img.valid[40, 50]


def test_unproject_cell(sensor):
    el = math.radians(sensor.vertical_angles[10])
    p = 10.0 * np.array([0.0, math.sin(el), math.cos(el)])
    img = project(PointCloud(np.array([[*p, 0.5]])), sensor)
    q = unproject(img, sensor, 10, 224)
    assert np.linalg.norm(q) == 10.0
    assert unproject(img, sensor, 0, 0) is None
    with pytest.raises(IndexError):
        unproject(img, sensor, 64, 0)



def test_round_trip_within_quantization(sensor, rng):
    img, worst = round_trip_errors(sensor, rng, 200)
    assert img.valid.sum() == 200
    assert worst <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_collision_matches_brute_force(seed):
    sensor = SensorModel()
    rng = np.random.default_rng(seed)
    pts = clustered_cloud(rng)
    img = project(PointCloud(pts), sensor)
    expect = brute_force_image(pts, sensor)
    assert img.valid.sum() == len(expect)
    for (r, c), (rng_min, refl) in expect.items():
        assert img.range[r, c] == rng_min
        assert img.reflectivity[r, c] == refl


def test_to_cloud_reprojects_identically(sensor, rng):
    img, _ = round_trip_errors(sensor, rng, 500)
    again = project(to_cloud(img, sensor), sensor)
    np.testing.assert_array_equal(again.valid, img.valid)
    np.testing.assert_allclose(again.range, img.range, rtol=1e-12)
