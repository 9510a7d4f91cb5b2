import numpy as np
import pytest

from errors import DegenerateGeometryError, InvalidArgumentError, ShapeMismatchError
from evaluate import (depth_rmse, depth_to_points, export_velocity_profile, fit_line, fit_plane,
                      fit_plane_rmse, velocity_profile, write_ply)
from models import Rig, ShapeSequence


def test_points_are_centred_on_the_principal_point():
    rig = Rig(cam_width=3, cam_height=3, focal_px=1200.0)
    points = depth_to_points(np.full((3, 3), 1200.0), rig)
    assert points.shape == (9, 3)
    assert np.allclose(points[4], [0.0, 0.0, 1200.0])
    assert np.allclose(points[0], [-1.0, -1.0, 1200.0])


def test_points_skip_invalid_pixels():
    depth = np.full((4, 4), 600.0)
    depth[0, 0] = np.nan
    mask = np.ones((4, 4), dtype=bool)
    mask[3, 3] = False
    assert len(depth_to_points(depth, Rig(cam_width=4, cam_height=4), mask)) == 14


def test_fit_plane_recovers_tilted_plane(rng):
    xy = rng.uniform(-50, 50, size=(200, 2))
    z = 600.0 + 0.2 * xy[:, 0] - 0.1 * xy[:, 1]
    points = np.column_stack([xy, z])
    centroid, normal = fit_plane(points)
    expected = np.array([0.2, -0.1, -1.0]) / np.linalg.norm([0.2, -0.1, -1.0])
    assert abs(float(normal @ expected)) == pytest.approx(1.0)
    assert fit_plane_rmse(points) == pytest.approx(0.0, abs=1e-9)


def test_plane_rmse_matches_noise_level(rng):
    depth = 600.0 + rng.normal(0.0, 0.1, size=(60, 80))
    assert fit_plane_rmse(depth, rig=Rig(cam_width=80, cam_height=60)) == pytest.approx(0.1, rel=0.1)


@pytest.mark.parametrize('points', [
    np.zeros((2, 3)),
    np.column_stack([np.arange(5.0), 2 * np.arange(5.0), np.full(5, 600.0)]),
])
def test_degenerate_planes(points):
    with pytest.raises(DegenerateGeometryError):
        fit_plane(points)


def test_plane_mask_shape():
    with pytest.raises(ShapeMismatchError):
        fit_plane_rmse(np.full((4, 4), 600.0), mask=np.ones((3, 3), dtype=bool))


def test_depth_rmse():
    est = np.array([[600.0, 602.0], [np.nan, 601.0]])
    assert depth_rmse(est, 601.0) == pytest.approx(np.sqrt(2 / 3))
    assert depth_rmse(est, 601.0, mask=np.array([[False, False], [True, True]])) == 0.0
    with pytest.raises(InvalidArgumentError):
        depth_rmse(est, 601.0, mask=np.zeros((2, 2), dtype=bool))


def test_fit_line():
    slope, intercept, r2 = fit_line([1.0, 3.0, 5.0, 7.0])
    assert (slope, intercept, r2) == pytest.approx((2.0, 1.0, 1.0))
    assert fit_line([4.0, 4.0])[2] == 1.0
    with pytest.raises(DegenerateGeometryError):
        fit_line([1.0])


def _sequence():
    valid = np.ones((6, 6), dtype=bool)
    valid[0, 0] = False
    velocities = [np.full((6, 6), v) for v in (0.0, 6.0, 12.0)]
    velocities[1][0, 0] = 100.0
    return ShapeSequence(frames=[np.zeros((6, 6))] * 3, velocities=velocities, durations=[0.1, 0.1, 0.05],
                         valid=valid)


def test_velocity_profile_ignores_invalid_pixels():
    rows = velocity_profile(_sequence(), (0, 3, 0, 3))
    assert [r[0] for r in rows] == [1, 2, 3]
    assert [r[3] for r in rows] == pytest.approx([0.0, 6.0, 12.0])
    assert rows[2][1] == pytest.approx(0.2)
    assert rows[0][4] == 8


@pytest.mark.parametrize('region', [(0, 7, 0, 3), (2, 2, 0, 3), (0, 1, 0, 1)])
def test_velocity_profile_bad_regions(region):
    with pytest.raises(InvalidArgumentError):
        velocity_profile(_sequence(), region)


def test_export_velocity_profile(tmp_path):
    path = tmp_path / 'profile.csv'
    text = export_velocity_profile(_sequence(), (1, 6, 1, 6), str(path))
    lines = text.splitlines()
    assert lines[0] == 'interval,t_start_s,duration_s,mean_velocity_mm_s,pixels'
    assert lines[2] == '2,0.100000,0.100000,6.000000,25'
    assert path.read_text() == text


def test_write_ply(tmp_path):
    path = tmp_path / 'cloud.ply'
    write_ply(str(path), np.array([[1.0, 2.0, 600.0], [0.0, 0.0, 601.5]]))
    lines = path.read_text().splitlines()
    assert lines[0] == 'ply'
    assert 'element vertex 2' in lines
    assert lines[-1] == '0.0000 0.0000 601.5000'
