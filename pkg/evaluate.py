# evaluate.py
"""Accuracy metrics, velocity profiles and point clouds."""
import csv
import io

import numpy as np

from errors import DegenerateGeometryError, InvalidArgumentError, ShapeMismatchError
from models import Rig

RANK_TOL = 1e-9


def depth_to_points(depth, rig, mask=None):
    """Back-project a depth map (mm) to camera-frame points, one row per valid pixel"""
    depth = np.asarray(depth, dtype=np.float64)
    rows, cols = np.indices(depth.shape)
    keep = np.isfinite(depth)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    cy = (depth.shape[0] - 1) / 2.0
    cx = (depth.shape[1] - 1) / 2.0
    z = depth[keep]
    x = (cols[keep] - cx) * z / rig.focal_px
    y = (rows[keep] - cy) * z / rig.focal_px
    return np.column_stack([x, y, z])


def fit_plane(points):
    """Orthogonal-regression plane: (centroid, unit normal)"""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise InvalidArgumentError(f'Points must be an (N, 3) array, got {points.shape}')
    if len(points) < 3:
        raise DegenerateGeometryError(f'A plane needs at least 3 points, got {len(points)}')
    centroid = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - centroid, full_matrices=False)
    if s[1] <= RANK_TOL * max(s[0], 1.0):
        raise DegenerateGeometryError('Points are collinear')
    return centroid, vt[2]


def fit_plane_rmse(data, mask=None, rig=None):
    """RMSE (mm) of orthogonal residuals to the best-fit plane.

    data is an (N, 3) point cloud, or a depth map when a mask or rig is
    given or its shape is not (N, 3).
    """
    data = np.asarray(data, dtype=np.float64)
    if mask is None and rig is None and data.ndim == 2 and data.shape[1] == 3:
        points = data
    else:
        if mask is not None and np.shape(mask) != data.shape:
            raise ShapeMismatchError(f'Mask is {np.shape(mask)}, depth map is {data.shape}')
        points = depth_to_points(data, rig or Rig(cam_width=data.shape[1], cam_height=data.shape[0]),
                                 mask)
    centroid, normal = fit_plane(points)
    residuals = (points - centroid) @ normal
    return float(np.sqrt(np.mean(residuals ** 2)))


def depth_rmse(est, truth, mask=None):
    """RMSE (mm) over pixels finite in both maps and inside the mask"""
    est = np.asarray(est, dtype=np.float64)
    truth = np.broadcast_to(np.asarray(truth, dtype=np.float64), est.shape)
    keep = np.isfinite(est) & np.isfinite(truth)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    if not keep.any():
        raise InvalidArgumentError('No valid pixels to compare')
    return float(np.sqrt(np.mean((est[keep] - truth[keep]) ** 2)))


def fit_line(values):
    """Least-squares line through (n, values[n]): slope, intercept, r^2"""
    y = np.asarray(values, dtype=np.float64)
    if len(y) < 2:
        raise DegenerateGeometryError('A line needs at least 2 values')
    x = np.arange(len(y), dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def velocity_profile(sequence, region):
    """Mean velocity per interval over region (row0, row1, col0, col1)"""
    height, width = sequence.valid.shape
    r0, r1, c0, c1 = region
    if not (0 <= r0 <= r1 <= height and 0 <= c0 <= c1 <= width):
        raise InvalidArgumentError(f'Region {region} outside a {width}x{height} image')
    if r0 == r1 or c0 == c1:
        raise InvalidArgumentError(f'Region {region} is empty')
    keep = sequence.valid[r0:r1, c0:c1]
    if not keep.any():
        raise InvalidArgumentError(f'Region {region} holds no valid pixels')
    rows = []
    for n, v in enumerate(sequence.velocities):
        values = np.asarray(v)[r0:r1, c0:c1][keep]
        rows.append((n + 1, sequence.timestamps[n], sequence.durations[n], float(values.mean()),
                     int(keep.sum())))
    return rows


def export_velocity_profile(sequence, region, path=None):
    """CSV of velocity_profile(); written to path when given"""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(['interval', 't_start_s', 'duration_s', 'mean_velocity_mm_s', 'pixels'])
    for n, t, dt, v, count in velocity_profile(sequence, region):
        writer.writerow([n, f'{t:.6f}', f'{dt:.6f}', f'{v:.6f}', count])
    text = buf.getvalue()
    if path:
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
    return text


def write_ply(path, points):
    """ASCII PLY point cloud"""
    points = np.asarray(points, dtype=np.float64)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write('ply\nformat ascii 1.0\n')
        f.write(f'element vertex {len(points)}\n')
        f.write('property float x\nproperty float y\nproperty float z\nend_header\n')
        for x, y, z in points:
            f.write(f'{x:.4f} {y:.4f} {z:.4f}\n')
    return path
