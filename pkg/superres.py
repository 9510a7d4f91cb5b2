# superres.py
"""N_p depth frames from one capture.

Frame n is the surface at the start of pattern interval n: frame 1 is the
refined start depth and each later frame adds v_n times the interval's
duration. The reverse pass anchors at the end of the exposure and
accumulates backwards; the two are averaged frame by frame.
"""
import json
import logging
import os

import numpy as np

from config import Config
from errors import CorruptDatabaseError, InvalidArgumentError, ShapeMismatchError
from evaluate import depth_to_points, write_ply
from models import ShapeSequence
from pnm import read_pfm, write_pfm
from search_coarse import default_v_step, estimate_initial, make_grid
from search_fine import refine
from synth import interval_steps

logger = logging.getLogger(__name__)


def _check_maps(d, velocities, sched):
    d = np.asarray(d, dtype=np.float64)
    if len(velocities) != sched.n_p:
        raise ShapeMismatchError(f'{len(velocities)} velocity maps for {sched.n_p} intervals')
    for v in velocities:
        if np.ndim(v) and np.shape(v) != d.shape:
            raise ShapeMismatchError(f'Velocity map is {np.shape(v)}, depth map is {d.shape}')
    maps = [np.broadcast_to(np.asarray(v, dtype=np.float64), d.shape) for v in velocities]
    return d, maps


def accumulate(d0, velocities, sched):
    """Forward frames from the start depth"""
    d0, maps = _check_maps(d0, velocities, sched)
    durations = sched.interval_durations()
    frames = [d0.copy()]
    for n in range(1, sched.n_p):
        frames.append(frames[-1] + maps[n - 1] * durations[n - 1])
    valid = np.isfinite(d0)
    for v in maps:
        valid = valid & np.isfinite(v)
    return ShapeSequence(frames=frames, velocities=[m.copy() for m in maps],
                         durations=[float(t) for t in durations], valid=valid)


def reverse_accumulate(d_end, velocities, sched):
    """Frames accumulated backwards from the depth at the end of the exposure"""
    d_end, maps = _check_maps(d_end, velocities, sched)
    durations = sched.interval_durations()
    frames = [None] * sched.n_p
    boundary = d_end
    for n in range(sched.n_p - 1, -1, -1):
        boundary = boundary - maps[n] * durations[n]
        frames[n] = boundary
    valid = np.isfinite(d_end)
    for v in maps:
        valid = valid & np.isfinite(v)
    return ShapeSequence(frames=frames, velocities=[m.copy() for m in maps],
                         durations=[float(t) for t in durations], valid=valid)


def end_depth(db, sched, d0, velocities):
    """Depth where the winning hypothesis ends, on the database grid"""
    d0, maps = _check_maps(d0, velocities, sched)
    ok = np.isfinite(d0)
    for v in maps:
        ok &= np.isfinite(v)
    safe = [np.where(ok, v, 0.0) for v in maps]
    start = db.index_of(np.where(ok, d0, db.d_min_mm))
    total = start + sum(interval_steps(sched, db.step_mm, safe))
    return np.where(ok, db.depth_of(total), np.nan)


def accumulate_bidirectional(forward, reverse):
    """Frame-by-frame mean of the forward and reverse sequences"""
    if forward.n_frames != reverse.n_frames:
        raise ShapeMismatchError(f'{forward.n_frames} forward frames vs {reverse.n_frames} reverse frames')
    if not np.allclose(forward.timestamps, reverse.timestamps, rtol=0, atol=1e-9):
        raise ShapeMismatchError('Forward and reverse frames have different timestamps')
    frames, velocities = [], []
    for a, b, va, vb in zip(forward.frames, reverse.frames, forward.velocities, reverse.velocities):
        if np.shape(a) != np.shape(b):
            raise ShapeMismatchError(f'Frame shapes differ: {np.shape(a)} vs {np.shape(b)}')
        frames.append(0.5 * (np.asarray(a) + np.asarray(b)))
        velocities.append(0.5 * (np.asarray(va) + np.asarray(vb)))
    return ShapeSequence(frames=frames, velocities=velocities, durations=list(forward.durations),
                         valid=forward.valid & reverse.valid, timestamps=list(forward.timestamps))


def _reverse_sequence(db, capture, sched, initial, coarse, v_step, window, v_adjacency_max,
                      local_radius, score_min, workers, tile_rows):
    """Fine search on the reversed schedule, returned in forward time"""
    d_end, reverse_velocities, _ = refine(
        db, capture, sched.reversed(), initial, window=window, v_adjacency_max=v_adjacency_max,
        local_radius=local_radius, v_step=v_step, score_min=score_min, coarse=coarse,
        workers=workers, tile_rows=tile_rows)
    forward_velocities = [-v for v in reversed(reverse_velocities)]
    return reverse_accumulate(d_end, forward_velocities, sched)


def reverse_refine(db, capture, sched, d0, velocities, window=Config.WINDOW, v_adjacency_max=None,
                   local_radius=Config.LOCAL_RADIUS, score_min=Config.SCORE_MIN, workers=None,
                   tile_rows=None):
    """Re-run the fine search on the time-reversed exposure.

    Starts from the forward end depth and the negated mean velocity, and
    returns the reverse sequence in forward time.
    """
    d0, maps = _check_maps(d0, velocities, sched)
    v_step = default_v_step(db, sched)
    d_start = end_depth(db, sched, d0, maps)
    v_start = -np.mean(np.stack(maps), axis=0)
    return _reverse_sequence(db, capture, sched, (d_start, np.rint(v_start / v_step) * v_step), None, v_step,
                             window, v_adjacency_max, local_radius, score_min, workers, tile_rows)


def reverse_search(db, capture, sched, v_max=Config.V_MAX, mask=None, window=Config.WINDOW,
                   v_adjacency_max=None, local_radius=Config.LOCAL_RADIUS, score_min=Config.SCORE_MIN,
                   workers=None, tile_rows=None):
    """Coarse then fine search on the time-reversed exposure, ignoring the forward result"""
    backwards = sched.reversed()
    grid = make_grid(db, backwards, v_max=v_max)
    depth, velocity, coarse = estimate_initial(db, capture, backwards, grid, window=window,
                                               score_min=score_min, workers=workers, mask=mask,
                                               tile_rows=tile_rows)
    return _reverse_sequence(db, capture, sched, (depth, velocity), coarse, grid.v_step, window,
                             v_adjacency_max, local_radius, score_min, workers, tile_rows)


def super_resolve(d0, velocities, sched, db=None, capture=None, reverse_research=Config.REVERSE_RESEARCH,
                  v_max=Config.V_MAX, mask=None, **search_kwargs):
    """Forward frames averaged with a reverse pass.

    The reverse pass re-runs the fine search on the time-reversed schedule,
    anchored at the forward end depth. reverse_research=True takes the
    anchor from a coarse search of the reversed exposure instead. Without a
    database and a capture only the forward frames are returned.
    """
    forward = accumulate(d0, velocities, sched)
    if db is None and capture is None:
        return forward
    if db is None or capture is None:
        raise InvalidArgumentError('The reverse pass needs both the database and the capture')
    if reverse_research:
        reverse = reverse_search(db, capture, sched, v_max=v_max, mask=mask, **search_kwargs)
    else:
        reverse = reverse_refine(db, capture, sched, d0, velocities, **search_kwargs)
    sequence = accumulate_bidirectional(forward, reverse)
    logger.info('Super-resolved %d frames (reverse pass from %s)', sequence.n_frames,
                'a coarse re-search' if reverse_research else 'the forward end depth')
    return sequence


def save_sequence(sequence, directory, rig=None, point_clouds=False):
    """frame_XX.pfm per frame plus frames.json; optional PLY clouds"""
    os.makedirs(directory, exist_ok=True)
    files = []
    for n, frame in enumerate(sequence.frames, start=1):
        name = f'frame_{n:02d}.pfm'
        write_pfm(os.path.join(directory, name), np.where(sequence.valid, frame, np.nan))
        velocity = f'velocity_{n:02d}.pfm'
        write_pfm(os.path.join(directory, velocity), np.where(sequence.valid, sequence.velocities[n - 1], np.nan))
        entry = {'frame': n, 'file': name, 'velocity': velocity, 'timestamp_s': sequence.timestamps[n - 1]}
        if point_clouds:
            if rig is None:
                raise InvalidArgumentError('Point cloud export needs the rig')
            ply = f'frame_{n:02d}.ply'
            write_ply(os.path.join(directory, ply), depth_to_points(frame, rig, sequence.valid))
            entry['points'] = ply
        files.append(entry)
    index = sequence.to_dict()
    index['frames'] = files
    with open(os.path.join(directory, 'frames.json'), 'w', encoding='utf-8') as f:
        json.dump(index, f, indent=2)
    return directory


def load_sequence(directory):
    """Read a sequence written by save_sequence"""
    try:
        with open(os.path.join(directory, 'frames.json'), 'r', encoding='utf-8') as f:
            index = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptDatabaseError(f'Cannot read frame index in {directory}: {e}') from e
    frames, velocities = [], []
    for entry in index['frames']:
        frames.append(read_pfm(os.path.join(directory, entry['file'])).astype(np.float64))
        velocities.append(read_pfm(os.path.join(directory, entry['velocity'])).astype(np.float64))
    valid = np.isfinite(frames[0])
    for v in velocities:
        valid &= np.isfinite(v)
    return ShapeSequence(frames=frames, velocities=velocities, durations=list(index['durations']),
                         valid=valid, timestamps=list(index['timestamps']))
