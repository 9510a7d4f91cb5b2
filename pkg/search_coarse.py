# search_coarse.py
"""Exhaustive (depth, constant velocity) search with windowed NCC.

Every pixel takes the hypothesis with the highest score; ties go to the
smallest depth index, then the smallest velocity index. Work is split into
fixed row tiles (each padded by half a window) so the result does not depend
on how many threads run them.
"""
import logging
import math

import numpy as np

from config import Config
from errors import InvalidArgumentError, ShapeMismatchError
from models import CostVolume, SearchGrid
from parallel import parallel_map, row_tiles
from synth import UNDEFINED_SCORE, WindowMatcher, exposure_scale, plan, render_plan

logger = logging.getLogger(__name__)

MIN_WINDOW = 8


def default_v_step(db, sched):
    """Velocity step that changes a full interval's sweep by one database slice"""
    return db.step_mm / sched.delta_t


def make_grid(db, sched, v_max=Config.V_MAX, v_step=None, d_min_mm=None, d_max_mm=None,
              depth_stride=1):
    """Search grid over database depths and symmetric velocities"""
    if v_max < 0:
        raise InvalidArgumentError(f'v_max must be non-negative, got {v_max}')
    v_step = default_v_step(db, sched) if v_step is None else float(v_step)
    if v_step <= 0:
        raise InvalidArgumentError(f'v_step must be positive, got {v_step}')
    lo = 0 if d_min_mm is None else max(db.index_of(d_min_mm), 0)
    hi = db.n_depths - 1 if d_max_mm is None else min(db.index_of(d_max_mm), db.n_depths - 1)
    depth_indices = np.arange(lo, hi + 1, max(int(depth_stride), 1))
    k = int(math.floor(v_max / v_step + 1e-9))
    velocities = v_step * np.arange(-k, k + 1)
    return SearchGrid(depth_indices=depth_indices, velocities=velocities, step_mm=db.step_mm,
                      v_step=v_step, v_max=float(v_max))


def search_mask(shape, window, geometry=None):
    """Pixel centres whose window stays clear of the marker strip"""
    height, width = shape
    mask = np.ones(shape, dtype=bool)
    if geometry is not None:
        first = geometry.strip_rows[1] + window // 2
        mask[:min(first, height), :] = False
    return mask


def check_inputs(db, capture, sched, window):
    if capture.intensity.shape != (db.height, db.width):
        raise ShapeMismatchError(
            f'Capture is {capture.intensity.shape}, database slices are {(db.height, db.width)}')
    if window < MIN_WINDOW:
        raise InvalidArgumentError(f'Window must be at least {MIN_WINDOW} px, got {window}')
    for pid in sched.pattern_ids:
        db.pattern_index(pid)


def tile_band(r0, r1, height, window):
    """Rows needed to score every pixel centre of rows [r0, r1)"""
    return max(r0 - window // 2, 0), min(r1 + window - window // 2 - 1, height)


def _constant_plans(db, sched, grid):
    plans = {}
    for i, d_index in enumerate(grid.depth_indices):
        for j, v in enumerate(grid.velocities):
            entries = plan(db, sched, int(d_index), [float(v)] * sched.n_p)
            if entries is not None:
                plans[(i, j)] = entries
    return plans


def estimate_initial(db, capture, sched, grid, window=Config.WINDOW, score_min=Config.SCORE_MIN,
                     workers=None, keep_full=False, mask=None, tile_rows=None):
    """Per-pixel argmax over the grid; returns (depth map, velocity map, cost volume)"""
    check_inputs(db, capture, sched, window)
    if grid.n_depths == 0 or grid.n_velocities == 0:
        raise InvalidArgumentError('Search grid is empty')
    height, width = db.height, db.width
    scale = exposure_scale(db, sched)
    plans = _constant_plans(db, sched, grid)
    skipped = grid.n_depths * grid.n_velocities - len(plans)
    if skipped:
        logger.debug('Skipping %d hypotheses that leave the depth range', skipped)
    target = np.asarray(capture.intensity, dtype=np.float64)

    def search_tile(tile):
        r0, r1 = tile
        b0, b1 = tile_band(r0, r1, height, window)
        own = slice(r0 - b0, r1 - b0)
        matcher = WindowMatcher(target[b0:b1], window)
        rows = r1 - r0
        depth_scores = np.full((grid.n_depths, rows, width), UNDEFINED_SCORE)
        full = np.full((grid.n_depths, grid.n_velocities, rows, width), UNDEFINED_SCORE) \
            if keep_full else None
        best = np.full((rows, width), UNDEFINED_SCORE)
        best_i = np.full((rows, width), -1, dtype=np.int64)
        best_j = np.full((rows, width), -1, dtype=np.int64)
        for i in range(grid.n_depths):
            for j in range(grid.n_velocities):
                entries = plans.get((i, j))
                if entries is None:
                    continue
                score = matcher.score(render_plan(db, entries, scale, slice(b0, b1)))[own]
                np.maximum(depth_scores[i], score, out=depth_scores[i])
                if full is not None:
                    full[i, j] = score
                better = score > best
                best[better] = score[better]
                best_i[better] = i
                best_j[better] = j
        return depth_scores, full, best, best_i, best_j

    tiles = row_tiles(height, tile_rows)
    results = parallel_map(search_tile, tiles, workers)

    depth_scores = np.concatenate([r[0] for r in results], axis=1)
    full = np.concatenate([r[1] for r in results], axis=2) if keep_full else None
    best = np.concatenate([r[2] for r in results], axis=0)
    best_i = np.concatenate([r[3] for r in results], axis=0)
    best_j = np.concatenate([r[4] for r in results], axis=0)

    valid = (best_i >= 0) & np.isfinite(best) & (best >= score_min)
    if mask is not None:
        valid &= mask
    depth_mm = db.depth_of(grid.depth_indices).astype(np.float64)
    cost = CostVolume(depth_mm=depth_mm, velocities=np.asarray(grid.velocities, dtype=np.float64),
                      depth_scores=depth_scores, best_depth_index=best_i, best_velocity_index=best_j,
                      best_score=best, valid=valid, scores=full)
    depth_map = cost.best_depth()
    velocity_map = np.full((height, width), np.nan)
    velocity_map[valid] = cost.velocities[best_j[valid]]
    logger.info('Coarse search: %d x %d hypotheses, %.1f%% valid pixels',
                grid.n_depths, grid.n_velocities, 100.0 * valid.mean())
    return depth_map, velocity_map, cost
