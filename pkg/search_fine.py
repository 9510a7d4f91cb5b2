# search_fine.py
"""Local varying-velocity refinement and belief-propagation smoothing.

refine() revisits every valid pixel around its coarse (d, v): depths within
local_radius slices and one velocity per pattern interval within
local_radius velocity steps, keeping neighbouring intervals within the
adjacency bound. bp_refine() smooths the depth labels of a cost volume with
min-sum loopy BP and an L1 pairwise term.
"""
import logging

import numpy as np

from config import Config
from errors import InvalidArgumentError, ShapeMismatchError
from models import CostVolume
from parallel import parallel_map, row_tiles
from search_coarse import check_inputs, default_v_step, tile_band
from synth import UNDEFINED_SCORE, WindowMatcher, exposure_scale, plan, render_plan

logger = logging.getLogger(__name__)

WORST_DATA_COST = 2.0
CONVERGENCE_TOL = 1e-9


# ==================== LOCAL SEARCH ====================

def admissible_vectors(center, radius, n_p, max_jump):
    """Velocity-step vectors around center, depth-first, |k[n+1] - k[n]| <= max_jump"""
    values = range(center - radius, center + radius + 1)
    vectors = []

    def extend(prefix):
        if len(prefix) == n_p:
            vectors.append(tuple(prefix))
            return
        for k in values:
            if prefix and abs(k - prefix[-1]) > max_jump:
                continue
            prefix.append(k)
            extend(prefix)
            prefix.pop()

    extend([])
    return vectors


def _label_lookup(db, depth_mm):
    """Map a database slice index to the nearest cost-volume label"""
    def lookup(d_index):
        return int(np.argmin(np.abs(depth_mm - db.depth_of(d_index))))
    return lookup


def refine(db, capture, sched, initial, window=Config.WINDOW, v_adjacency_max=None,
           local_radius=Config.LOCAL_RADIUS, v_step=None, score_min=Config.SCORE_MIN,
           coarse=None, seed_with_coarse=True, workers=None, tile_rows=None):
    """Returns (depth map, one velocity map per interval, cost volume).

    initial is the (depth map, velocity map) pair of the coarse search.
    Passing the coarse CostVolume seeds every pixel with its coarse score and
    carries the coarse depth scores into the returned volume; seed_with_coarse=False
    keeps the scores but not the seeding, for an initial depth that is not
    the coarse one.
    """
    depth_init, velocity_init = initial[0], initial[1]
    check_inputs(db, capture, sched, window)
    shape = (db.height, db.width)
    if np.shape(depth_init) != shape or np.shape(velocity_init) != shape:
        raise ShapeMismatchError(f'Initial maps must be {shape}')
    if local_radius < 0:
        raise InvalidArgumentError(f'local_radius must be non-negative, got {local_radius}')
    v_step = default_v_step(db, sched) if v_step is None else float(v_step)
    if v_step <= 0:
        raise InvalidArgumentError(f'v_step must be positive, got {v_step}')
    if v_adjacency_max is None:
        v_adjacency_max = Config.V_ADJACENCY_STEPS * v_step
    if v_adjacency_max <= 0:
        raise InvalidArgumentError(f'v_adjacency_max must be positive, got {v_adjacency_max}')
    max_jump = int(np.floor(v_adjacency_max / v_step + 1e-9))

    depth_init = np.asarray(depth_init, dtype=np.float64)
    velocity_init = np.asarray(velocity_init, dtype=np.float64)
    init_valid = np.isfinite(depth_init) & np.isfinite(velocity_init)
    if coarse is not None:
        init_valid &= coarse.valid
    d_index = np.where(init_valid, db.index_of(np.where(init_valid, depth_init, db.d_min_mm)), -1)
    v_index = np.where(init_valid, np.rint(np.where(init_valid, velocity_init, 0.0) / v_step), 0)
    v_index = v_index.astype(np.int64)

    if coarse is not None:
        depth_mm = coarse.depth_mm
        label_of = _label_lookup(db, depth_mm)
    else:
        depth_mm = db.depth_of(np.arange(db.n_depths)).astype(np.float64)
        label_of = int
    n_labels = len(depth_mm)
    n_p = sched.n_p
    scale = exposure_scale(db, sched)
    target = np.asarray(capture.intensity, dtype=np.float64)
    vector_cache = {}

    def vectors_around(k):
        if k not in vector_cache:
            vector_cache[k] = admissible_vectors(k, local_radius, n_p, max_jump)
        return vector_cache[k]

    def refine_tile(tile):
        r0, r1 = tile
        b0, b1 = tile_band(r0, r1, db.height, window)
        own = slice(r0 - b0, r1 - b0)
        matcher = WindowMatcher(target[b0:b1], window)
        tile_valid = init_valid[r0:r1]
        tile_d = d_index[r0:r1]
        tile_v = v_index[r0:r1]
        rows = r1 - r0
        best = np.full((rows, db.width), UNDEFINED_SCORE)
        if coarse is not None:
            if seed_with_coarse:
                best = np.where(tile_valid, coarse.best_score[r0:r1], UNDEFINED_SCORE)
            depth_scores = coarse.depth_scores[:, r0:r1].copy()
        else:
            depth_scores = np.full((n_labels, rows, db.width), UNDEFINED_SCORE)
        best_d = tile_d.copy()
        best_vec = np.repeat(tile_v[None], n_p, axis=0)
        scores = {}

        def score_of(d, vec):
            key = (d, vec)
            if key not in scores:
                entries = plan(db, sched, d, [k * v_step for k in vec])
                scores[key] = None if entries is None else \
                    matcher.score(render_plan(db, entries, scale, slice(b0, b1)))[own]
            return scores[key]

        groups = sorted(set(zip(tile_d[tile_valid].tolist(), tile_v[tile_valid].tolist())))
        for d0, k0 in groups:
            sel = tile_valid & (tile_d == d0) & (tile_v == k0)
            for d in range(d0 - local_radius, d0 + local_radius + 1):
                if not 0 <= d < db.n_depths:
                    continue
                label = label_of(d)
                for vec in vectors_around(k0):
                    score = score_of(d, vec)
                    if score is None:
                        continue
                    np.maximum(depth_scores[label], np.where(sel, score, UNDEFINED_SCORE),
                               out=depth_scores[label])
                    better = sel & (score > best)
                    if not better.any():
                        continue
                    best[better] = score[better]
                    best_d[better] = d
                    best_vec[:, better] = np.asarray(vec, dtype=np.int64)[:, None]
        logger.debug('Refined rows %d-%d: %d groups, %d hypotheses', r0, r1, len(groups), len(scores))
        return best, best_d, best_vec, depth_scores

    results = parallel_map(refine_tile, row_tiles(db.height, tile_rows), workers)
    best = np.concatenate([r[0] for r in results], axis=0)
    best_d = np.concatenate([r[1] for r in results], axis=0)
    best_vec = np.concatenate([r[2] for r in results], axis=1)
    depth_scores = np.concatenate([r[3] for r in results], axis=1)

    valid = init_valid & np.isfinite(best) & (best >= score_min)
    depth_map = np.full(shape, np.nan)
    depth_map[valid] = db.depth_of(best_d[valid])
    velocity_maps = []
    for n in range(n_p):
        v = np.full(shape, np.nan)
        v[valid] = best_vec[n][valid] * v_step
        velocity_maps.append(v)
    labels = np.full(shape, -1, dtype=np.int64)
    for d in np.unique(best_d[valid]):
        labels[valid & (best_d == d)] = label_of(int(d))
    cost = CostVolume(depth_mm=np.asarray(depth_mm, dtype=np.float64), velocities=np.zeros(0),
                      depth_scores=depth_scores, best_depth_index=labels,
                      best_velocity_index=np.full(shape, -1, dtype=np.int64),
                      best_score=best, valid=valid)
    logger.info('Fine search: radius %d, %d admissible vectors per centre, %.1f%% valid pixels',
                local_radius, len(admissible_vectors(0, local_radius, n_p, max_jump)),
                100.0 * valid.mean())
    return depth_map, velocity_maps, cost


# ==================== BELIEF PROPAGATION ====================

def data_cost(cost):
    """1 - score per label; invalid pixels get a flat cost"""
    data = 1.0 - np.asarray(cost.depth_scores, dtype=np.float64)
    data[~np.isfinite(data)] = WORST_DATA_COST
    data[:, ~cost.valid] = 0.0
    return data


def _l1_envelope(h, lam, truncation):
    """min over l' of h[l'] + min(lam * |l - l'|, truncation), normalized"""
    m = h.copy()
    for l in range(1, m.shape[0]):
        np.minimum(m[l], m[l - 1] + lam, out=m[l])
    for l in range(m.shape[0] - 2, -1, -1):
        np.minimum(m[l], m[l + 1] + lam, out=m[l])
    if truncation is not None:
        np.minimum(m, h.min(axis=0) + truncation, out=m)
    m -= m.min(axis=0)
    return m


def bp_labels(data, lam=Config.BP_LAMBDA, iterations=Config.BP_ITERATIONS, truncation=None):
    """Min-sum loopy BP on the 4-connected grid; data is (labels, rows, cols)"""
    if iterations < 1:
        raise InvalidArgumentError(f'iterations must be at least 1, got {iterations}')
    if lam < 0:
        raise InvalidArgumentError(f'lambda must be non-negative, got {lam}')
    data = np.asarray(data, dtype=np.float64)
    # from_up[:, y, x] is the message (y, x) receives from (y - 1, x)
    from_up = np.zeros_like(data)
    from_down = np.zeros_like(data)
    from_left = np.zeros_like(data)
    from_right = np.zeros_like(data)
    for it in range(iterations):
        to_down = _l1_envelope(data + from_up + from_left + from_right, lam, truncation)
        to_up = _l1_envelope(data + from_down + from_left + from_right, lam, truncation)
        to_right = _l1_envelope(data + from_up + from_down + from_left, lam, truncation)
        to_left = _l1_envelope(data + from_up + from_down + from_right, lam, truncation)
        new_up = np.zeros_like(data)
        new_up[:, 1:, :] = to_down[:, :-1, :]
        new_down = np.zeros_like(data)
        new_down[:, :-1, :] = to_up[:, 1:, :]
        new_left = np.zeros_like(data)
        new_left[:, :, 1:] = to_right[:, :, :-1]
        new_right = np.zeros_like(data)
        new_right[:, :, :-1] = to_left[:, :, 1:]
        change = max(float(np.max(np.abs(new_up - from_up))), float(np.max(np.abs(new_down - from_down))),
                     float(np.max(np.abs(new_left - from_left))),
                     float(np.max(np.abs(new_right - from_right))))
        from_up, from_down, from_left, from_right = new_up, new_down, new_left, new_right
        if change <= CONVERGENCE_TOL:
            logger.debug('BP converged after %d iterations', it + 1)
            break
    belief = data + from_up + from_down + from_left + from_right
    return np.argmin(belief, axis=0)


def wta_labels(data):
    return np.argmin(np.asarray(data), axis=0)


def labeling_energy(data, labels, lam, truncation=None):
    """Sum of data costs plus lam * |label difference| over 4-connected edges"""
    data = np.asarray(data, dtype=np.float64)
    labels = np.asarray(labels)
    rows, cols = np.indices(labels.shape)
    unary = float(data[labels, rows, cols].sum())
    jumps = np.concatenate([np.abs(np.diff(labels, axis=0)).ravel(),
                            np.abs(np.diff(labels, axis=1)).ravel()]).astype(np.float64)
    pairwise = lam * jumps
    if truncation is not None:
        pairwise = np.minimum(pairwise, truncation)
    return unary + float(pairwise.sum())


def bp_refine(cost, lam=Config.BP_LAMBDA, iterations=Config.BP_ITERATIONS, truncation=None):
    """MAP depth map of a cost volume; pixels invalid in the volume stay NaN"""
    labels = bp_labels(data_cost(cost), lam, iterations, truncation)
    depth = np.asarray(cost.depth_mm, dtype=np.float64)[labels]
    depth[~cost.valid] = np.nan
    logger.info('BP: lambda %.3f, %d labels, %d iterations max', lam, len(cost.depth_mm), iterations)
    return depth
