import numpy as np
import pytest

import refdb
from errors import HypothesisOutOfRangeError, InvalidArgumentError, ShapeMismatchError
from evaluate import fit_line
from models import CostVolume, MotionHypothesis, Rig, SceneMotion
from optics import render_capture
from patterns import build_pattern_set
from search_coarse import default_v_step, estimate_initial, make_grid, search_mask
from search_fine import (WORST_DATA_COST, admissible_vectors, bp_labels, bp_refine, data_cost,
                         labeling_energy, refine, wta_labels)
from superres import accumulate
from synth import ncc, synth_fine


# ==================== LOCAL SEARCH ====================

def test_admissible_vectors_respect_adjacency():
    vectors = admissible_vectors(0, 1, 2, 1)
    assert vectors == [(-1, -1), (-1, 0), (0, -1), (0, 0), (0, 1), (1, 0), (1, 1)]
    assert admissible_vectors(4, 0, 3, 1) == [(4, 4, 4)]
    for vec in admissible_vectors(2, 2, 4, 1):
        assert all(abs(a - b) <= 1 for a, b in zip(vec, vec[1:]))
        assert all(0 <= k <= 4 for k in vec)


@pytest.fixture(scope="module")
def tiny():
    """16x16 rig over a 2 mm range, small enough for exhaustive checks"""
    rig = Rig(cam_width=16, cam_height=16, d_min_mm=600.0, d_max_mm=602.0, focus_depth_mm=601.0)
    patterns = build_pattern_set(rig, 2, 0.3, seed=3)
    db = refdb.build(rig, patterns, 0.5)
    scene = SceneMotion(depth0=600.5, velocities=[3.0, 0.0], t_exposure=rig.t_ref, t_proj=rig.t_ref / 2)
    capture = render_capture(rig, patterns, scene)
    return rig, db, capture, capture.true_schedule


def test_refine_matches_exhaustive_search(tiny):
    rig, db, capture, sched = tiny
    v_step = default_v_step(db, sched)
    shape = (rig.cam_height, rig.cam_width)
    depth, velocities, cost = refine(db, capture, sched, (np.full(shape, 601.0), np.zeros(shape)),
                                     window=8, local_radius=2, score_min=-1.0)
    assert len(velocities) == 2
    for r, c in [(8, 8), (5, 11), (12, 4)]:
        region = capture.intensity[r - 4:r + 4, c - 4:c + 4]
        naive = {}
        for d in range(db.n_depths):
            for vec in admissible_vectors(0, 2, 2, 2):
                hyp = MotionHypothesis(d0=float(db.depth_of(d)), v_vec=tuple(k * v_step for k in vec))
                try:
                    naive[(d, vec)] = ncc(synth_fine(db, sched, hyp, (r, c), 8), region)
                except HypothesisOutOfRangeError:
                    continue
        best = max(naive.values())
        assert cost.best_score[r, c] == pytest.approx(best, abs=1e-9)
        chosen = (db.index_of(depth[r, c]), tuple(int(round(v[r, c] / v_step)) for v in velocities))
        assert naive[chosen] == pytest.approx(best, abs=1e-9)


def test_refine_input_checks(tiny):
    rig, db, capture, sched = tiny
    shape = (rig.cam_height, rig.cam_width)
    with pytest.raises(InvalidArgumentError):
        refine(db, capture, sched, (np.full(shape, 601.0), np.zeros(shape)), window=8, local_radius=-1)
    with pytest.raises(ShapeMismatchError):
        refine(db, capture, sched, (np.full((4, 4), 601.0), np.zeros((4, 4))), window=8)


@pytest.fixture(scope="module")
def desk_coarse(desk):
    db = desk.database(3)
    capture = render_capture(desk.rig, desk.patterns(3), SceneMotion.constant(600.0, 9.0, desk.rig.t_ref, 3))
    sched = capture.true_schedule
    mask = search_mask((desk.rig.cam_height, desk.rig.cam_width), desk.window, desk.geometry)
    coarse_depth, coarse_velocity, coarse = estimate_initial(db, capture, sched, make_grid(db, sched, v_max=18.0),
                                                             window=desk.window, mask=mask)
    return db, capture, sched, mask, (coarse_depth, coarse_velocity), coarse


def test_refine_improves_on_coarse(desk, desk_coarse):
    db, capture, sched, _, initial, coarse = desk_coarse
    depth, velocities, cost = refine(db, capture, sched, initial, window=desk.window, coarse=coarse)
    assert np.all(cost.best_score[coarse.valid] >= coarse.best_score[coarse.valid])
    assert not cost.valid[~coarse.valid].any()
    for v in velocities:
        assert np.mean(np.isclose(v[cost.valid], 9.0)) > 0.8
    assert np.array_equal(cost.depth_mm, coarse.depth_mm)
    assert np.mean(np.abs(depth[cost.valid] - 600.0) <= 0.5) > 0.8


def test_stages_are_independent_of_workers(desk, desk_coarse):
    db, capture, sched, mask, _, _ = desk_coarse
    grid = make_grid(db, sched, v_max=18.0)
    runs = []
    for workers in (1, 2, 8):
        coarse_depth, coarse_velocity, coarse = estimate_initial(db, capture, sched, grid, window=desk.window,
                                                                 mask=mask, workers=workers, tile_rows=8)
        depth, velocities, cost = refine(db, capture, sched, (coarse_depth, coarse_velocity), window=desk.window,
                                         coarse=coarse, workers=workers, tile_rows=8)
        runs.append((coarse_depth, depth, velocities, cost, bp_refine(cost, lam=0.05, iterations=20)))
    coarse_depth, depth, velocities, cost, smoothed = runs[0]
    for other in runs[1:]:
        assert np.array_equal(coarse_depth, other[0], equal_nan=True)
        assert np.array_equal(depth, other[1], equal_nan=True)
        for v, w in zip(velocities, other[2]):
            assert np.array_equal(v, w, equal_nan=True)
        assert np.array_equal(cost.best_score, other[3].best_score)
        assert np.array_equal(cost.depth_scores, other[3].depth_scores)
        assert np.array_equal(smoothed, other[4], equal_nan=True)


@pytest.mark.slow
def test_accelerating_plane_gives_linear_profile(desk):
    db = desk.database(4)
    n_p = 4
    t_e = desk.rig.t_ref
    dt = t_e / n_p
    v_step = db.step_mm / dt
    scene = SceneMotion.accelerating(600.0, 0.0, v_step / dt, t_e, n_p)
    capture = render_capture(desk.rig, desk.patterns(4), scene)
    sched = capture.true_schedule
    assert default_v_step(db, sched) == pytest.approx(v_step)
    mask = search_mask((desk.rig.cam_height, desk.rig.cam_width), desk.window, desk.geometry)
    coarse_depth, coarse_velocity, coarse = estimate_initial(
        db, capture, sched, make_grid(db, sched, v_max=4 * v_step), window=desk.window, mask=mask)
    depth, velocities, cost = refine(db, capture, sched, (coarse_depth, coarse_velocity), window=desk.window,
                                     local_radius=3, v_adjacency_max=v_step, coarse=coarse)
    profile = [float(np.median(v[cost.valid])) for v in velocities]
    slope, _, r2 = fit_line(profile)
    assert r2 >= 0.9
    assert slope == pytest.approx(v_step, rel=0.2)
    sequence = accumulate(depth, velocities, sched)
    spacings = [float(np.median((b - a)[sequence.valid])) for a, b in zip(sequence.frames, sequence.frames[1:])]
    assert all(later > earlier for earlier, later in zip(spacings, spacings[1:]))


# ==================== BELIEF PROPAGATION ====================

def _volume(data, valid=None):
    labels, rows, cols = data.shape
    if valid is None:
        valid = np.ones((rows, cols), dtype=bool)
    return CostVolume(depth_mm=600.0 + 0.5 * np.arange(labels), velocities=np.zeros(1),
                      depth_scores=1.0 - data, best_depth_index=np.argmin(data, axis=0),
                      best_velocity_index=np.zeros((rows, cols), dtype=int),
                      best_score=1.0 - data.min(axis=0), valid=valid)


def _salted():
    """Two flat regions (labels 1 and 3) with a few isolated wrong minima"""
    truth = np.ones((12, 12), dtype=int)
    truth[:, 6:] = 3
    labels = np.arange(5)[:, None, None]
    data = 0.05 * np.abs(labels - truth[None])
    for r, c in [(2, 2), (8, 3), (5, 9), (10, 10)]:
        data[:, r, c] = 1.0
        data[truth[r, c], r, c] = 0.4
        data[4 if truth[r, c] == 1 else 0, r, c] = 0.0
    return data, truth


def test_zero_lambda_is_winner_take_all(rng):
    data = rng.random((6, 9, 7))
    assert np.array_equal(bp_labels(data, lam=0.0, iterations=5), wta_labels(data))


def test_bp_removes_isolated_outliers():
    data, truth = _salted()
    assert not np.array_equal(wta_labels(data), truth)
    assert np.array_equal(bp_labels(data, lam=0.1, iterations=30), truth)


def test_extra_iterations_change_nothing_after_convergence():
    data, _ = _salted()
    assert np.array_equal(bp_labels(data, lam=0.1, iterations=40), bp_labels(data, lam=0.1, iterations=200))


def test_bp_energy_is_not_above_winner_take_all():
    rng = np.random.default_rng(99)
    wins = 0
    for _ in range(100):
        data = rng.random((5, 8, 8))
        bp = labeling_energy(data, bp_labels(data, lam=0.2, iterations=30), 0.2)
        wta = labeling_energy(data, wta_labels(data), 0.2)
        wins += bp <= wta + 1e-12
    assert wins >= 95


def test_labeling_energy():
    data = np.zeros((3, 2, 2))
    data[2, 0, 0] = 0.5
    labels = np.array([[2, 0], [0, 0]])
    assert labeling_energy(data, labels, 1.0) == pytest.approx(0.5 + 2 + 2)
    assert labeling_energy(data, labels, 1.0, truncation=1.0) == pytest.approx(0.5 + 1 + 1)


def test_data_cost_handles_undefined_and_invalid():
    data = np.full((2, 1, 3), 0.5)
    cost = _volume(data, valid=np.array([[True, True, False]]))
    cost.depth_scores[0, 0, 1] = -np.inf
    out = data_cost(cost)
    assert out[0, 0, 1] == WORST_DATA_COST
    assert np.all(out[:, 0, 2] == 0.0)
    assert out[1, 0, 0] == pytest.approx(0.5)


def test_bp_refine_returns_depths():
    data, truth = _salted()
    valid = np.ones(truth.shape, dtype=bool)
    valid[0, 0] = False
    depth = bp_refine(_volume(data, valid), lam=0.1, iterations=30)
    assert np.isnan(depth[0, 0])
    assert np.allclose(depth[valid], 600.0 + 0.5 * truth[valid])


@pytest.mark.parametrize('kwargs', [{'iterations': 0}, {'lam': -0.1}])
def test_bp_argument_checks(kwargs):
    with pytest.raises(InvalidArgumentError):
        bp_labels(np.zeros((2, 3, 3)), **kwargs)
