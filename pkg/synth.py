# synth.py
"""Reference patches for motion hypotheses, and NCC.

A hypothesis starts at database slice d0 and sweeps, during pattern
interval n, round(v_n * fraction_n * dt / step) slices. The synthesized
image averages the slices of each interval (both endpoints included, so a
boundary slice belongs to both neighbours), weights the intervals by the
schedule and scales by T_E / T_E_ref.
"""
import numpy as np

from errors import HypothesisOutOfRangeError, InvalidArgumentError, ShapeMismatchError

UNDEFINED_SCORE = float('-inf')
VARIANCE_EPS = 1e-12


def _round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def interval_steps(sched, step_mm, velocities):
    """Whole slices swept in each interval; velocities may be scalars or maps"""
    fractions = sched.interval_fractions
    dt = sched.delta_t
    return [_round_half_away(np.asarray(v, dtype=np.float64) * f * dt / step_mm)
            for v, f in zip(velocities, fractions)]


def plan(db, sched, d0_index, velocities):
    """(pattern index, first slice, last slice, weight) per interval, or None if out of range"""
    if len(velocities) != sched.n_p:
        raise InvalidArgumentError(
            f'{len(velocities)} velocities given for {sched.n_p} pattern intervals')
    steps = interval_steps(sched, db.step_mm, velocities)
    entries = []
    start = int(d0_index)
    for pid, weight, step in zip(sched.pattern_ids, sched.weights, steps):
        end = start + int(step)
        lo, hi = min(start, end), max(start, end)
        if lo < 0 or hi >= db.n_depths:
            return None
        entries.append((db.pattern_index(pid), lo, hi, float(weight)))
        start = end
    return entries


def render_plan(db, entries, scale, rows, cols=slice(None)):
    """Evaluate a plan over an image region"""
    out = None
    for k, lo, hi, weight in entries:
        mean = db.slices[k, lo:hi + 1, rows, cols].mean(axis=0, dtype=np.float64)
        out = weight * mean if out is None else out + weight * mean
    return out * scale


def exposure_scale(db, sched):
    return sched.t_exposure / db.t_exposure_ref


def _window_region(db, center, window):
    row, col = center
    r0, c0 = row - window // 2, col - window // 2
    if window < 1 or r0 < 0 or c0 < 0 or r0 + window > db.height or c0 + window > db.width:
        raise InvalidArgumentError(f'Window {window} at {center} does not fit the image')
    return slice(r0, r0 + window), slice(c0, c0 + window)


def _synthesize_patch(db, sched, hyp, center, window, velocities):
    rows, cols = _window_region(db, center, window)
    d0_index = db.index_of(hyp.d0)
    entries = plan(db, sched, d0_index, velocities)
    if entries is None:
        raise HypothesisOutOfRangeError(
            f'Hypothesis d0={hyp.d0} mm, v={velocities} sweeps outside '
            f'[{db.d_min_mm}, {db.d_max_mm}] mm')
    return render_plan(db, entries, exposure_scale(db, sched), rows, cols)


def synth_const(db, sched, hyp, center, window):
    """Patch for start depth d0 and one constant velocity"""
    if not hyp.is_constant:
        raise InvalidArgumentError('synth_const needs a constant-velocity hypothesis')
    return _synthesize_patch(db, sched, hyp, center, window, hyp.velocity_vector(sched.n_p))


def synth_fine(db, sched, hyp, center, window):
    """Patch for start depth d0 and one velocity per pattern interval"""
    return _synthesize_patch(db, sched, hyp, center, window, hyp.velocity_vector(sched.n_p))


def ncc(a, b):
    """Zero-mean normalized cross-correlation; UNDEFINED_SCORE for flat patches"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f'Patch shapes differ: {a.shape} vs {b.shape}')
    a0 = a - a.mean()
    b0 = b - b.mean()
    va = float(np.sum(a0 * a0))
    vb = float(np.sum(b0 * b0))
    if va <= VARIANCE_EPS * a.size or vb <= VARIANCE_EPS * b.size:
        return UNDEFINED_SCORE
    return float(np.clip(np.sum(a0 * b0) / np.sqrt(va * vb), -1.0, 1.0))


# ==================== WINDOWED NCC ====================

def window_sums(x, window):
    """Sum over every window x window block; result[i, j] has top-left (i, j)"""
    h, w = x.shape
    s = np.zeros((h + 1, w + 1))
    s[1:, 1:] = np.cumsum(np.cumsum(x, axis=0), axis=1)
    k = window
    return s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]


class WindowMatcher:
    """NCC of every window of a fixed target against synthesized images.

    Rows of the target and of the images passed to score() must be the same
    image band. score() returns one value per pixel centre of the band,
    UNDEFINED_SCORE where the window leaves the band or is flat.
    """

    def __init__(self, target, window):
        self.target = np.asarray(target, dtype=np.float64)
        self.window = window
        self.n = float(window * window)
        h, w = self.target.shape
        if h < window or w < window:
            self.sb = None
            return
        self.sb = window_sums(self.target, window)
        self.vb = window_sums(self.target * self.target, window) - self.sb * self.sb / self.n
        self.target_ok = self.vb > VARIANCE_EPS * self.n

    def score(self, image):
        h, w = self.target.shape
        out = np.full((h, w), UNDEFINED_SCORE)
        if self.sb is None:
            return out
        image = np.asarray(image, dtype=np.float64)
        sa = window_sums(image, self.window)
        va = window_sums(image * image, self.window) - sa * sa / self.n
        cov = window_sums(image * self.target, self.window) - sa * self.sb / self.n
        ok = self.target_ok & (va > VARIANCE_EPS * self.n)
        with np.errstate(invalid='ignore', divide='ignore'):
            values = np.where(ok, cov / np.sqrt(np.where(ok, va * self.vb, 1.0)), UNDEFINED_SCORE)
        values = np.where(ok, np.clip(values, -1.0, 1.0), UNDEFINED_SCORE)
        half = self.window // 2
        out[half:half + values.shape[0], half:half + values.shape[1]] = values
        return out
