# optics.py
"""Forward model of the rectified projector-camera rig.

Camera pixel (row, x) sees pattern pixel (row, x + f*b/d). Defocus is a
Gaussian whose sigma grows with |1/d - 1/focus|. The marker strip sits on a
static in-focus background, so it is copied without shift or blur.
"""
import logging

import numpy as np
from scipy import ndimage

from config import Config
from errors import InvalidArgumentError, OutOfRangeError, ShapeMismatchError
from models import CapturedImage, ExposureSchedule

logger = logging.getLogger(__name__)

SIGMA_LEVEL_STEP = 0.25


def _check_pattern(rig, pattern):
    if pattern.height != rig.cam_height or pattern.width < rig.cam_width:
        raise ShapeMismatchError(
            f'Pattern {pattern.width}x{pattern.height} does not cover a '
            f'{rig.cam_width}x{rig.cam_height} camera')


def _render_plane(rig, intensity, depth):
    """Unit-exposure render of a fronto-parallel plane, marker strip excluded"""
    shifted = ndimage.shift(intensity.astype(np.float64), (0.0, -float(rig.disparity(depth))),
                            order=1, mode='constant', cval=0.0)
    image = shifted[:, :rig.cam_width]
    sigma = float(rig.blur_sigma(depth))
    if sigma > 1e-6:
        image = ndimage.gaussian_filter(image, sigma, mode='constant', cval=0.0)
    return image


class _DepthMapRenderer:
    """Per-pixel depth rendering from a few pre-blurred copies of one pattern"""

    def __init__(self, rig, intensity, max_sigma):
        self.rig = rig
        n_levels = int(np.ceil(max_sigma / SIGMA_LEVEL_STEP)) + 2
        self.levels = np.arange(n_levels) * SIGMA_LEVEL_STEP
        base = intensity.astype(np.float64)
        self.blurred = [base if s == 0 else ndimage.gaussian_filter(base, s, mode='constant')
                        for s in self.levels]
        rows, cols = np.mgrid[0:rig.cam_height, 0:rig.cam_width]
        self.rows = rows.astype(np.float64)
        self.cols = cols.astype(np.float64)

    def __call__(self, depth_map):
        rig = self.rig
        coords = [self.rows, self.cols + rig.disparity(depth_map)]
        sigma = rig.blur_sigma(depth_map)
        pos = np.clip(sigma / SIGMA_LEVEL_STEP, 0, len(self.levels) - 1 - 1e-9)
        lower = np.floor(pos).astype(int)
        frac = pos - lower
        image = np.zeros(depth_map.shape)
        for k in np.unique(lower):
            sel = lower == k
            a = ndimage.map_coordinates(self.blurred[k], coords, order=1, cval=0.0)
            b = ndimage.map_coordinates(self.blurred[k + 1], coords, order=1, cval=0.0)
            image[sel] = ((1 - frac) * a + frac * b)[sel]
        return image


def _apply_strip(rig, image, pattern, weight):
    geometry = pattern.marker
    if geometry is None:
        return
    r0, r1 = geometry.strip_rows
    image[r0:r1, :] += weight * pattern.intensity[r0:r1, :rig.cam_width]


def _measurement_rows(rig, patterns):
    for p in patterns:
        if p.marker is not None:
            return p.marker.measurement_mask(rig.cam_height, rig.cam_width)
    return np.ones((rig.cam_height, rig.cam_width), dtype=bool)


def _add_noise(image, sigma, seed):
    if sigma and sigma > 0:
        rng = np.random.default_rng(seed)
        image = image + rng.normal(0.0, sigma, size=image.shape)
    return np.maximum(image, 0.0)


def render_static(rig, pattern, depth, exposure=None, seed=None, noise_sigma=None, albedo=None):
    """Image of one pattern on a plane at depth, held for exposure seconds"""
    _check_pattern(rig, pattern)
    if np.ndim(depth) != 0 or not rig.in_range(depth):
        raise InvalidArgumentError(
            f'Depth {depth} outside [{rig.d_min_mm}, {rig.d_max_mm}] mm')
    exposure = rig.t_ref if exposure is None else exposure
    scale = exposure / rig.t_ref * rig.gain
    image = _render_plane(rig, pattern.intensity, depth)
    if pattern.marker is not None:
        image[~pattern.marker.measurement_mask(rig.cam_height, rig.cam_width)] = 0.0
    if albedo is not None:
        image = image * albedo
    image = image * scale
    _apply_strip(rig, image, pattern, scale)
    sigma = rig.noise_sigma if noise_sigma is None else noise_sigma
    image = _add_noise(image, sigma, seed)
    schedule = ExposureSchedule(n_start=pattern.pattern_id - 1, pattern_ids=[pattern.pattern_id],
                                weights=[1.0], t_exposure=exposure,
                                n_pmax=pattern.marker.slot_count if pattern.marker else pattern.pattern_id)
    return CapturedImage(intensity=image, t_exposure=exposure, true_schedule=schedule)


def exposure_segments(scene, n_patterns, start_phase=0.0, first=0):
    """(list index, start, end) of every pattern interval inside the exposure"""
    if not 0 <= start_phase < 1:
        raise InvalidArgumentError(f'start_phase must lie in [0, 1), got {start_phase}')
    period = scene.t_proj
    segments = []
    k = 0
    while True:
        start = max(0.0, (k - start_phase) * period)
        end = min(scene.t_exposure, (k + 1 - start_phase) * period)
        if start >= scene.t_exposure - 1e-12 * scene.t_exposure:
            break
        if end - start > 1e-12 * period:
            segments.append(((first + k) % n_patterns, start, end))
        k += 1
    return segments


def _check_depth(rig, depth, velocity, t_start, t_end):
    """Raise OutOfRangeError naming the first time depth leaves the range"""
    end = depth + velocity * (t_end - t_start)
    if rig.in_range(end):
        return end
    with np.errstate(divide='ignore', invalid='ignore'):
        t_low = np.where(end < rig.d_min_mm, (rig.d_min_mm - depth) / velocity, np.inf)
        t_high = np.where(end > rig.d_max_mm, (rig.d_max_mm - depth) / velocity, np.inf)
    t_exit = t_start + float(np.min(np.minimum(t_low, t_high)))
    raise OutOfRangeError(f'Scene leaves [{rig.d_min_mm}, {rig.d_max_mm}] mm at t={t_exit:.6f} s',
                          time=t_exit)


def _cycle_length(patterns, n_pmax=None):
    """Projector cycle length for a pattern list shown in list order.

    A list holding ids 1..len in cycle order is a full cycle. Otherwise the
    marker slot count applies, or the largest id when there are no markers.
    """
    ids = [p.pattern_id for p in patterns]
    if n_pmax is None:
        if sorted(ids) == list(range(1, len(ids) + 1)):
            n_pmax = len(ids)
        elif patterns[0].marker is not None:
            n_pmax = patterns[0].marker.slot_count
        else:
            n_pmax = max(ids)
    if min(ids) < 1 or max(ids) > n_pmax:
        raise InvalidArgumentError(f'Pattern ids {ids} do not fit a cycle of {n_pmax}')
    for a, b in zip(ids, ids[1:]):
        if a % n_pmax + 1 != b:
            raise InvalidArgumentError(f'Pattern ids {ids} are not consecutive modulo {n_pmax}')
    return n_pmax


def render_capture(rig, patterns, scene, start_phase=0.0, first=0,
                   substeps=Config.SUBSTEPS, seed=None, noise_sigma=None, n_pmax=None):
    """Integrate static renders over one exposure while patterns switch.

    patterns cycle in list order starting at patterns[first]; start_phase
    is the part of the first pattern's period already gone when the shutter
    opens. Midpoint rule with substeps samples per pattern interval.
    """
    if not patterns:
        raise InvalidArgumentError('At least one pattern is required')
    if substeps < 1:
        raise InvalidArgumentError('substeps must be at least 1')
    for p in patterns:
        _check_pattern(rig, p)
    n_pmax = _cycle_length(patterns, n_pmax)
    if not rig.in_range(scene.depth0):
        raise OutOfRangeError(f'Initial depth outside [{rig.d_min_mm}, {rig.d_max_mm}] mm', time=0.0)

    segments = exposure_segments(scene, len(patterns), start_phase, first)
    shown = [patterns[i].pattern_id for i, _, _ in segments]
    for a, b in zip(shown, shown[1:]):
        if a % n_pmax + 1 != b:
            raise InvalidArgumentError(
                f'The exposure wraps from p{a} to p{b}, which is not a cycle of {n_pmax} patterns')
    per_pixel = np.ndim(scene.depth0) != 0 or any(np.ndim(v) != 0 for v in scene.velocities)
    renderers = {}
    if per_pixel:
        sigma_max = float(max(rig.blur_sigma(rig.d_min_mm), rig.blur_sigma(rig.d_max_mm)))

    image = np.zeros((rig.cam_height, rig.cam_width))
    strip = np.zeros_like(image)
    depth = np.asarray(scene.depth0, dtype=np.float64)
    if per_pixel:
        depth = np.broadcast_to(depth, image.shape).copy()
    durations = []
    for interval, (index, t_start, t_end) in enumerate(segments):
        pattern = patterns[index]
        velocity = np.asarray(scene.velocity(interval), dtype=np.float64)
        end_depth = _check_depth(rig, depth, velocity, t_start, t_end)
        dt = (t_end - t_start) / substeps
        for j in range(substeps):
            d = depth + velocity * ((j + 0.5) * dt)
            if per_pixel:
                if index not in renderers:
                    renderers[index] = _DepthMapRenderer(rig, pattern.intensity, sigma_max)
                frame = renderers[index](np.broadcast_to(d, image.shape))
            else:
                frame = _render_plane(rig, pattern.intensity, float(d))
            image += frame * (dt / rig.t_ref)
        _apply_strip(rig, strip, pattern, (t_end - t_start) / rig.t_ref)
        durations.append(t_end - t_start)
        depth = end_depth

    image[~_measurement_rows(rig, patterns)] = 0.0
    if scene.albedo is not None:
        image = image * scene.albedo
    image = (image + strip) * rig.gain
    sigma = rig.noise_sigma if noise_sigma is None else noise_sigma
    image = _add_noise(image, sigma, seed)

    total = float(sum(durations))
    schedule = ExposureSchedule(
        n_start=shown[0] - 1,
        pattern_ids=shown,
        weights=[d / total for d in durations],
        t_exposure=scene.t_exposure,
        n_pmax=n_pmax,
    )
    logger.debug('Rendered capture: %d intervals, T_E=%.4f s', len(segments), scene.t_exposure)
    return CapturedImage(intensity=image, t_exposure=scene.t_exposure, true_schedule=schedule)
