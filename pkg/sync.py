# sync.py
"""Passive synchronization: read the marker strip of a capture into a schedule.

Slot intensities are taken as proportional to exposure time, which assumes
a linear sensor response.
"""
import logging

import numpy as np

from config import Config
from errors import AmbiguousScheduleError, InvalidArgumentError, NoSignalError
from models import ExposureSchedule

logger = logging.getLogger(__name__)

FULL_SLOT_TOLERANCE = 0.05


def slot_intensities(capture, geometry, n_pmax):
    """Mean intensity of slots 1..n_pmax"""
    image = capture.intensity
    if geometry.strip_rows[1] > image.shape[0] or geometry.strip_width - geometry.slot_gap > image.shape[1]:
        raise InvalidArgumentError('Marker strip does not fit the capture')
    means = []
    for pid in range(1, n_pmax + 1):
        r0, r1, c0, c1 = geometry.slot_of(pid)
        means.append(float(image[r0:r1, c0:c1].mean()))
    return np.asarray(means)


def _start_of_full_cycle(means):
    """Start slot (0-based) when every slot is lit"""
    full = float(np.median(means))
    fractional = np.flatnonzero(means < (1.0 - FULL_SLOT_TOLERANCE) * full)
    n = len(means)
    if fractional.size == 0:
        logger.warning('Every marker slot is fully lit; assuming the exposure starts at slot 1')
        return 0
    if fractional.size == 2:
        a, b = fractional
        if (a + 1) % n == b:
            return b
        if (b + 1) % n == a:
            return a
    raise AmbiguousScheduleError(
        f'Cannot tell where the exposure starts: fractional slots {(fractional + 1).tolist()}')


def decode_markers(capture, geometry, n_pmax, threshold=Config.MARKER_THRESHOLD):
    """Which patterns were captured, in order, and with what exposure share"""
    if n_pmax > geometry.slot_count:
        raise InvalidArgumentError(f'n_pmax={n_pmax} exceeds {geometry.slot_count} marker slots')
    means = slot_intensities(capture, geometry, n_pmax)
    peak = float(means.max())
    if not peak > 0:
        raise NoSignalError('No marker slot is lit')
    active = means > threshold * peak
    starts = [i for i in range(n_pmax) if active[i] and not active[i - 1]]
    if len(starts) > 1:
        raise AmbiguousScheduleError(
            f'Marker activity has {len(starts)} separate runs: '
            f'{(np.flatnonzero(active) + 1).tolist()}')
    start = starts[0] if starts else _start_of_full_cycle(means)
    order = []
    i = start
    while active[i] and len(order) < n_pmax:
        order.append(i)
        i = (i + 1) % n_pmax
    values = means[order]
    weights = (values / values.sum()).tolist()
    schedule = ExposureSchedule(n_start=start, pattern_ids=[k + 1 for k in order], weights=weights,
                                t_exposure=capture.t_exposure, n_pmax=n_pmax)
    logger.info('Decoded schedule: patterns %s', schedule.pattern_ids)
    return schedule


def drop_small_fractions(schedule, min_fraction=Config.MIN_FRACTION):
    """Fold a first/last pattern shorter than min_fraction into its neighbor"""
    if schedule.n_p < 2:
        return schedule
    ids = list(schedule.pattern_ids)
    weights = list(schedule.weights)
    fractions = schedule.interval_fractions
    drop_last = fractions[-1] < min_fraction and len(ids) > 2
    if drop_last:
        weights[-2] += weights[-1]
        logger.warning('Dropping pattern %d (fraction %.3f) from matching', ids[-1], fractions[-1])
        del ids[-1], weights[-1]
    if fractions[0] < min_fraction and len(ids) > 1:
        weights[1] += weights[0]
        logger.warning('Dropping pattern %d (fraction %.3f) from matching', ids[0], fractions[0])
        del ids[0], weights[0]
    if ids == list(schedule.pattern_ids):
        return schedule
    return ExposureSchedule(n_start=(ids[0] - 1) % schedule.n_pmax, pattern_ids=ids, weights=weights,
                            t_exposure=schedule.t_exposure, n_pmax=schedule.n_pmax,
                            direction=schedule.direction)
