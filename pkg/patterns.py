# patterns.py
"""Random dot projection patterns, density equalized sets and marker strips.

Randomness comes from numpy's PCG64 generator seeded with (seed, pattern_id),
so a pattern set is reproducible on every platform.
"""
import json
import logging
import os

import numpy as np
from scipy import ndimage

from config import Config
from errors import CorruptDatabaseError, InvalidArgumentError
from models import DotPattern, MarkerGeometry
from pnm import read_pgm, write_pgm

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'patterns.json'


def disc(radius):
    """Boolean disc structuring element"""
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy * yy + xx * xx) <= r * r


def _place_dots(height, width, target, rng, radius, available):
    lit = np.zeros(height * width, dtype=bool)
    footprint = disc(radius)
    area = int(footprint.sum())
    count = 0
    while count < target:
        need = target - count
        candidates = np.flatnonzero(available & ~lit)
        n = min(max(1, need // area), candidates.size)
        centers = rng.choice(candidates, size=n, replace=False)
        stamp = np.zeros(height * width, dtype=bool)
        stamp[centers] = True
        if radius > 0:
            stamp = ndimage.binary_dilation(stamp.reshape(height, width), structure=footprint).ravel()
        new = np.flatnonzero(stamp & available & ~lit)
        if new.size > need:
            new = rng.permutation(new)[:need]
        lit[new] = True
        count += new.size
    return lit.reshape(height, width)


def generate_pattern(width, height, density, pattern_id, seed,
                     dot_radius=Config.DOT_RADIUS, exclude=None):
    """Uniformly placed binary dots with an exact lit-pixel count.

    exclude marks pixels that must stay dark (used for disjoint sets).
    """
    if width <= 0 or height <= 0:
        raise InvalidArgumentError(f'Pattern size must be positive, got {width}x{height}')
    if not 0 < density < 1:
        raise InvalidArgumentError(f'Dot density must lie in (0, 1), got {density}')
    if pattern_id < 1:
        raise InvalidArgumentError(f'Pattern ids start at 1, got {pattern_id}')
    available = np.ones(height * width, dtype=bool)
    if exclude is not None:
        available &= ~np.asarray(exclude, dtype=bool).ravel()
    target = int(round(density * width * height))
    if target > int(available.sum()):
        raise InvalidArgumentError(f'Density {density} does not fit the free pixels')
    rng = np.random.default_rng([int(seed), int(pattern_id)])
    lit = _place_dots(height, width, target, rng, dot_radius, available)
    return DotPattern(intensity=lit.astype(np.float32), dot_density=float(density),
                      pattern_id=int(pattern_id), seed=int(seed), dot_radius=int(dot_radius))


def generate_equalized_set(n_patterns, total_density, width, height, seed,
                           dot_radius=Config.DOT_RADIUS, first_id=1):
    """n patterns at total_density / n each, with dots disjoint across the set.

    Disjoint dots make the temporal composite hit total_density exactly for
    every n, so captures with different pattern counts carry the same dot
    density.
    """
    if n_patterns < 1:
        raise InvalidArgumentError(f'n_patterns must be at least 1, got {n_patterns}')
    if not 0 < total_density < 1:
        raise InvalidArgumentError(f'total_density must lie in (0, 1), got {total_density}')
    per_pattern = total_density / n_patterns
    if per_pattern >= 1:
        raise InvalidArgumentError('Per-pattern density must stay below 1')
    used = np.zeros((height, width), dtype=bool)
    patterns = []
    for k in range(n_patterns):
        pattern = generate_pattern(width, height, per_pattern, first_id + k, seed,
                                   dot_radius=dot_radius, exclude=used)
        used |= pattern.intensity > 0.5
        patterns.append(pattern)
    logger.debug('Generated %d patterns at density %.4f each', n_patterns, per_pattern)
    return patterns


def composite(patterns):
    """Pixelwise max over a pattern set"""
    return np.max(np.stack([p.intensity for p in patterns]), axis=0)


def embed_marker(pattern, geometry):
    """Light this pattern's slot in the marker strip, darken the rest of the strip"""
    if not geometry.fits(pattern.height, pattern.width):
        raise InvalidArgumentError(
            f'Marker strip ({geometry.strip_rows}, width {geometry.strip_width}) '
            f'does not fit a {pattern.width}x{pattern.height} pattern')
    r0, r1, c0, c1 = geometry.slot_of(pattern.pattern_id)
    intensity = pattern.intensity.copy()
    intensity[geometry.strip_rows[0]:geometry.strip_rows[1], :] = 0.0
    intensity[r0:r1, c0:c1] = 1.0
    return DotPattern(intensity=intensity, dot_density=pattern.dot_density,
                      pattern_id=pattern.pattern_id, seed=pattern.seed,
                      dot_radius=pattern.dot_radius, marker=geometry)


def build_pattern_set(rig, n_patterns, total_density, seed, dot_radius=Config.DOT_RADIUS,
                      geometry=None):
    """Equalized set sized for the rig, with markers when geometry is given"""
    height, width = rig.projector_shape
    patterns = generate_equalized_set(n_patterns, total_density, width, height, seed,
                                      dot_radius=dot_radius)
    if geometry is not None:
        patterns = [embed_marker(p, geometry) for p in patterns]
    return patterns


# ==================== FILES ====================

def save_pattern_set(patterns, directory):
    """8-bit PGM per pattern plus a JSON manifest"""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for p in patterns:
        filename = f'pattern_{p.pattern_id:02d}.pgm'
        write_pgm(os.path.join(directory, filename), p.intensity, maxval=255, scale=255.0)
        entry = p.to_dict()
        entry['file'] = filename
        entries.append(entry)
    manifest = {'patterns': entries}
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)
    return path


def load_pattern_set(directory):
    path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptDatabaseError(f'Cannot read pattern manifest {path}: {e}') from e
    patterns = []
    for entry in manifest['patterns']:
        pixels = read_pgm(os.path.join(directory, entry['file']))
        if pixels.shape != (entry['height'], entry['width']):
            raise CorruptDatabaseError(f'{entry["file"]} does not match its manifest size')
        marker = MarkerGeometry.from_dict(entry['marker']) if entry.get('marker') else None
        patterns.append(DotPattern(intensity=(pixels / 255.0).astype(np.float32),
                                   dot_density=float(entry['density']),
                                   pattern_id=int(entry['pattern_id']),
                                   seed=int(entry['seed']),
                                   dot_radius=int(entry.get('dot_radius', Config.DOT_RADIUS)),
                                   marker=marker))
    return patterns


def geometry_from_config(section):
    """MarkerGeometry for a 'patterns' config section, None when markers are off"""
    if not section.get('markers'):
        return None
    return MarkerGeometry(strip_rows=tuple(section['strip_rows']), slot_width=section['slot_width'],
                          slot_count=Config.N_PATTERNS_MAX, slot_gap=section['slot_gap'],
                          col_offset=section['col_offset'])
