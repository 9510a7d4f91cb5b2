# refdb.py
"""Reference image database: one noise-free static render per (pattern, depth).

On disk a database is a directory holding manifest.json and one raw
little-endian float32 stack per pattern (depth-major, then row-major).
"""
import json
import logging
import os

import numpy as np

from config import Config
from errors import CorruptDatabaseError, InvalidArgumentError, SliceIndexError
from models import Patch, ReferenceDatabase, Rig
from optics import render_static
from parallel import parallel_map

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
FORMAT_NAME = 'motioncode-refdb'
FORMAT_VERSION = 1


def build(rig, patterns, step_mm, t_exposure_ref=None, workers=None):
    """Render every pattern on a plane at every depth slice"""
    if not patterns:
        raise InvalidArgumentError('At least one pattern is required')
    if step_mm <= 0:
        raise InvalidArgumentError(f'Depth step must be positive, got {step_mm}')
    span = rig.d_max_mm - rig.d_min_mm
    if span > 0 and step_mm > span:
        raise InvalidArgumentError(f'Depth step {step_mm} mm exceeds the {span} mm range')
    ids = [p.pattern_id for p in patterns]
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError(f'Duplicate pattern ids: {ids}')
    t_ref = rig.t_ref if t_exposure_ref is None else t_exposure_ref
    n_depths = ReferenceDatabase.slice_count(rig.d_min_mm, rig.d_max_mm, step_mm)
    slices = np.empty((len(patterns), n_depths, rig.cam_height, rig.cam_width), dtype=np.float32)

    def render(job):
        k, i = job
        depth = min(rig.d_min_mm + i * step_mm, rig.d_max_mm)
        slices[k, i] = render_static(rig, patterns[k], depth, exposure=t_ref, noise_sigma=0.0).intensity
        return job

    jobs = [(k, i) for k in range(len(patterns)) for i in range(n_depths)]
    parallel_map(render, jobs, workers)
    slices.setflags(write=False)
    logger.info('Built database: %d patterns x %d slices (%.1f-%.1f mm, step %.3f mm)',
                len(patterns), n_depths, rig.d_min_mm, rig.d_max_mm, step_mm)
    return ReferenceDatabase(d_min_mm=rig.d_min_mm, d_max_mm=rig.d_max_mm, step_mm=step_mm,
                             t_exposure_ref=t_ref, pattern_ids=ids, slices=slices,
                             n_pmax=max(ids), rig=rig)


def slice_patch(db, pattern_id, depth_index, center, window):
    """Read-only window of one slice; clamped at borders and flagged partial"""
    k = db.pattern_index(pattern_id)
    if not 0 <= depth_index < db.n_depths:
        raise SliceIndexError(f'Depth index {depth_index} outside [0, {db.n_depths})')
    if window < 1:
        raise InvalidArgumentError('Window must be at least 1 px')
    row, col = center
    r0, c0 = row - window // 2, col - window // 2
    r1, c1 = r0 + window, c0 + window
    cr0, cc0 = max(r0, 0), max(c0, 0)
    cr1, cc1 = min(r1, db.height), min(c1, db.width)
    if cr0 >= cr1 or cc0 >= cc1:
        raise SliceIndexError(f'Window at {center} lies outside the image')
    partial = (cr0, cr1, cc0, cc1) != (r0, r1, c0, c1)
    view = db.slices[k, depth_index, cr0:cr1, cc0:cc1]
    if view.flags.writeable:
        view = view.view()
        view.setflags(write=False)
    return Patch(data=view, partial=partial, bounds=(cr0, cr1, cc0, cc1))


# ==================== FILES ====================

def _stack_file(pattern_id):
    return f'pattern_{pattern_id:02d}.f32'


def save(db, path):
    os.makedirs(path, exist_ok=True)
    manifest = db.to_dict()
    manifest.update({
        'format': FORMAT_NAME,
        'version': FORMAT_VERSION,
        'dtype': 'float32',
        'endianness': 'little',
        'layout': 'depth,row,col',
        'files': {str(pid): _stack_file(pid) for pid in db.pattern_ids},
    })
    for k, pid in enumerate(db.pattern_ids):
        db.slices[k].astype('<f4').tofile(os.path.join(path, _stack_file(pid)))
    with open(os.path.join(path, MANIFEST_NAME), 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)
    logger.info('Saved database to %s', path)
    return path


def _read_manifest(path):
    try:
        with open(os.path.join(path, MANIFEST_NAME), 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptDatabaseError(f'Cannot read database manifest in {path}: {e}') from e
    required = ('format', 'd_min_mm', 'd_max_mm', 'step_mm', 't_exposure_ref', 'pattern_ids',
                'n_depths', 'height', 'width', 'dtype', 'endianness', 'files')
    missing = [k for k in required if k not in manifest]
    if missing:
        raise CorruptDatabaseError(f'Manifest is missing {", ".join(missing)}')
    if manifest['format'] != FORMAT_NAME or manifest['dtype'] != 'float32' \
            or manifest['endianness'] != 'little':
        raise CorruptDatabaseError('Unsupported database format')
    expected = ReferenceDatabase.slice_count(manifest['d_min_mm'], manifest['d_max_mm'],
                                             manifest['step_mm'])
    if manifest['n_depths'] != expected:
        raise CorruptDatabaseError(
            f'Manifest lists {manifest["n_depths"]} slices, depth range implies {expected}')
    return manifest


def _check_shape(manifest):
    ids, files = manifest['pattern_ids'], manifest['files']
    height, width = manifest['height'], manifest['width']
    if not isinstance(height, int) or not isinstance(width, int) or height < 1 or width < 1:
        raise CorruptDatabaseError(f'Invalid slice size {width}x{height}')
    if len(files) != len(ids):
        raise CorruptDatabaseError(f'Manifest lists {len(files)} stack files for {len(ids)} patterns')
    rig = manifest.get('rig')
    if rig and (rig.get('cam_height'), rig.get('cam_width')) != (height, width):
        raise CorruptDatabaseError(
            f'Slices are {width}x{height} but the rig camera is {rig.get("cam_width")}x{rig.get("cam_height")}')


def load(path):
    manifest = _read_manifest(path)
    _check_shape(manifest)
    ids = [int(p) for p in manifest['pattern_ids']]
    n_depths, height, width = manifest['n_depths'], manifest['height'], manifest['width']
    count = n_depths * height * width
    slices = np.empty((len(ids), n_depths, height, width), dtype=np.float32)
    for k, pid in enumerate(ids):
        filename = manifest['files'].get(str(pid))
        if filename is None:
            raise CorruptDatabaseError(f'No stack file listed for pattern {pid}')
        stack_path = os.path.join(path, filename)
        try:
            size = os.path.getsize(stack_path)
        except OSError as e:
            raise CorruptDatabaseError(f'Missing stack file {stack_path}') from e
        if size != count * 4:
            raise CorruptDatabaseError(
                f'{filename} holds {size} bytes, manifest implies {count * 4}')
        slices[k] = np.fromfile(stack_path, dtype='<f4', count=count).reshape(n_depths, height, width)
    slices.setflags(write=False)
    rig = Rig.from_dict(manifest['rig']) if manifest.get('rig') else None
    return ReferenceDatabase(d_min_mm=manifest['d_min_mm'], d_max_mm=manifest['d_max_mm'],
                             step_mm=manifest['step_mm'], t_exposure_ref=manifest['t_exposure_ref'],
                             pattern_ids=ids, slices=slices,
                             n_pmax=int(manifest.get('n_pmax') or max(ids)), rig=rig)


def databases_equal(a, b):
    return (a.to_dict() == b.to_dict()
            and a.slices.dtype == b.slices.dtype
            and np.array_equal(a.slices, b.slices))


# ==================== CACHE ====================

def cached_path(key, cache_dir=None):
    return os.path.join(cache_dir or Config.DB_CACHE_DIR, key)


def load_or_build(rig, patterns, step_mm, key, cache_dir=None, workers=None):
    """Reuse a cached database when its manifest is present"""
    path = cached_path(key, cache_dir)
    if os.path.exists(os.path.join(path, MANIFEST_NAME)):
        logger.info('Using cached database %s', path)
        return load(path)
    db = build(rig, patterns, step_mm, workers=workers)
    save(db, path)
    return db
