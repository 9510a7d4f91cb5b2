# scenes.py
"""Scene descriptions: JSON scene files and albedo texture profiles."""
import json
import os

import numpy as np
from scipy import ndimage

from config import Config
from errors import ConfigError, InvalidArgumentError
from models import SceneMotion
from pnm import read_pfm

TEXTURES = ('uniform', 'checker', 'noise', 'grain')


def texture(name, height, width, seed=0, period=12):
    """Multiplicative albedo map for a board material.

    checker stands in for printed checkers (period near the window size),
    noise for newspaper print, grain for wood, uniform for crumpled paper.
    """
    rng = np.random.default_rng([int(seed), 0x7e47])
    if name == 'uniform':
        return np.ones((height, width))
    if name == 'checker':
        if period < 1:
            raise InvalidArgumentError('Checker period must be positive')
        rows, cols = np.mgrid[0:height, 0:width]
        cells = (rows // period + cols // period) % 2
        return np.where(cells == 0, 1.0, 0.5)
    if name == 'noise':
        return rng.uniform(0.5, 1.0, size=(height, width))
    if name == 'grain':
        field = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma=max(period, 1) / 2.0)
        span = field.max() - field.min()
        field = (field - field.min()) / span if span > 0 else np.zeros_like(field)
        return 0.6 + 0.4 * field
    raise InvalidArgumentError(f'Unknown texture profile: {name} (choose from {", ".join(TEXTURES)})')


def scene_from_config(section, rig, base_dir='.'):
    """SceneMotion plus render settings from a 'scene' config section"""
    depth0 = section['depth0']
    if isinstance(depth0, str):
        depth0 = read_pfm(os.path.join(base_dir, depth0)).astype(np.float64)
        if depth0.shape != (rig.cam_height, rig.cam_width):
            raise ConfigError(f'Depth map is {depth0.shape}, camera is {(rig.cam_height, rig.cam_width)}')
    velocities = section.get('velocities') or [0.0]
    albedo = None
    name = section.get('texture', 'uniform')
    if name != 'uniform':
        albedo = texture(name, rig.cam_height, rig.cam_width, seed=section.get('seed', 0),
                         period=section.get('texture_period', 12))
    try:
        scene = SceneMotion(depth0=depth0, velocities=[float(v) for v in velocities],
                            t_exposure=float(section['t_exposure']), t_proj=float(section['t_proj']),
                            albedo=albedo)
    except InvalidArgumentError as e:
        raise ConfigError(str(e)) from e
    settings = {
        'start_phase': float(section.get('start_phase', 0.0)),
        'first': int(section.get('first', 0)),
        'seed': section.get('seed'),
        'substeps': int(section.get('substeps', Config.SUBSTEPS)),
    }
    return scene, settings


def load_scene(path, rig):
    """Read a scene JSON file (depth0 may name a PFM next to it)"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            section = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f'Cannot read scene {path}: {e}') from e
    for key in ('depth0', 't_exposure', 't_proj'):
        if key not in section:
            raise ConfigError(f'Scene file {path} is missing {key}')
    return scene_from_config(section, rig, base_dir=os.path.dirname(os.path.abspath(path)))
