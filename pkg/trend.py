# trend.py
"""Accuracy sweeps over pattern count or velocity, one CSV row per run."""
import csv
import hashlib
import io
import json
import logging
import math

import numpy as np

from errors import ConfigError, DegenerateGeometryError
from evaluate import depth_rmse, fit_plane_rmse
from models import Rig, SceneMotion
from optics import render_capture
from patterns import build_pattern_set, geometry_from_config
from refdb import build as build_database, load_or_build
from scenes import TEXTURES, texture
from search_coarse import estimate_initial, make_grid, search_mask
from search_fine import bp_refine
from sync import decode_markers, drop_small_fractions

logger = logging.getLogger(__name__)

COLUMNS = ['axis', 'value', 'texture', 'seed', 'n_patterns', 'velocity_mm_s',
           'plane_rmse_mm', 'depth_rmse_mm', 'valid_fraction']


def _sweep_points(trend):
    for value in trend['values']:
        if trend['axis'] == 'n_patterns':
            yield value, int(value), float(trend['velocity'])
        else:
            yield value, int(trend['n_patterns']), float(value)


def _format(value):
    if isinstance(value, float):
        return 'nan' if math.isnan(value) else f'{value:.6f}'
    return str(value)


class TrendRunner:
    """Runs sweep points, reusing one database per pattern count"""

    def __init__(self, config, workers=None):
        self.config = config
        self.workers = workers if workers is not None else config['runtime']['workers']
        self.rig = Rig.from_dict(config['rig'])
        self.geometry = geometry_from_config(config['patterns'])
        self._sets = {}

    def rig_digest(self):
        text = json.dumps([self.rig.to_dict(), self.config['database'], self.config['patterns']],
                          sort_keys=True)
        return hashlib.sha1(text.encode('utf-8')).hexdigest()[:12]

    def pattern_set(self, n_patterns):
        if n_patterns not in self._sets:
            pats = self.config['patterns']
            patterns = build_pattern_set(self.rig, n_patterns, pats['total_density'], pats['seed'],
                                         dot_radius=pats['dot_radius'], geometry=self.geometry)
            step = self.config['database']['step_mm']
            if self.config['trend']['cache']:
                key = f'trend_n{n_patterns}_s{pats["seed"]}_{self.rig_digest()}'
                db = load_or_build(self.rig, patterns, step, key, workers=self.workers)
            else:
                db = build_database(self.rig, patterns, step, workers=self.workers)
            self._sets[n_patterns] = (patterns, db)
        return self._sets[n_patterns]

    def run_point(self, n_patterns, velocity, texture_name, seed):
        cfg = self.config
        trend, search, scene_cfg = cfg['trend'], cfg['search'], cfg['scene']
        patterns, db = self.pattern_set(n_patterns)
        rig = self.rig
        albedo = None if texture_name == 'uniform' else texture(
            texture_name, rig.cam_height, rig.cam_width, seed=seed, period=scene_cfg['texture_period'])
        depth0 = float(trend['depth0'])
        scene = SceneMotion.constant(depth0, velocity, scene_cfg['t_exposure'], n_patterns, albedo=albedo)
        capture = render_capture(rig, patterns, scene, seed=seed, substeps=scene_cfg['substeps'])
        if trend['use_markers'] and self.geometry is not None:
            sched = decode_markers(capture, self.geometry, n_patterns, threshold=search['marker_threshold'])
            sched = drop_small_fractions(sched, search['min_fraction'])
        else:
            sched = capture.true_schedule
        window = search['window']
        grid = make_grid(db, sched, v_max=search['v_max'], v_step=search['v_step'])
        mask = search_mask((rig.cam_height, rig.cam_width), window, self.geometry)
        depth, _, cost = estimate_initial(db, capture, sched, grid, window=window,
                                          score_min=search['score_min'], workers=self.workers,
                                          mask=mask, tile_rows=cfg['runtime']['tile_rows'])
        if trend['stage'] == 'bp':
            bp = cfg['bp']
            depth = bp_refine(cost, bp['lambda'], bp['iterations'], bp['truncation'])
        valid = np.isfinite(depth) & mask
        try:
            plane = fit_plane_rmse(depth, mask=valid, rig=rig)
        except DegenerateGeometryError:
            plane = float('nan')
        error = depth_rmse(depth, depth0, valid) if valid.any() else float('nan')
        fraction = float(valid.sum()) / float(mask.sum())
        logger.info('n=%d v=%.1f %s seed %d: plane RMSE %.4f mm, %.1f%% valid',
                    n_patterns, velocity, texture_name, seed, plane, 100.0 * fraction)
        return plane, error, fraction

    def run(self):
        trend = self.config['trend']
        rows = []
        for texture_name in trend['textures']:
            for seed in trend['seeds']:
                for value, n_patterns, velocity in _sweep_points(trend):
                    plane, error, fraction = self.run_point(n_patterns, velocity, texture_name, int(seed))
                    rows.append([trend['axis'], value, texture_name, int(seed), n_patterns, velocity,
                                 plane, error, fraction])
        return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_format(v) for v in row])
    return buf.getvalue()


def run_trend_experiment(config, workers=None, path=None):
    """CSV table for the sweep described by config['trend']"""
    unknown = [t for t in config['trend']['textures'] if t not in TEXTURES]
    if unknown:
        raise ConfigError(f'Unknown texture profiles: {unknown}')
    text = rows_to_csv(TrendRunner(config, workers).run())
    if path:
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
    return text
