import csv
import io
import os

import numpy as np
import pytest

from config import Config, load_run_config
from errors import ConfigError
from trend import COLUMNS, TrendRunner, rows_to_csv, run_trend_experiment


def _config(desk_overrides, *extra):
    return load_run_config(overrides=[*desk_overrides, 'trend.velocity=9.0', 'trend.depth0=600', *extra])


def test_rows_to_csv_formats_floats():
    text = rows_to_csv([['velocity', 9.0, 'uniform', 0, 3, 9.0, 0.01234567, float('nan'), 0.5]])
    lines = text.splitlines()
    assert lines[0] == ','.join(COLUMNS)
    assert lines[1] == 'velocity,9.000000,uniform,0,3,9.000000,0.012346,nan,0.500000'


def test_unknown_texture(desk_overrides):
    with pytest.raises(ConfigError):
        run_trend_experiment(_config(desk_overrides, 'trend.textures=["marble"]'))


def test_bad_axis(desk_overrides):
    with pytest.raises(ConfigError):
        _config(desk_overrides, 'trend.axis="depth"')


def test_pattern_sets_are_reused(desk_overrides):
    runner = TrendRunner(_config(desk_overrides))
    first = runner.pattern_set(2)
    assert runner.pattern_set(2) is first
    assert [p.pattern_id for p in first[0]] == [1, 2]
    assert first[1].n_patterns == 2


def test_cached_database(tmp_path, monkeypatch, desk_overrides):
    monkeypatch.setattr(Config, 'DB_CACHE_DIR', str(tmp_path))
    runner = TrendRunner(_config(desk_overrides, 'trend.cache=true'))
    runner.pattern_set(1)
    assert len(os.listdir(str(tmp_path))) == 1
    assert runner.rig_digest() == TrendRunner(_config(desk_overrides)).rig_digest()


@pytest.mark.slow
def test_pattern_count_sweep(tmp_path, desk_overrides):
    path = tmp_path / 'trend.csv'
    cfg = _config(desk_overrides, 'trend.values=[1, 3]', 'trend.textures=["uniform", "noise"]')
    text = run_trend_experiment(cfg, path=str(path))
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 4
    assert [r['n_patterns'] for r in rows] == ['1', '3', '1', '3']
    for r in rows:
        assert np.isfinite(float(r['plane_rmse_mm']))
        if r['texture'] == 'uniform':
            assert float(r['valid_fraction']) > 0.5
            assert float(r['depth_rmse_mm']) < 2.0
    assert path.read_text() == text


@pytest.mark.slow
def test_velocity_sweep_with_markers(desk_overrides):
    cfg = _config(desk_overrides, 'trend.axis="velocity"', 'trend.values=[0.0, 9.0]', 'trend.n_patterns=3',
                  'trend.use_markers=true', 'trend.stage="bp"')
    rows = list(csv.DictReader(io.StringIO(run_trend_experiment(cfg))))
    assert [float(r['velocity_mm_s']) for r in rows] == [0.0, 9.0]
    assert all(r['n_patterns'] == '3' for r in rows)
    assert all(float(r['depth_rmse_mm']) < 2.0 for r in rows)


# Wider range and coarser slices so a 108 mm/s plane smears a single pattern
# across ~18 px while staying in range for the whole exposure.
TREND = (
    "rig.d_min_mm=580", "rig.d_max_mm=640", "rig.focus_depth_mm=610", "rig.noise_sigma=0.02",
    "database.step_mm=1.0", "scene.substeps=48", "search.v_max=126", "trend.depth0=590",
    "trend.seeds=[1, 2]",
)


def _mean_plane_rmse(rows):
    """{(texture, value): plane RMSE averaged over seeds}"""
    groups = {}
    for row in rows:
        value, texture_name, plane = row[1], row[2], row[6]
        assert np.isfinite(plane)
        groups.setdefault((texture_name, value), []).append(plane)
    return {key: float(np.mean(planes)) for key, planes in groups.items()}


@pytest.mark.slow
def test_more_patterns_do_not_hurt_a_fast_plane(desk_overrides):
    cfg = _config(desk_overrides, *TREND, 'trend.values=[1, 3, 6]', 'trend.velocity=108.0',
                  'trend.textures=["uniform", "checker", "noise", "grain"]')
    means = _mean_plane_rmse(TrendRunner(cfg).run())
    for texture_name in cfg['trend']['textures']:
        curve = [means[(texture_name, n)] for n in (1, 3, 6)]
        assert all(later <= earlier + 1e-6 for earlier, later in zip(curve, curve[1:])), (texture_name, curve)


@pytest.mark.slow
def test_single_pattern_degrades_with_velocity(desk_overrides):
    cfg = _config(desk_overrides, *TREND, 'trend.axis="velocity"', 'trend.n_patterns=1',
                  'trend.values=[36.0, 54.0, 81.0, 108.0]', 'trend.textures=["noise"]')
    means = _mean_plane_rmse(TrendRunner(cfg).run())
    curve = [means[('noise', v)] for v in (36.0, 54.0, 81.0, 108.0)]
    assert all(later > earlier for earlier, later in zip(curve, curve[1:])), curve


@pytest.mark.slow
def test_six_patterns_hold_up_at_speed(desk_overrides):
    cfg = _config(desk_overrides, *TREND, 'trend.axis="velocity"', 'trend.n_patterns=6',
                  'trend.values=[0.0, 108.0]', 'trend.textures=["noise"]')
    means = _mean_plane_rmse(TrendRunner(cfg).run())
    assert means[('noise', 108.0)] <= 3.0 * means[('noise', 0.0)] + 1e-6
