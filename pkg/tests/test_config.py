import json

import pytest

from config import Config, apply_override, default_run_config, load_run_config, save_resolved_config
from errors import ConfigError


def test_defaults_match_config_class():
    cfg = load_run_config()
    assert cfg['rig']['focal_px'] == Config.FOCAL_PX
    assert cfg['search']['window'] == Config.WINDOW
    assert cfg['bp']['lambda'] == Config.BP_LAMBDA
    assert cfg['database']['step_mm'] == 0.5


def test_override_parses_json_values():
    cfg = load_run_config(overrides=['search.v_max=60', 'patterns.markers=false',
                                     'scene.velocities=[10, 20]', 'search.profile=dlp-16'])
    assert cfg['search']['v_max'] == 60
    assert cfg['patterns']['markers'] is False
    assert cfg['scene']['velocities'] == [10, 20]
    assert cfg['search']['profile'] == 'dlp-16'


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError):
        load_run_config(overrides=['search.speed=3'])
    with pytest.raises(ConfigError):
        apply_override(default_run_config(), 'nosection.key', 1)


def test_override_needs_equals_sign():
    with pytest.raises(ConfigError):
        load_run_config(overrides=['search.window'])


@pytest.mark.parametrize('override', [
    'rig.d_min_mm=900',
    'search.window=6',
    'search.profile="laser"',
    'patterns.total_density=1.5',
    'bp.pipeline_order="fine,bp"',
    'trend.axis="texture"',
    'scene.start_phase=1.0',
])
def test_invalid_values_raise_config_error(override):
    with pytest.raises(ConfigError):
        load_run_config(overrides=[override])


def test_profile_sets_window_from_file(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'search': {'profile': 'dlp-24'}}))
    assert load_run_config(str(path))['search']['window'] == 24


def test_explicit_window_wins_over_profile(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'search': {'profile': 'dlp-24', 'window': 16}}))
    assert load_run_config(str(path))['search']['window'] == 16


def test_unreadable_config_file(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{not json')
    with pytest.raises(ConfigError):
        load_run_config(str(path))


def test_resolved_config_snapshot(tmp_path):
    cfg = load_run_config(overrides=['search.v_max=42'])
    path = save_resolved_config(cfg, str(tmp_path / 'out'))
    with open(path, encoding='utf-8') as f:
        assert json.load(f) == cfg


def test_config_error_exit_code():
    assert ConfigError.exit_code == 2


def test_profile_override_sets_window():
    cfg = load_run_config(overrides=['search.profile=dlp-24'])
    assert cfg['search']['window'] == 24


def test_profile_override_replaces_file_profile(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'search': {'profile': 'dlp-16'}}))
    assert load_run_config(str(path), ['search.profile=dlp-24'])['search']['window'] == 24


def test_window_override_wins_over_profile():
    cfg = load_run_config(overrides=['search.window=20', 'search.profile=dlp-24'])
    assert cfg['search']['window'] == 20
