# config.py
import json
import os

from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()


class Config:
    # Runtime
    DB_CACHE_DIR = os.environ.get('MOTIONCODE_DB_CACHE') or os.path.join(os.getcwd(), 'db_cache')
    WORKERS = int(os.environ.get('MOTIONCODE_WORKERS') or 1)
    LOG_LEVEL = os.environ.get('MOTIONCODE_LOG_LEVEL') or 'INFO'
    TILE_ROWS = 16  # fixed tiling keeps results independent of WORKERS

    # Rig (rectified projector-camera pair)
    FOCAL_PX = 1200.0
    BASELINE_MM = 150.0
    CAM_WIDTH = 160
    CAM_HEIGHT = 120
    D_MIN_MM = 500.0
    D_MAX_MM = 800.0
    FOCUS_DEPTH_MM = 650.0
    DEFOCUS_GAIN = 4300.0  # sigma 0-2 px over 500-800 mm
    NOISE_SIGMA = 0.0
    REFERENCE_EXPOSURE = 1.0 / 3.0  # seconds, 3 Hz camera

    # Patterns
    N_PATTERNS_MAX = 10
    TOTAL_DENSITY = 0.3
    DOT_RADIUS = 1
    PATTERN_SEED = 7

    # Marker strip
    MARKER_STRIP_ROWS = (0, 6)
    MARKER_SLOT_WIDTH = 10
    MARKER_SLOT_GAP = 4
    MARKER_COL_OFFSET = 4
    MARKER_THRESHOLD = 0.05
    MIN_FRACTION = 0.1

    # Simulation
    SUBSTEPS = 8

    # Database
    DB_STEP_MM = 0.5

    # Search
    WINDOW = 12
    V_MAX = 100.0
    SCORE_MIN = 0.3

    # Fine search
    LOCAL_RADIUS = 1
    V_ADJACENCY_STEPS = 2.0

    # Belief propagation
    BP_LAMBDA = 0.1
    BP_ITERATIONS = 30
    BP_TRUNCATION = None
    PIPELINE_ORDER = 'coarse,bp,fine,bp'

    # Super-resolution
    REVERSE_RESEARCH = False

    # Matching profiles
    PROFILES = {
        'video-projector': {'window': 12},
        'dlp-16': {'window': 16},
        'dlp-24': {'window': 24},
    }


def default_run_config():
    """Nested run config built from Config defaults"""
    return {
        'rig': {
            'focal_px': Config.FOCAL_PX,
            'baseline_mm': Config.BASELINE_MM,
            'cam_width': Config.CAM_WIDTH,
            'cam_height': Config.CAM_HEIGHT,
            'd_min_mm': Config.D_MIN_MM,
            'd_max_mm': Config.D_MAX_MM,
            'focus_depth_mm': Config.FOCUS_DEPTH_MM,
            'defocus_gain': Config.DEFOCUS_GAIN,
            'noise_sigma': Config.NOISE_SIGMA,
            't_ref': Config.REFERENCE_EXPOSURE,
        },
        'patterns': {
            'n_patterns': Config.N_PATTERNS_MAX,
            'total_density': Config.TOTAL_DENSITY,
            'dot_radius': Config.DOT_RADIUS,
            'seed': Config.PATTERN_SEED,
            'markers': True,
            'strip_rows': list(Config.MARKER_STRIP_ROWS),
            'slot_width': Config.MARKER_SLOT_WIDTH,
            'slot_gap': Config.MARKER_SLOT_GAP,
            'col_offset': Config.MARKER_COL_OFFSET,
        },
        'scene': {
            'depth0': 600.0,
            'velocities': [0.0],
            't_exposure': Config.REFERENCE_EXPOSURE,
            't_proj': Config.REFERENCE_EXPOSURE / 6.0,
            'start_phase': 0.0,
            'first': 0,
            'texture': 'uniform',
            'texture_period': 12,
            'seed': 0,
            'substeps': Config.SUBSTEPS,
        },
        'database': {
            'step_mm': Config.DB_STEP_MM,
        },
        'search': {
            'profile': 'video-projector',
            'window': Config.WINDOW,
            'v_max': Config.V_MAX,
            'v_step': None,
            'score_min': Config.SCORE_MIN,
            'marker_threshold': Config.MARKER_THRESHOLD,
            'min_fraction': Config.MIN_FRACTION,
        },
        'fine': {
            'local_radius': Config.LOCAL_RADIUS,
            'v_adjacency_steps': Config.V_ADJACENCY_STEPS,
        },
        'bp': {
            'lambda': Config.BP_LAMBDA,
            'iterations': Config.BP_ITERATIONS,
            'truncation': Config.BP_TRUNCATION,
            'pipeline_order': Config.PIPELINE_ORDER,
        },
        'superres': {
            'reverse_research': Config.REVERSE_RESEARCH,
        },
        'trend': {
            'axis': 'n_patterns',
            'values': [1, 3, 6],
            'textures': ['uniform'],
            'seeds': [0],
            'n_patterns': 6,
            'velocity': 50.0,
            'depth0': 600.0,
            'use_markers': False,
            'stage': 'coarse',
            'cache': False,
        },
        'runtime': {
            'workers': Config.WORKERS,
            'tile_rows': Config.TILE_ROWS,
        },
    }


def _merge(base, update, path=''):
    for key, value in update.items():
        where = f'{path}.{key}' if path else key
        if key not in base:
            raise ConfigError(f'Unknown config key: {where}')
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f'Config section {where} must be an object')
            _merge(base[key], value, where)
        else:
            base[key] = value


def apply_override(cfg, dotted, value):
    """Set one 'section.key' entry, parsing the value as JSON when possible"""
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
    parts = dotted.split('.')
    node = {}
    cursor = node
    for part in parts[:-1]:
        cursor[part] = {}
        cursor = cursor[part]
    cursor[parts[-1]] = value
    _merge(cfg, node)


def validate_run_config(cfg):
    """Range checks on the values every stage depends on"""
    rig = cfg['rig']
    if not rig['d_min_mm'] <= rig['d_max_mm']:
        raise ConfigError('rig.d_min_mm must not exceed rig.d_max_mm')
    if rig['focal_px'] <= 0 or rig['baseline_mm'] <= 0:
        raise ConfigError('rig.focal_px and rig.baseline_mm must be positive')
    if rig['cam_width'] <= 0 or rig['cam_height'] <= 0:
        raise ConfigError('rig camera size must be positive')
    pats = cfg['patterns']
    if not 0 < pats['total_density'] < 1:
        raise ConfigError('patterns.total_density must lie in (0, 1)')
    if pats['n_patterns'] < 1:
        raise ConfigError('patterns.n_patterns must be at least 1')
    if cfg['database']['step_mm'] <= 0:
        raise ConfigError('database.step_mm must be positive')
    search = cfg['search']
    profile = search.get('profile')
    if profile is not None and profile not in Config.PROFILES:
        raise ConfigError(f'Unknown matching profile: {profile}')
    if search['window'] < 8:
        raise ConfigError('search.window must be at least 8 px')
    if search['v_max'] < 0:
        raise ConfigError('search.v_max must be non-negative')
    if search['v_step'] is not None and search['v_step'] <= 0:
        raise ConfigError('search.v_step must be positive')
    if cfg['fine']['local_radius'] < 0:
        raise ConfigError('fine.local_radius must be non-negative')
    if cfg['fine']['v_adjacency_steps'] <= 0:
        raise ConfigError('fine.v_adjacency_steps must be positive')
    if cfg['bp']['iterations'] < 1:
        raise ConfigError('bp.iterations must be at least 1')
    stages = [s.strip() for s in cfg['bp']['pipeline_order'].split(',') if s.strip()]
    if not stages or stages[0] != 'coarse' or any(s not in ('coarse', 'fine', 'bp') for s in stages):
        raise ConfigError(f'bp.pipeline_order must start with coarse: {cfg["bp"]["pipeline_order"]}')
    trend = cfg['trend']
    if trend['axis'] not in ('n_patterns', 'velocity'):
        raise ConfigError(f'trend.axis must be n_patterns or velocity, got {trend["axis"]}')
    if trend['stage'] not in ('coarse', 'bp'):
        raise ConfigError(f'trend.stage must be coarse or bp, got {trend["stage"]}')
    if not trend['values'] or not trend['textures'] or not trend['seeds']:
        raise ConfigError('trend.values, trend.textures and trend.seeds must not be empty')
    scene = cfg['scene']
    if scene['t_exposure'] <= 0 or scene['t_proj'] <= 0:
        raise ConfigError('scene exposure times must be positive')
    if not 0 <= scene['start_phase'] < 1:
        raise ConfigError('scene.start_phase must lie in [0, 1)')
    return cfg


def load_run_config(path=None, overrides=None):
    """Defaults <- JSON file <- 'section.key=value' overrides.

    A matching profile sets search.window unless the file or an override
    gives the window itself.
    """
    cfg = default_run_config()
    window_set = False
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f'Cannot read config {path}: {e}') from e
        if not isinstance(data, dict):
            raise ConfigError('Run config must be a JSON object')
        window_set = 'window' in (data.get('search') or {})
        _merge(cfg, data)
    for item in overrides or ():
        if '=' not in item:
            raise ConfigError(f'Override must look like section.key=value: {item}')
        key, value = item.split('=', 1)
        key = key.strip()
        apply_override(cfg, key, value.strip())
        window_set = window_set or key == 'search.window'
    profile = cfg['search'].get('profile')
    if profile in Config.PROFILES and not window_set:
        cfg['search']['window'] = Config.PROFILES[profile]['window']
    return validate_run_config(cfg)


def save_resolved_config(cfg, directory):
    """Write the resolved config snapshot next to a run's outputs"""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, 'resolved_config.json')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
    return path
