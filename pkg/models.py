# models.py
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from config import Config
from errors import InvalidArgumentError, SliceIndexError


def _as_list(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


# ==================== PATTERNS ====================

@dataclass(frozen=True)
class MarkerGeometry:
    """Marker strip at the top of the pattern, one slot per pattern id"""

    strip_rows: tuple = Config.MARKER_STRIP_ROWS
    slot_width: int = Config.MARKER_SLOT_WIDTH
    slot_count: int = Config.N_PATTERNS_MAX
    slot_gap: int = Config.MARKER_SLOT_GAP
    col_offset: int = Config.MARKER_COL_OFFSET

    def __post_init__(self):
        r0, r1 = self.strip_rows
        if not 0 <= r0 < r1:
            raise InvalidArgumentError(f'Invalid marker strip rows: {self.strip_rows}')
        if self.slot_width < 1 or self.slot_count < 1 or self.slot_gap < 0 or self.col_offset < 0:
            raise InvalidArgumentError('Marker slot sizes must be positive')

    @property
    def strip_width(self):
        return self.col_offset + self.slot_count * (self.slot_width + self.slot_gap)

    def slot_of(self, pattern_id):
        """Pixel rectangle (row0, row1, col0, col1) of a slot, half-open"""
        if not 1 <= pattern_id <= self.slot_count:
            raise InvalidArgumentError(
                f'Pattern id {pattern_id} has no marker slot (slot_count={self.slot_count})')
        c0 = self.col_offset + (pattern_id - 1) * (self.slot_width + self.slot_gap)
        return self.strip_rows[0], self.strip_rows[1], c0, c0 + self.slot_width

    def fits(self, height, width):
        return self.strip_rows[1] <= height and self.strip_width - self.slot_gap <= width

    def measurement_mask(self, height, width):
        """True on rows usable for measurement"""
        mask = np.ones((height, width), dtype=bool)
        mask[self.strip_rows[0]:self.strip_rows[1], :] = False
        return mask

    def to_dict(self):
        return {
            'strip_rows': list(self.strip_rows),
            'slot_width': self.slot_width,
            'slot_count': self.slot_count,
            'slot_gap': self.slot_gap,
            'col_offset': self.col_offset,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            strip_rows=tuple(data['strip_rows']),
            slot_width=int(data['slot_width']),
            slot_count=int(data['slot_count']),
            slot_gap=int(data.get('slot_gap', Config.MARKER_SLOT_GAP)),
            col_offset=int(data.get('col_offset', Config.MARKER_COL_OFFSET)),
        )


@dataclass
class DotPattern:
    intensity: np.ndarray
    dot_density: float
    pattern_id: int
    seed: int
    dot_radius: int = Config.DOT_RADIUS
    marker: Optional[MarkerGeometry] = None

    @property
    def height(self):
        return self.intensity.shape[0]

    @property
    def width(self):
        return self.intensity.shape[1]

    def lit_fraction(self):
        return float(np.count_nonzero(self.intensity > 0.5)) / self.intensity.size

    def to_dict(self):
        return {
            'pattern_id': self.pattern_id,
            'seed': self.seed,
            'density': self.dot_density,
            'dot_radius': self.dot_radius,
            'width': self.width,
            'height': self.height,
            'marker': self.marker.to_dict() if self.marker else None,
        }


# ==================== RIG AND SCENE ====================

@dataclass(frozen=True)
class Rig:
    focal_px: float = Config.FOCAL_PX
    baseline_mm: float = Config.BASELINE_MM
    cam_width: int = Config.CAM_WIDTH
    cam_height: int = Config.CAM_HEIGHT
    d_min_mm: float = Config.D_MIN_MM
    d_max_mm: float = Config.D_MAX_MM
    focus_depth_mm: float = Config.FOCUS_DEPTH_MM
    defocus_gain: float = Config.DEFOCUS_GAIN
    noise_sigma: float = Config.NOISE_SIGMA
    t_ref: float = Config.REFERENCE_EXPOSURE
    gain: float = 1.0

    def __post_init__(self):
        if self.focal_px <= 0 or self.baseline_mm <= 0:
            raise InvalidArgumentError('focal_px and baseline_mm must be positive')
        if not 0 < self.d_min_mm <= self.d_max_mm:
            raise InvalidArgumentError(
                f'Invalid depth range [{self.d_min_mm}, {self.d_max_mm}]')
        if self.cam_width <= 0 or self.cam_height <= 0:
            raise InvalidArgumentError('Camera size must be positive')
        if self.t_ref <= 0:
            raise InvalidArgumentError('t_ref must be positive')
        if self.noise_sigma < 0 or self.defocus_gain < 0:
            raise InvalidArgumentError('noise_sigma and defocus_gain must be non-negative')

    def disparity(self, depth):
        return self.focal_px * self.baseline_mm / np.asarray(depth, dtype=np.float64)

    def blur_sigma(self, depth):
        return self.defocus_gain * np.abs(1.0 / np.asarray(depth, dtype=np.float64)
                                          - 1.0 / self.focus_depth_mm)

    @property
    def projector_width(self):
        """Pattern width needed to cover the camera at the nearest depth"""
        return self.cam_width + int(math.ceil(float(self.disparity(self.d_min_mm)))) + 2

    @property
    def projector_shape(self):
        return self.cam_height, self.projector_width

    def in_range(self, depth):
        depth = np.asarray(depth)
        return bool(np.all((depth >= self.d_min_mm - 1e-9) & (depth <= self.d_max_mm + 1e-9)))

    def to_dict(self):
        return {
            'focal_px': self.focal_px,
            'baseline_mm': self.baseline_mm,
            'cam_width': self.cam_width,
            'cam_height': self.cam_height,
            'd_min_mm': self.d_min_mm,
            'd_max_mm': self.d_max_mm,
            'focus_depth_mm': self.focus_depth_mm,
            'defocus_gain': self.defocus_gain,
            'noise_sigma': self.noise_sigma,
            't_ref': self.t_ref,
            'gain': self.gain,
        }

    @classmethod
    def from_dict(cls, data):
        known = cls().to_dict()
        return cls(**{k: data[k] for k in known if k in data})


@dataclass
class SceneMotion:
    """Plane or depth map moving along the optical axis.

    velocities holds one entry per pattern interval (scalar or per-pixel
    map, mm/s); the last entry repeats if the exposure has more intervals.
    """

    depth0: object
    velocities: list
    t_exposure: float
    t_proj: float
    albedo: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.t_exposure <= 0 or self.t_proj <= 0:
            raise InvalidArgumentError('t_exposure and t_proj must be positive')
        if not self.velocities:
            raise InvalidArgumentError('At least one interval velocity is required')
        if self.n_p < 1:
            raise InvalidArgumentError(
                f'T_E={self.t_exposure} shorter than one projection period {self.t_proj}')

    @property
    def n_p(self):
        return int(math.floor(self.t_exposure / self.t_proj + 1e-9))

    def velocity(self, interval):
        return self.velocities[min(interval, len(self.velocities) - 1)]

    @classmethod
    def constant(cls, depth0, velocity, t_exposure, n_p, albedo=None):
        return cls(depth0=depth0, velocities=[velocity], t_exposure=t_exposure,
                   t_proj=t_exposure / n_p, albedo=albedo)

    @classmethod
    def accelerating(cls, depth0, v0, accel, t_exposure, n_p, albedo=None):
        """v_n = v0 + a * n * dt, sampled once per pattern interval"""
        dt = t_exposure / n_p
        velocities = [v0 + accel * n * dt for n in range(n_p + 1)]
        return cls(depth0=depth0, velocities=velocities, t_exposure=t_exposure,
                   t_proj=dt, albedo=albedo)

    def to_dict(self):
        return {
            'depth0': _as_list(self.depth0) if np.ndim(self.depth0) == 0 else 'map',
            'velocities': [float(v) if np.ndim(v) == 0 else 'map' for v in self.velocities],
            't_exposure': self.t_exposure,
            't_proj': self.t_proj,
        }


# ==================== SCHEDULE ====================

@dataclass
class ExposureSchedule:
    """Which patterns fell into one exposure, in order, and for how long.

    weights are normalized to sum 1. direction is -1 for a time-reversed
    schedule, whose ids run backwards through the cycle.
    """

    n_start: int
    pattern_ids: list
    weights: list
    t_exposure: float
    n_pmax: int
    direction: int = 1

    def __post_init__(self):
        if not self.pattern_ids or len(self.pattern_ids) != len(self.weights):
            raise InvalidArgumentError('Schedule needs one weight per pattern id')
        total = float(sum(self.weights))
        if abs(total - 1.0) > 1e-3:
            raise InvalidArgumentError(f'Schedule weights sum to {total}, expected 1')
        if any(w < 0 for w in self.weights):
            raise InvalidArgumentError('Schedule weights must be non-negative')
        for a, b in zip(self.pattern_ids, self.pattern_ids[1:]):
            if (a - 1 + self.direction) % self.n_pmax != b - 1:
                raise InvalidArgumentError(
                    f'Pattern ids {self.pattern_ids} are not consecutive modulo {self.n_pmax}')

    @property
    def n_p(self):
        return len(self.pattern_ids)

    @property
    def interval_fractions(self):
        """Exposure share of each interval relative to a full interval"""
        w = np.asarray(self.weights, dtype=np.float64)
        full = float(np.median(w[1:-1])) if len(w) >= 3 else float(w.max())
        return w / full

    @property
    def effective_np(self):
        return float(self.interval_fractions.sum())

    @property
    def delta_t(self):
        """Duration of a full pattern interval"""
        return self.t_exposure / self.effective_np

    def interval_durations(self):
        return self.interval_fractions * self.delta_t

    def reversed(self):
        return ExposureSchedule(
            n_start=self.pattern_ids[-1] - 1,
            pattern_ids=list(reversed(self.pattern_ids)),
            weights=list(reversed(self.weights)),
            t_exposure=self.t_exposure,
            n_pmax=self.n_pmax,
            direction=-self.direction,
        )

    @classmethod
    def uniform(cls, first_id, n_p, n_pmax, t_exposure):
        ids = [(first_id - 1 + k) % n_pmax + 1 for k in range(n_p)]
        return cls(n_start=first_id - 1, pattern_ids=ids, weights=[1.0 / n_p] * n_p,
                   t_exposure=t_exposure, n_pmax=n_pmax)

    def to_dict(self):
        return {
            'n_start': self.n_start,
            'pattern_ids': list(self.pattern_ids),
            'weights': [float(w) for w in self.weights],
            'n_p': self.n_p,
            't_exposure': self.t_exposure,
            'n_pmax': self.n_pmax,
            'direction': self.direction,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(n_start=int(data['n_start']), pattern_ids=[int(p) for p in data['pattern_ids']],
                   weights=[float(w) for w in data['weights']], t_exposure=float(data['t_exposure']),
                   n_pmax=int(data['n_pmax']), direction=int(data.get('direction', 1)))


@dataclass
class CapturedImage:
    intensity: np.ndarray
    t_exposure: float
    true_schedule: Optional[ExposureSchedule] = None

    @property
    def shape(self):
        return self.intensity.shape


# ==================== DATABASE ====================

@dataclass
class ReferenceDatabase:
    """Static reference images, slices[pattern_index, depth_index, row, col]"""

    d_min_mm: float
    d_max_mm: float
    step_mm: float
    t_exposure_ref: float
    pattern_ids: list
    slices: np.ndarray
    n_pmax: int = 0
    rig: Optional[Rig] = None

    def __post_init__(self):
        if not self.n_pmax:
            self.n_pmax = max(self.pattern_ids)
        self._index = {pid: k for k, pid in enumerate(self.pattern_ids)}

    @staticmethod
    def slice_count(d_min, d_max, step):
        return int(math.floor((d_max - d_min) / step + 1e-9)) + 1

    @property
    def n_patterns(self):
        return len(self.pattern_ids)

    @property
    def n_depths(self):
        return self.slices.shape[1]

    @property
    def height(self):
        return self.slices.shape[2]

    @property
    def width(self):
        return self.slices.shape[3]

    def depth_of(self, index):
        return self.d_min_mm + np.asarray(index) * self.step_mm

    def index_of(self, depth):
        """Nearest slice index, ties toward the smaller depth"""
        x = (np.asarray(depth, dtype=np.float64) - self.d_min_mm) / self.step_mm
        idx = np.ceil(x - 0.5 - 1e-9).astype(np.int64)
        return idx if idx.ndim else int(idx)

    def pattern_index(self, pattern_id):
        try:
            return self._index[pattern_id]
        except KeyError:
            raise SliceIndexError(f'Pattern id {pattern_id} not in database') from None

    def stack(self, pattern_id):
        return self.slices[self.pattern_index(pattern_id)]

    def to_dict(self):
        return {
            'd_min_mm': self.d_min_mm,
            'd_max_mm': self.d_max_mm,
            'step_mm': self.step_mm,
            't_exposure_ref': self.t_exposure_ref,
            'pattern_ids': list(self.pattern_ids),
            'n_pmax': self.n_pmax,
            'n_depths': self.n_depths,
            'height': self.height,
            'width': self.width,
            'rig': self.rig.to_dict() if self.rig else None,
        }


@dataclass
class Patch:
    data: np.ndarray
    partial: bool
    bounds: tuple


# ==================== SEARCH ====================

@dataclass(frozen=True)
class MotionHypothesis:
    """Start depth plus either one constant velocity or one per interval"""

    d0: float
    v: Optional[float] = None
    v_vec: Optional[tuple] = None

    def __post_init__(self):
        if (self.v is None) == (self.v_vec is None):
            raise InvalidArgumentError('Give exactly one of v or v_vec')

    @property
    def is_constant(self):
        return self.v is not None

    def velocity_vector(self, n_p):
        if self.v is not None:
            return (float(self.v),) * n_p
        if len(self.v_vec) != n_p:
            raise InvalidArgumentError(
                f'Velocity vector has {len(self.v_vec)} entries, schedule has {n_p}')
        return tuple(float(v) for v in self.v_vec)


@dataclass(frozen=True)
class SearchGrid:
    depth_indices: np.ndarray
    velocities: np.ndarray
    step_mm: float
    v_step: float
    v_max: float

    def __post_init__(self):
        if self.v_step <= 0:
            raise InvalidArgumentError('v_step must be positive')
        if len(self.depth_indices) == 0 or len(self.velocities) == 0:
            raise InvalidArgumentError('Search grid is empty')

    @property
    def n_depths(self):
        return len(self.depth_indices)

    @property
    def n_velocities(self):
        return len(self.velocities)

    def to_dict(self):
        return {
            'depth_indices': [int(self.depth_indices[0]), int(self.depth_indices[-1])],
            'n_depths': self.n_depths,
            'velocities': [float(v) for v in self.velocities],
            'step_mm': self.step_mm,
            'v_step': self.v_step,
            'v_max': self.v_max,
        }


@dataclass
class CostVolume:
    """NCC scores over the hypothesis grid.

    depth_scores[k] is the best score over velocities for depth label k.
    scores keeps the whole (depth, velocity) grid when it was requested.
    """

    depth_mm: np.ndarray
    velocities: np.ndarray
    depth_scores: np.ndarray
    best_depth_index: np.ndarray
    best_velocity_index: np.ndarray
    best_score: np.ndarray
    valid: np.ndarray
    scores: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.best_score.shape

    def best_depth(self):
        out = np.full(self.shape, np.nan)
        ok = self.best_depth_index >= 0
        out[ok] = self.depth_mm[self.best_depth_index[ok]]
        out[~self.valid] = np.nan
        return out

    def header(self):
        return {
            'layout': 'depth,velocity,row,col' if self.scores is not None else 'depth,row,col',
            'dtype': 'float64',
            'endianness': 'little',
            'depth_mm': [float(d) for d in self.depth_mm],
            'velocities': [float(v) for v in self.velocities],
            'height': int(self.shape[0]),
            'width': int(self.shape[1]),
        }


# ==================== SUPER-RESOLUTION ====================

@dataclass
class ShapeSequence:
    """N_p depth maps, frame n taken at the start of pattern interval n"""

    frames: list
    velocities: list
    durations: list
    valid: np.ndarray
    timestamps: list = field(default_factory=list)

    def __post_init__(self):
        if not self.timestamps:
            self.timestamps = [float(t) for t in np.concatenate(([0.0], np.cumsum(self.durations)[:-1]))]

    @property
    def n_frames(self):
        return len(self.frames)

    def to_dict(self):
        return {
            'n_frames': self.n_frames,
            'timestamps': [float(t) for t in self.timestamps],
            'durations': [float(d) for d in self.durations],
            'valid_pixels': int(np.count_nonzero(self.valid)),
        }
