import os
import sys

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models import MarkerGeometry, Rig  # noqa: E402
from patterns import build_pattern_set  # noqa: E402
import refdb  # noqa: E402

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=30, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DESK_WINDOW = 12


class DeskScale:
    """Small rig shared by the pipeline tests, with cached pattern sets and databases"""

    def __init__(self):
        self.rig = Rig(cam_width=64, cam_height=48, d_min_mm=590.0, d_max_mm=620.0,
                       focus_depth_mm=605.0)
        self.geometry = MarkerGeometry(strip_rows=(0, 4), slot_width=4, slot_count=10,
                                       slot_gap=2, col_offset=2)
        self.step = 0.5
        self.window = DESK_WINDOW
        self._patterns = {}
        self._databases = {}

    def patterns(self, n, markers=True, seed=7):
        key = (n, markers, seed)
        if key not in self._patterns:
            self._patterns[key] = build_pattern_set(self.rig, n, 0.3, seed,
                                                    geometry=self.geometry if markers else None)
        return self._patterns[key]

    def database(self, n, markers=True, seed=7):
        key = (n, markers, seed)
        if key not in self._databases:
            self._databases[key] = refdb.build(self.rig, self.patterns(n, markers, seed), self.step)
        return self._databases[key]


@pytest.fixture(scope="session")
def desk():
    return DeskScale()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


DESK_OVERRIDES = (
    "rig.cam_width=64", "rig.cam_height=48", "rig.d_min_mm=590", "rig.d_max_mm=620",
    "rig.focus_depth_mm=605", "patterns.n_patterns=3", "patterns.strip_rows=[0, 4]",
    "patterns.slot_width=4", "patterns.slot_gap=2", "patterns.col_offset=2",
    "scene.velocities=[9.0]", "scene.t_proj=0.1111111111111111", "search.v_max=18",
)


@pytest.fixture(scope="session")
def desk_overrides():
    """--set values that shrink the default run config to the desk rig"""
    return DESK_OVERRIDES
