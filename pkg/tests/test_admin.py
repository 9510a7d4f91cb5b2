import numpy as np
import pytest

from admin.check_patterns import check_patterns
from admin.db_stats import show_stats, slice_separation


def test_check_patterns_reports_clean_set(desk, capsys):
    report = check_patterns(desk.patterns(3))
    assert report['overlap_pixels'] == 0
    assert report['missing_markers'] == []
    assert sorted(report['lit_fractions']) == [1, 2, 3]
    assert report['composite_density'] == pytest.approx(0.3, rel=0.1)
    assert 'PATTERN SET CHECK' in capsys.readouterr().out


def test_check_patterns_empty_set(capsys):
    assert check_patterns([]) == {}
    assert 'No patterns found' in capsys.readouterr().out


def test_db_stats(desk, capsys):
    db = desk.database(3)
    stats = show_stats(db)
    assert stats['n_depths'] == db.n_depths
    assert stats['patterns'] == [1, 2, 3]
    assert stats['disparity_px'][0] > stats['disparity_px'][1]
    for entry in stats['per_pattern'].values():
        assert entry['max'] > 0
        assert entry['neighbour_ncc_max'] < 1.0
    assert 'Dark patterns: ✅ NONE' in capsys.readouterr().out


def test_neighbouring_slices_differ(desk):
    sep = slice_separation(desk.database(1), 1)
    assert len(sep) == desk.database(1).n_depths - 1
    assert np.all(sep[np.isfinite(sep)] < 1.0)
