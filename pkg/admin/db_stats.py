# admin/db_stats.py
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np

import refdb
from synth import ncc


def slice_separation(db, pattern_id):
    """NCC between each pair of neighbouring depth slices (1.0 = indistinguishable)"""
    stack = db.stack(pattern_id)
    return np.array([ncc(stack[i], stack[i + 1]) for i in range(db.n_depths - 1)])


def show_stats(db):
    """Print a database report and return its numbers"""
    if db.rig is not None and db.rig.d_min_mm < db.rig.d_max_mm:
        disparity = (float(db.rig.disparity(db.d_min_mm)), float(db.rig.disparity(db.d_max_mm)))
    else:
        disparity = None
    stats = {
        'patterns': list(db.pattern_ids),
        'n_depths': db.n_depths,
        'size': [db.width, db.height],
        'range_mm': [db.d_min_mm, db.d_max_mm],
        'step_mm': db.step_mm,
        'per_pattern': {},
    }

    print("=" * 60)
    print("🗄️  REFERENCE DATABASE STATISTICS")
    print("=" * 60)
    print(f"\n📁 Slices: {db.n_patterns} patterns x {db.n_depths} depths ({db.width}x{db.height} px)")
    print(f"   • Depth range: {db.d_min_mm:.1f} - {db.d_max_mm:.1f} mm, step {db.step_mm} mm")
    print(f"   • Reference exposure: {db.t_exposure_ref:.4f} s")
    if disparity:
        print(f"   • Disparity: {disparity[0]:.2f} px (near) to {disparity[1]:.2f} px (far)")
        stats['disparity_px'] = list(disparity)

    print("\n📊 By Pattern:")
    for pid in db.pattern_ids:
        stack = db.stack(pid)
        entry = {
            'min': float(stack.min()),
            'max': float(stack.max()),
            'mean': float(stack.mean()),
        }
        if db.n_depths > 1:
            sep = slice_separation(db, pid)
            finite = sep[np.isfinite(sep)]
            entry['neighbour_ncc_max'] = float(finite.max()) if finite.size else None
        stats['per_pattern'][pid] = entry
        line = f"   • Pattern {pid:2d}: intensity {entry['min']:.3f} - {entry['max']:.3f}, mean {entry['mean']:.3f}"
        if entry.get('neighbour_ncc_max') is not None:
            line += f", neighbour NCC <= {entry['neighbour_ncc_max']:.4f}"
        print(line)

    flat = [pid for pid, e in stats['per_pattern'].items() if e['max'] <= 0]
    print(f"\n🔍 Dark patterns: {'✅ NONE' if not flat else '❌ ' + str(flat)}")
    print("=" * 60)
    return stats


if __name__ == '__main__':
    if len(sys.argv) != 2:
        print("Usage: python admin/db_stats.py <database directory>")
        sys.exit(2)
    show_stats(refdb.load(sys.argv[1]))
