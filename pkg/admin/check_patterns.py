# admin/check_patterns.py
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from itertools import combinations

import numpy as np

from patterns import composite, load_pattern_set


def _dots(pattern):
    """Lit pixels outside the marker strip"""
    lit = pattern.intensity > 0.5
    if pattern.marker is not None:
        lit = lit & pattern.marker.measurement_mask(pattern.height, pattern.width)
    return lit


def check_patterns(patterns):
    """Check densities, overlap and markers of a pattern set"""
    print("=" * 60)
    print("🎲 PATTERN SET CHECK")
    print("=" * 60)
    print(f"\n📊 Patterns in set: {len(patterns)}")

    if not patterns:
        print("\n❌ No patterns found! Run `python run.py gen-patterns` first.")
        return {}

    dots = {p.pattern_id: _dots(p) for p in patterns}

    print("\n🔍 Lit fraction per pattern:")
    fractions = {}
    for p in patterns:
        region = p.marker.measurement_mask(p.height, p.width) if p.marker is not None \
            else np.ones(p.intensity.shape, dtype=bool)
        fractions[p.pattern_id] = float(dots[p.pattern_id].sum()) / float(region.sum())
        print(f"   • Pattern {p.pattern_id:2d}: {fractions[p.pattern_id] * 100:.2f}% "
              f"(target {p.dot_density * 100:.2f}%)")

    overlaps = {}
    for a, b in combinations(sorted(dots), 2):
        overlaps[(a, b)] = int(np.count_nonzero(dots[a] & dots[b]))
    shared = sum(overlaps.values())
    print(f"\n🔍 Pairwise overlap: {'✅ NONE' if shared == 0 else '❌ ' + str(shared) + ' shared pixels'}")

    union = np.zeros_like(next(iter(dots.values())))
    for lit in dots.values():
        union |= lit
    region = patterns[0].marker.measurement_mask(patterns[0].height, patterns[0].width) \
        if patterns[0].marker is not None else np.ones(union.shape, dtype=bool)
    density = float(union.sum()) / float(region.sum())
    print(f"   • Composite density: {density * 100:.2f}%")

    missing = []
    for p in patterns:
        if p.marker is None:
            continue
        r0, r1, c0, c1 = p.marker.slot_of(p.pattern_id)
        if not np.all(p.intensity[r0:r1, c0:c1] > 0.5):
            missing.append(p.pattern_id)
    has_markers = all(p.marker is not None for p in patterns)
    if has_markers:
        print(f"   • Marker slots: {'✅ all lit' if not missing else '❌ unlit for ' + str(missing)}")
    peak = float(composite(patterns).max())
    print(f"   • Composite peak: {peak:.2f}")
    print("=" * 60)
    return {
        'lit_fractions': fractions,
        'overlap_pixels': shared,
        'composite_density': density,
        'missing_markers': missing,
    }


if __name__ == '__main__':
    if len(sys.argv) != 2:
        print("Usage: python admin/check_patterns.py <pattern directory>")
        sys.exit(2)
    check_patterns(load_pattern_set(sys.argv[1]))
