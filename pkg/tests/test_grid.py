import itertools
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from maxlab.generators import make_rng
from maxlab.grid import (
    ENUMERATION_GUARD,
    DyadicCube,
    GridFamily,
    GridShift,
    GridSizeError,
    bad_fraction,
    closed_boundaries_meet,
    count_bad_offsets,
    enumerate_grids,
    is_r_bad,
    is_r_bad_many,
    sample_grid,
)


def cube_set(g: GridShift) -> frozenset:
    """All cubes of the grid meeting [0, 2^-N)^n, as (level, lower corner units)."""
    out = set()
    for lvl in range(g.N, g.M + 1):
        s = 1 << (g.M - lvl)
        off = g.level_offset_units(lvl)
        span = 1 << (g.M - g.N)
        rng_ax = [range((-o) // s - 1, (span - o) // s + 1) for o in off]
        for idx in itertools.product(*rng_ax):
            out.add((lvl, tuple(o + s * k for o, k in zip(off, idx))))
    return frozenset(out)


@pytest.mark.parametrize("n,L,count", [(1, 3, 8), (1, 0, 1), (2, 2, 16)])
def test_enumeration_counts(n, L, count):
    fam = GridFamily(n, 5, 5 - L)
    grids = enumerate_grids(fam)
    assert len(grids) == count == fam.cardinality
    assert len({g.tiling_key() for g in grids}) == count


def test_constructions_give_identical_cube_sets():
    fam = GridFamily(2, 3, 1)
    a = {cube_set(g) for g in enumerate_grids(fam, "scales")}
    b = {cube_set(g) for g in enumerate_grids(fam, "translation")}
    assert a == b and len(a) == 16


def test_enumeration_guard():
    with pytest.raises(GridSizeError):
        enumerate_grids(GridFamily(3, 9, 0))
    assert ENUMERATION_GUARD == 24


def test_sampling_uniform_and_deterministic():
    fam = GridFamily(1, 4, 2)
    rng = make_rng(1)
    c = Counter(sample_grid(fam, rng).translation_units for _ in range(20000))
    assert len(c) == 4
    for v in c.values():
        assert abs(v / 20000 - 0.25) < 0.02
    a = [sample_grid(fam, make_rng(9)).key() for _ in range(3)]
    b = [sample_grid(fam, make_rng(9)).key() for _ in range(3)]
    assert a == b
    assert sample_grid(GridFamily(2, 3, 3), rng).translation_units == (0, 0)


def test_phi_offsets_in_range():
    fam = GridFamily(2, 3, 0, "Phi")
    for _ in range(50):
        g = sample_grid(fam, make_rng(_))
        assert all(0 <= o < 2.0**-3 for o in g.offset)


def test_containing_cube_examples():
    g = GridShift.standard(1, 4, 0)
    c = g.containing_cube([0.3], 1)
    assert c.index == (0,) and c.rect.lo == (0.0,) and c.rect.hi == (0.5,)
    assert g.containing_cube([0.5], 1).index == (1,)


def test_containing_cube_brute_force():
    rng = make_rng(3)
    g = GridShift(1, 5, 0, "translation", (1,))
    for _ in range(50):
        x = rng.random(1) * 2 - 0.5
        for lvl in range(0, 6):
            c = g.containing_cube(x, lvl)
            s = 1 << (5 - lvl)
            hits = [
                k
                for k in range(-70, 70)
                if (g.level_offset_units(lvl)[0] + s * k) / 32 <= x[0] < (g.level_offset_units(lvl)[0] + s * (k + 1)) / 32
            ]
            assert hits == [c.index[0]]
            if lvl > 0:
                assert g.containing_cube(x, lvl - 1) == c.parent()


def test_nesting_trichotomy():
    g = GridShift(2, 4, 1, "scales", ((1, 0), (0, 1), (1, 1)))
    cubes = [DyadicCube(g, lvl, (i, j)) for lvl in range(1, 5) for i in range(-1, 3) for j in range(-1, 3)]
    for a, b in itertools.combinations(cubes, 2):
        ra, rb = a.rect, b.rect
        overlap = all(max(x, y) < min(u, v) for x, u, y, v in zip(ra.lo, ra.hi, rb.lo, rb.hi))
        if overlap:
            assert a.contains(b) or b.contains(a)


def test_scales_and_translation_offsets_agree():
    g = GridShift(2, 5, 1, "scales", ((1, 0), (0, 1), (1, 1), (0, 0)))
    t = g.as_translation()
    for lvl in range(1, 6):
        assert g.level_offset_units(lvl) == t.level_offset_units(lvl)


def test_serialization_roundtrip():
    g = GridShift(2, 4, 1, "scales", ((1, 0), (0, 1), (1, 1)), (0.01, 0.0))
    assert GridShift.from_dict(g.to_dict()) == g


def test_bad_examples():
    g = GridShift.standard(1, 3, 0)
    assert not is_r_bad(DyadicCube(g, 3, (4,)), 3)
    assert all(is_r_bad(DyadicCube(GridShift.standard(1, 2, 0), 2, (k,)), 2) for k in range(4))
    assert count_bad_offsets(2, 4) == 112
    assert bad_fraction(1, 3) == Fraction(1, 2)
    assert bad_fraction(1, 2) == 1
    assert bad_fraction(2, 4) == Fraction(112, 256)


def test_bad_matches_geometric_oracle():
    for n in (1, 2):
        for r in range(1, 5):
            g = GridShift.standard(n, r, 0)
            for idx in itertools.product(range(2**r), repeat=n):
                c = DyadicCube(g, r, idx)
                geo = closed_boundaries_meet(c.lo_units, c.side_units, c.ancestor(r).lo_units, c.ancestor(r).side_units)
                assert is_r_bad(c, r) == geo


def test_bad_vectorized_matches_scalar_on_shifted_grid():
    g = GridShift(2, 6, 0, "translation", (5, 17))
    idx = np.array(list(itertools.product(range(-3, 6), repeat=2)))
    vec = is_r_bad_many(g, 5, idx, 3)
    ref = [is_r_bad(DyadicCube(g, 5, tuple(int(v) for v in i)), 3) for i in idx]
    assert list(vec) == ref


def test_bad_parent_outside_truncation():
    g = GridShift.standard(1, 3, 1)
    with pytest.raises(ValueError):
        is_r_bad(DyadicCube(g, 2, (0,)), 2)


def test_bad_fraction_bound():
    for n in (1, 2, 3):
        for r in range(1, 21):
            assert bad_fraction(n, r) <= Fraction(4 * n, 2**r)
