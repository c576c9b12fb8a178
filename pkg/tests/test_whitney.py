import numpy as np
import pytest
from conftest import whitney_instance

from maxlab.generators import make_rng, random_cells
from maxlab.grid import GridShift
from maxlab.maximal import ScaleWindow, maximal
from maxlab.measure import CellMeasure, LatticeSpec
from maxlab.whitney import (
    MUTATIONS,
    LatticeDomain,
    SuperlevelSet,
    check_whitney_properties,
    classify_pi,
    crowd_cap,
    default_m,
    eset_disjointness,
    esets,
    maximum_principle_check,
    mutate_family,
    overlap_cap,
    superlevel,
    whitney_decompose,
)


def unit_interval(res=7, R_W=9, N_overlap=5):
    dom = LatticeDomain(res, (-(2**res),), (3 * 2**res,))
    mask = np.zeros(dom.shape, dtype=bool)
    mask[2**res : 2 ** (res + 1)] = True
    g = GridShift.standard(1, res, -2)
    return whitney_decompose(SuperlevelSet(0, dom, mask), g, R_W, N_overlap)


def brute_whitney(res, R_W, lo, hi):
    """Maximal standard dyadic intervals (lattice units) whose R_W-dilate lies in [lo, hi)."""
    ok = []
    for lvl in range(0, res + 1):
        side = 1 << (res - lvl)
        for a in range(lo // side * side, hi, side):
            ext = (R_W - 1) // 2 * side
            if a >= lo and a - ext >= lo and a + side + ext <= hi:
                ok.append((lvl, a, side))
    maximal_only = []
    for c in ok:
        inside = any(p[2] > c[2] and p[1] <= c[1] and c[1] + c[2] <= p[1] + p[2] for p in ok)
        if not inside:
            maximal_only.append(c)
    return sorted(maximal_only)


def test_unit_interval_matches_brute_force():
    fam = unit_interval()
    got = sorted((int(l), int(a[0]), int(s)) for l, a, s in zip(fam.level, fam.lo, fam.side))
    assert got == brute_whitney(7, 9, 0, 128)
    assert check_whitney_properties(fam).all_passed


# frozen from the brute-force oracle above: (level, lower corner in units of 2^-7, side in units)
UNIT_INTERVAL_GOLDEN = [
    (4, 32, 8), (4, 40, 8), (4, 48, 8), (4, 56, 8), (4, 64, 8), (4, 72, 8), (4, 80, 8), (4, 88, 8),
    (5, 16, 4), (5, 20, 4), (5, 24, 4), (5, 28, 4), (5, 96, 4), (5, 100, 4), (5, 104, 4), (5, 108, 4),
    (6, 8, 2), (6, 10, 2), (6, 12, 2), (6, 14, 2), (6, 112, 2), (6, 114, 2), (6, 116, 2), (6, 118, 2),
    (7, 4, 1), (7, 5, 1), (7, 6, 1), (7, 7, 1), (7, 120, 1), (7, 121, 1), (7, 122, 1), (7, 123, 1),
]


def test_unit_interval_golden():
    fam = unit_interval()
    got = [(int(l), int(a[0]), int(s)) for l, a, s in zip(fam.level, fam.lo, fam.side)]
    assert got == UNIT_INTERVAL_GOLDEN
    m = check_whitney_properties(fam).measured
    assert (m["overlap"], m["crowd"], m["max_side_ratio"]) == (6, 7, 2.0)


def test_small_dilation_breaks_side_comparability():
    # with R_W = 3 the triple of a large cube reaches the boundary next to tiny cubes
    fam = unit_interval(R_W=3, N_overlap=1)
    chk = check_whitney_properties(fam)
    assert chk.failing() == {"side_comparability"}
    assert chk.measured["max_side_ratio"] == 32.0


def test_overlap_caps_need_room():
    with pytest.raises(ValueError):
        overlap_cap(1, 5, 5)
    with pytest.raises(ValueError):
        crowd_cap(1, 3, 5)
    assert default_m(1, 9) == 8
    assert default_m(1, 3) == 7


def test_empty_region_gives_empty_family():
    dom = LatticeDomain(3, (0,), (8,))
    fam = whitney_decompose(SuperlevelSet(0, dom, np.zeros(8, dtype=bool)), GridShift.standard(1, 3, 0), 9, 5)
    assert len(fam) == 0
    assert check_whitney_properties(fam).all_passed


def test_full_region_rejected():
    dom = LatticeDomain(3, (0,), (8,))
    with pytest.raises(ValueError):
        whitney_decompose(SuperlevelSet(0, dom, np.ones(8, dtype=bool)), GridShift.standard(1, 3, 0), 9, 5)


def test_two_components_decompose_independently():
    res = 7
    dom = LatticeDomain(res, (-(2**res),), (4 * 2**res,))
    g = GridShift.standard(1, res, -2)
    left = np.zeros(dom.shape, dtype=bool)
    left[128:160] = True
    right = np.zeros(dom.shape, dtype=bool)
    right[320:384] = True

    def cubes(mask):
        fam = whitney_decompose(SuperlevelSet(0, dom, mask), g, 9, 5)
        return {(int(l), int(a[0]), int(s)) for l, a, s in zip(fam.level, fam.lo, fam.side)}

    assert cubes(left | right) == cubes(left) | cubes(right)


def test_single_hot_cell_superlevel_matches_closed_form():
    # one cell of mass 1 on [0, 1/8)
    mu = CellMeasure(LatticeSpec(1, 3, (0,), (1,)), [8.0])
    w = ScaleWindow(-6, 6)
    sl = superlevel(mu, 1, w, refine=3)
    assert sl.replay_witnesses()
    cells = np.nonzero(sl.mask)[0] + sl.domain.origin[0]
    lo, hi = cells.min() * sl.domain.h, (cells.max() + 1) * sl.domain.h
    # a cube holding the whole cell averages 1/s, so M > 2 needs a cube of side < 1/2 reaching x
    assert lo >= 0.125 - 0.5 and hi <= 0.5
    for x in (lo + 1e-9, hi - 1e-9):
        assert maximal(mu, [x], w).value > 2.0


def test_superlevel_above_envelope_is_empty():
    mu = random_cells(1, 3, make_rng(4))
    sl = superlevel(mu, 3, ScaleWindow(-5, 3))
    assert sl.is_empty()


def test_seeded_instances_pass_all_properties():
    for i in range(3):
        _, _, st = whitney_instance(i)
        chk = check_whitney_properties(st.family)
        assert chk.all_passed, chk.failing()
        for k in st.ks:
            sl = SuperlevelSet(k, st.domain, st.region(k), st.field)
            assert sl.replay_witnesses()


def test_doubled_cube_breaks_disjointness():
    _, _, st = whitney_instance(0)
    bad = mutate_family(st.family, "duplicate", make_rng(1))
    assert "disjoint_cover" in check_whitney_properties(bad).failing()


def test_mutation_harness_seed_21():
    _, _, st = whitney_instance(1)
    assert check_whitney_properties(st.family).all_passed
    for kind, expected in MUTATIONS.items():
        bad = mutate_family(st.family, kind, make_rng(21))
        assert bad is not None, kind
        assert expected <= check_whitney_properties(bad).failing(), kind


def test_maximum_principle_and_esets():
    _, _, st = whitney_instance(2)
    rep = maximum_principle_check(st, samples=4, rng=make_rng(8))
    assert rep.m_meets_precondition and rep.passed and rep.checked_cells > 0
    dis = eset_disjointness(st)
    assert dis["per_level"] and dis["inside_cubes"]
    assert any(e.any() for e in esets(st))


def test_maximum_principle_below_threshold_is_reported_not_raised():
    _, _, st = whitney_instance(2)
    rep = maximum_principle_check(st, samples=2, rng=make_rng(8), m=1)
    assert not rep.m_meets_precondition
    assert rep.violations >= 0


def test_pi_partition_golden_and_exhaustive():
    sigma, _, st = whitney_instance(3)
    omega = random_cells(1, 4, make_rng(7, 103))
    pi = classify_pi(st, omega)
    keys = pi.pi1 + pi.pi2 + pi.pi3
    assert len(keys) == len(set(keys)) == len(st.family)
    assert pi.sizes == (294, 3, 1)
    everything = classify_pi(st, omega, beta=1 - 1e-12)
    assert len(everything.pi1) >= len(pi.pi1)
    with pytest.raises(ValueError):
        classify_pi(st, omega, beta=1.0)


def test_zero_omega_sends_everything_to_first_case():
    sigma, _, st = whitney_instance(3)
    zero = CellMeasure(LatticeSpec(1, 4, (0,), (16,)), np.zeros(16))
    assert classify_pi(st, zero).sizes == (len(st.family), 0, 0)


def brute_whitney_square(res, R_W, lo, hi):
    """Maximal standard dyadic squares whose R_W-dilate lies in [lo, hi)^2."""
    ok = []
    for lvl in range(0, res + 1):
        side = 1 << (res - lvl)
        ext = (R_W - 1) // 2 * side
        starts = [a for a in range(lo // side * side, hi, side) if a - ext >= lo and a + side + ext <= hi]
        ok += [(lvl, a, b, side) for a in starts for b in starts]
    return sorted(
        c
        for c in ok
        if not any(p[3] > c[3] and p[1] <= c[1] < p[1] + p[3] and p[2] <= c[2] < p[2] + p[3] for p in ok)
    )


def test_square_in_two_dimensions_matches_brute_force():
    res = 5
    dom = LatticeDomain(res, (-32, -32), (96, 96))
    mask = np.zeros(dom.shape, dtype=bool)
    mask[32:64, 32:64] = True
    fam = whitney_decompose(SuperlevelSet(0, dom, mask), GridShift.standard(2, res, -2), 9, 5)
    got = sorted((int(l), int(a[0]), int(a[1]), int(s)) for l, a, s in zip(fam.level, fam.lo, fam.side))
    assert got == brute_whitney_square(res, 9, 0, 32)
    chk = check_whitney_properties(fam)
    assert chk.all_passed, chk.failing()
    assert chk.measured["max_side_ratio"] == 2.0
