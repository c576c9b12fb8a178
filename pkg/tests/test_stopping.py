import numpy as np
import pytest
from conftest import whitney_instance

from maxlab.generators import make_rng
from maxlab.grid import DyadicCube, GridShift, is_r_bad
from maxlab.stopping import bad_mass_fraction, build_principal, check_principal, split_good_bad
from maxlab.whitney import LatticeDomain, WhitneyFamily


def synthetic_family(lo, side, k, averages, sigma_mass=None, res=4):
    """A hand-built one-dimensional family on the standard grid (lattice units of 2^-res)."""
    dom = LatticeDomain(res, (0,), (2**res,))
    g = GridShift.standard(1, res, 0)
    side = np.asarray(side, dtype=np.int64)
    level = res - np.log2(side).astype(np.int64)
    return WhitneyFamily(
        g,
        9,
        5,
        dom,
        {},
        np.asarray(k, dtype=np.int64),
        level,
        np.asarray(lo, dtype=np.int64).reshape(-1, 1),
        side,
        np.asarray(averages, dtype=float),
        np.ones(len(side)) if sigma_mass is None else np.asarray(sigma_mass, dtype=float),
    )


def test_chain_example_generations():
    fam = synthetic_family([0, 0, 0], [16, 8, 4], [0, 1, 2], [1.0, 5.0, 6.0])
    pf = build_principal(fam, eta=4.0)
    assert pf.generations() == [[0], [1]]
    assert pf.pred.tolist() == [0, 1, 1]
    chk = check_principal(pf)
    assert chk.all_passed
    assert pf.witnesses == [(1, 0, 5.0, 1.0)]


def test_single_cube_is_its_own_predecessor():
    pf = build_principal(synthetic_family([0], [16], [0], [3.0]))
    assert pf.generations() == [[0]]
    assert pf.pred.tolist() == [0]


def test_constant_averages_stop_at_first_generation():
    fam = synthetic_family([0, 0, 8, 0], [16, 8, 8, 4], [0, 1, 1, 2], [2.0] * 4)
    pf = build_principal(fam)
    assert len(pf.generations()) == 1
    assert check_principal(pf).all_passed


def test_carleson_ratio_is_one_for_constant_function_on_one_cube():
    # constant f = 3 on uniform sigma of mass 1: (avg f)^2 |Q|_sigma = 9 = ||f||^2
    fam = synthetic_family([0], [16], [0], [3.0], sigma_mass=[1.0])
    assert check_principal(build_principal(fam), f_norm_sq=9.0).carleson_ratio == 1.0


def test_duplicates_keep_the_largest_k():
    fam = synthetic_family([0, 0, 0], [16, 16, 8], [0, 3, 4], [1.0, 1.0, 9.0])
    pf = build_principal(fam)
    assert len(pf) == 2
    assert pf.k.tolist() == [3, 4]


def test_coarsest_level_filter():
    fam = synthetic_family([0, 0, 0], [16, 8, 4], [0, 1, 2], [1.0, 5.0, 6.0])
    pf = build_principal(fam, L=1)
    assert pf.k.tolist() == [1, 2]
    assert pf.generations() == [[0]]


def test_empty_family_and_bad_eta():
    fam = synthetic_family([], [], [], [])
    assert len(build_principal(fam)) == 0
    assert check_principal(build_principal(fam)).all_passed
    with pytest.raises(ValueError):
        build_principal(synthetic_family([0], [16], [0], [1.0]), eta=1.0)


def test_checker_catches_broken_predecessor():
    fam = synthetic_family([0, 0, 0], [16, 8, 4], [0, 1, 2], [1.0, 5.0, 6.0])
    pf = build_principal(fam)
    pf.pred[2] = 0
    chk = check_principal(pf)
    assert not chk.predecessor_minimal
    assert not chk.clause_i


def test_seeded_family_clauses_and_golden_ratio():
    sigma, f, st = whitney_instance(3, ks=(12, 1))
    fn = float(np.sum(f.values**2 * sigma.density) * sigma.spec.cell_volume)
    pf = build_principal(st.family)
    chk = check_principal(pf, fn)
    assert chk.all_passed
    assert [len(g) for g in pf.generations()] == [97, 2]
    assert chk.carleson_ratio == pytest.approx(0.8428900338085521, rel=1e-9)


def test_good_bad_is_a_partition_matching_the_cube_test():
    _, _, st = whitney_instance(0)
    fam = st.family
    r = 4
    good, bad = split_good_bad(fam, r)
    assert sorted(good + bad) == list(range(len(fam)))
    idx = fam.index()
    for i in bad[:20] + good[:20]:
        lvl = int(fam.level[i])
        if lvl - r < fam.grid.N:
            assert i in good
        else:
            assert is_r_bad(DyadicCube(fam.grid, lvl, tuple(int(v) for v in idx[i])), r) == (i in bad)


def test_r2_in_one_dimension_makes_every_cube_bad():
    _, _, st = whitney_instance(0)
    good, bad = split_good_bad(st.family, 2)
    assert good == [] and len(bad) == len(st.family)


def test_parents_outside_truncation_are_good():
    _, _, st = whitney_instance(0)
    good, bad = split_good_bad(st.family, 60)
    assert bad == []


def test_monte_carlo_bad_mass_r6():
    sigma, f, st = whitney_instance(0)
    rep = bad_mass_fraction(f, sigma, sigma, st.ks, 6, 2000, make_rng(5, 6), refine=1, R_W=9, N_overlap=5, m=st.m, m0=2)
    assert rep.used_samples == 2000
    assert rep.passed, rep
