"""Built-in invariant suite run by ``maxlab selftest``; each check takes well under a second."""

from __future__ import annotations

import math

import numpy as np

from .constants import TestingParams, a2_constant, constants_report
from .generators import bump_function, make_rng, random_cells, uniform
from .grid import GridFamily, bad_fraction, count_bad_offsets, enumerate_grids
from .maximal import ScaleWindow, maximal
from .measure import CellMeasure, LatticeSpec, MollifierKernel, Rect, mollify
from .stopping import build_principal, check_principal
from .whitney import check_whitney_properties, setup_whitney


def _bad_counts() -> bool:
    ok = True
    for n in (1, 2):
        for r in range(1, 5):
            ok &= count_bad_offsets(n, r) == bad_fraction(n, r) * 2 ** (n * r)
    return ok


def _grid_constructions() -> bool:
    fam = GridFamily(2, 3, 1)
    a = {g.tiling_key() for g in enumerate_grids(fam, "scales")}
    b = {g.tiling_key() for g in enumerate_grids(fam, "translation")}
    return a == b and len(a) == fam.cardinality


def _maximal_example() -> bool:
    mu = CellMeasure(LatticeSpec(1, 0, (0,), (2,)), [2.0, 4.0])
    v = maximal(mu, [0.25], ScaleWindow(0, 0))
    return abs(v.value - 2.5) < 1e-12


def _prefix_vs_naive() -> bool:
    mu = random_cells(2, 3, make_rng(1))
    r = Rect((0.25, 0.125), (0.75, 0.5))
    naive = float(mu.density[2:6, 1:4].sum()) * mu.spec.cell_volume
    return abs(mu.integrate(r) - naive) <= 1e-12 * naive


def _constants_ordering() -> bool:
    s, w = random_cells(1, 3, make_rng(0, 0)), random_cells(1, 3, make_rng(0, 1))
    rep = constants_report(s, w, TestingParams(), restarts=1, iterations=5)
    u = uniform(1, 3)
    return rep.t_d_gamma.value <= rep.t_gamma.value and rep.norm_lb.value >= rep.norm_lb.seed_value and abs(a2_constant(u, u).value - 1) < 1e-12


def _mollified_mass() -> bool:
    mu = random_cells(1, 3, make_rng(2))
    out = mollify(mu, 0.25, MollifierKernel(1), 5)
    return abs(out.total_mass - mu.total_mass) <= 1e-12


def _whitney_and_principal() -> bool:
    rng = make_rng(3)
    sigma = uniform(1, 4)
    f = bump_function(sigma.spec, rng, 5)
    top = math.floor(math.log2(float(np.max(f.values))))
    st = setup_whitney(f, sigma, [top - 3, top - 2], refine=1, rng=rng)
    pf = build_principal(st.family)
    return check_whitney_properties(st.family).all_passed and check_principal(pf).all_passed


CHECKS = {
    "bad_offset_counts": _bad_counts,
    "grid_constructions_agree": _grid_constructions,
    "maximal_two_cell_example": _maximal_example,
    "prefix_sum_vs_naive": _prefix_vs_naive,
    "constants_ordering": _constants_ordering,
    "mollified_mass_preserved": _mollified_mass,
    "whitney_and_principal": _whitney_and_principal,
}


def run_selftest() -> dict:
    return {name: bool(fn()) for name, fn in CHECKS.items()}
