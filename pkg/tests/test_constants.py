import math

import numpy as np
import pytest

from conftest import random_measure
from maxlab.constants import (
    CandidateTable,
    TestingParams as Params,
    a2_constant,
    alpha_threshold,
    constants_report,
    default_doubling,
    estimate_norm_lower,
    mollified_stability_report,
    power_iteration,
    quadrature_stability,
    restricted_testing_constant as restricted_testing,
    stabilize,
    testing_constant as gamma_testing,
)
from maxlab.generators import make_rng, random_cells, uniform
from maxlab.maximal import ScaleWindow, maximal_many
from maxlab.measure import CellMeasure, LatticeSpec, Rect, scale, translate, zero_measure

UNIFORM_WINDOW = ScaleWindow(-6, 2)


def pair(seed, res=3):
    return random_cells(1, res, make_rng(seed, 0)), random_cells(1, res, make_rng(seed, 1))


def test_defaults():
    assert default_doubling(1) == 9 and default_doubling(2) == 33
    p = Params()
    assert p.gamma == 3 and p.quad_sub == 2 and p.position_refine == 1
    with pytest.raises(ValueError):
        Params(quad_sub=3)


def test_a2_uniform_and_scaling():
    u = uniform(1, 3)
    p = Params(window=UNIFORM_WINDOW)
    v = a2_constant(u, u, p)
    assert v.value == pytest.approx(1.0, rel=1e-14)
    assert a2_constant(scale(u, 4), u, p).value == pytest.approx(4.0, rel=1e-14)


def test_a2_two_intervals():
    s = CellMeasure(LatticeSpec(1, 0, (0,), (1,)), [1.0])
    w = CellMeasure(LatticeSpec(1, 0, (1,), (1,)), [1.0])
    v = a2_constant(s, w, Params(window=ScaleWindow(-4, 2), position_refine=3))
    assert v.value == pytest.approx(0.25, rel=1e-14)
    # every cube centred at 1 attains the optimum; [0.5, 1.5] is one of them
    assert sum(v.witness.lo) + sum(v.witness.hi) == pytest.approx(2.0)
    assert a2_constant(s, w, Params(window=ScaleWindow(0, 0), position_refine=3)).witness == Rect((0.5,), (1.5,))


def test_zero_omega():
    s = uniform(1, 3)
    z = zero_measure(s.spec)
    assert gamma_testing(s, z).value == 0.0
    assert estimate_norm_lower(s, z).value == 0.0


def dense_numerator(sigma, omega, q: Rect, w: ScaleWindow, pts_per_unit=512):
    """Midpoint quadrature of M(1_Q sigma)^2 d omega over Q with a dense maximal sweep."""
    xs = (np.arange(round(q.lo[0] * pts_per_unit), round(q.hi[0] * pts_per_unit)) + 0.5) / pts_per_unit
    vals = maximal_many(sigma, xs[:, None], w, clip=q)
    dens = omega.integrate_many(xs[:, None] - 0.5 / pts_per_unit, xs[:, None] + 0.5 / pts_per_unit)
    return float(np.sum(vals**2 * dens))


def test_uniform_testing_golden():
    """T(3) = 1 for sigma = omega = 1_[0,1]: Q = [0,1] attains 1, and M <= 1 with |Q|_omega <= |3Q|_sigma bounds it."""
    u = uniform(1, 3)
    p = Params(window=UNIFORM_WINDOW, quad_sub=4)
    t = CandidateTable(u, u, p)
    v = gamma_testing(u, u, p, t)
    assert v.value == 1.0
    rng = make_rng(77)
    for i in rng.choice(len(t), 30, replace=False):
        q = t.rect(int(i))
        ref = dense_numerator(u, u, q, t.p.window)
        assert t.numerator[i] <= ref * (1 + 1e-12)
        assert t.numerator[i] == pytest.approx(ref, rel=1e-2, abs=1e-12)


def test_random_numerators_are_certified_lower_bounds():
    s, w = pair(3)
    t = CandidateTable(s, w, Params())
    rng = make_rng(3)
    for i in rng.choice(len(t), 25, replace=False):
        q = t.rect(int(i))
        ref = dense_numerator(s, w, q, t.p.window, pts_per_unit=1024)
        assert t.numerator[i] <= ref * (1 + 1e-9)


def test_quadrature_stability_uniform():
    u = uniform(1, 3)
    assert quadrature_stability(u, u, Params(window=UNIFORM_WINDOW))["unstable"] is False


def test_restricted_on_uniform_equals_testing():
    u = uniform(1, 4)
    p = Params(window=UNIFORM_WINDOW)
    assert restricted_testing(u, u, p).value == gamma_testing(u, u, p).value


@pytest.mark.parametrize("seed", range(6))
def test_ordering(seed):
    s, w = pair(seed)
    p = Params()
    t = CandidateTable(s, w, p)
    tg = gamma_testing(s, w, p, t).value
    assert restricted_testing(s, w, p, t).value <= tg
    d_vals = [restricted_testing(s, w, Params(d=d), t).value for d in (2, 5, 9, 40)]
    assert d_vals == sorted(d_vals)
    g_vals = [gamma_testing(s, w, Params(gamma=g), t).value for g in (1, 2, 3, 5)]
    assert g_vals == sorted(g_vals, reverse=True)


def test_homogeneity_exact():
    s, w = pair(21)
    p = Params()
    base = constants_report(s, w, p, restarts=2, iterations=10, seed=1)
    c, c2 = 3.0, 5.0
    rs = constants_report(scale(s, c), w, p, restarts=2, iterations=10, seed=1)
    rw = constants_report(s, scale(w, c2), p, restarts=2, iterations=10, seed=1)
    assert rs.a2.value == pytest.approx(c * base.a2.value, rel=1e-12)
    assert rw.a2.value == pytest.approx(c2 * base.a2.value, rel=1e-12)
    assert rs.t_gamma.value == pytest.approx(math.sqrt(c) * base.t_gamma.value, rel=1e-12)
    assert rw.t_gamma.value == pytest.approx(math.sqrt(c2) * base.t_gamma.value, rel=1e-12)
    assert rs.t_d_gamma.value == pytest.approx(math.sqrt(c) * base.t_d_gamma.value, rel=1e-12)
    assert rs.norm_lb.value == pytest.approx(math.sqrt(c) * base.norm_lb.value, rel=1e-12)
    assert rw.norm_lb.value == pytest.approx(math.sqrt(c2) * base.norm_lb.value, rel=1e-12)
    assert np.array_equal(rs.norm_lb.assignments[0], base.norm_lb.assignments[0])


def test_translation_invariance():
    s, w = pair(4)
    p = Params()
    a = constants_report(s, w, p, restarts=1, iterations=5)
    b = constants_report(translate(s, (8,)), translate(w, (8,)), p, restarts=1, iterations=5)
    assert b.a2.value == a.a2.value
    assert b.t_gamma.value == a.t_gamma.value
    assert b.t_d_gamma.value == a.t_d_gamma.value


def test_norm_dominates_indicator_ratios():
    for seed in range(4):
        s, w = pair(seed)
        p = Params(gamma=1.0)
        t = CandidateTable(s, w, p)
        est = estimate_norm_lower(s, w, p, restarts=2, iterations=10, table=t)
        ratios = np.where(t.sigma_mass > 0, t.numerator / np.where(t.sigma_mass > 0, t.sigma_mass, 1), 0)
        assert est.value >= math.sqrt(ratios.max())
        assert est.value >= gamma_testing(s, w, p, t).value


def test_power_iteration_clamp_never_decreases():
    rng = make_rng(5)
    A = rng.random((12, 7))
    B = A.T @ A
    g, q, _, ok, clamp = power_iteration(B, rng.random(7))
    assert ok and not clamp
    assert q == pytest.approx(np.linalg.eigvalsh(B)[-1], rel=1e-8)


def test_stabilize():
    u = uniform(1, 3)
    st = stabilize(a2_constant, u, u, Params())
    assert st.stable and st.rounds == 1
    s, w = pair(13)
    st = stabilize(a2_constant, s, w, Params(), max_rounds=2)
    assert st.stable and st.rounds <= 2


def test_mollified_uniform_within_ten_percent():
    u = uniform(1, 3)
    rows = mollified_stability_report(u, u, [1 / 32, 1 / 64], Params(window=UNIFORM_WINDOW), osc_samples=10)
    for r in rows:
        assert abs(r["a2_ratio"] - 1) <= 0.1
        assert abs(r["td_ratio"] - 1) <= 0.1
        assert r["mass_sigma"] == pytest.approx(1.0, rel=1e-12)
        assert math.isfinite(r["osc_constant"])
    assert rows[0]["alpha"] == alpha_threshold(3, 4) == pytest.approx(1 / 864)
