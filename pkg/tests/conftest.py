import math

import numpy as np
import pytest

from maxlab.generators import bump_function, make_rng, random_cells
from maxlab.measure import CellMeasure, LatticeSpec
from maxlab.whitney import default_m, setup_whitney


def random_measure(rng, dim, res, extent, origin=None, zero_frac=0.0):
    origin = origin if origin is not None else (0,) * dim
    spec = LatticeSpec(dim, res, origin, extent)
    d = rng.random(spec.extent)
    if zero_frac:
        d[rng.random(spec.extent) < zero_frac] = 0.0
    return CellMeasure(spec, d)


@pytest.fixture
def rng():
    return make_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        ok, detail = RESULTS[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def whitney_instance(instance, seed=7, refine=1, R_W=9, m=None, ks=None):
    """Seeded one-dimensional bump instance; default thresholds keep the E-sets nonempty.

    ``ks`` given as (low, high) offsets below the top level overrides them.
    """
    rng = make_rng(seed, instance)
    sigma = random_cells(1, 4, rng)
    f = bump_function(sigma.spec, rng, 7)
    m = default_m(1, R_W) if m is None else m
    top = math.floor(math.log2(float(np.max(f.values * sigma.density))))
    span = range(top - m - 3, top - m + 1) if ks is None else range(top - ks[0], top - ks[1])
    st = setup_whitney(f, sigma, span, refine, R_W, 5, m, 2, rng=rng)
    return sigma, f, st
