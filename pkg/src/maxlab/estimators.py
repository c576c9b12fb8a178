"""Estimator-style wrappers: configure in the constructor, ``fit`` on measures, read fitted attributes.

Inputs are CellMeasure objects rather than feature matrices, so only the
parameter handling of scikit-learn's BaseEstimator is reused.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .constants import TestingParams, constants_report
from .grid import GridShift
from .maximal import ScaleWindow, dyadic_maximal, maximal, maximal_many
from .measure import CellFunction, CellMeasure
from .stopping import build_principal, check_principal
from .whitney import check_whitney_properties, setup_whitney


def _require(est, attr: str):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


class MaximalFunction(BaseEstimator):
    """Maximal function of a fitted measure over cubes with dyadic sides in ``window``."""

    def __init__(self, window: ScaleWindow | None = None):
        self.window = window

    def fit(self, measure: CellMeasure, y=None):
        self.measure_ = measure
        self.window_ = self.window or ScaleWindow.for_measures(measure)
        return self

    def transform(self, points) -> np.ndarray:
        _require(self, "measure_")
        return maximal_many(self.measure_, np.atleast_2d(points), self.window_)

    def witness(self, x):
        _require(self, "measure_")
        return maximal(self.measure_, x, self.window_)


class DyadicMaximalFunction(BaseEstimator):
    """Maximal function restricted to the cubes of one grid."""

    def __init__(self, grid: GridShift, window: ScaleWindow | None = None):
        self.grid = grid
        self.window = window

    def fit(self, measure: CellMeasure, y=None):
        self.measure_ = measure
        return self

    def transform(self, points) -> np.ndarray:
        _require(self, "measure_")
        pts = np.atleast_2d(points)
        return np.array([dyadic_maximal(self.measure_, x, self.grid, self.window).value for x in pts])


class TwoWeightConstants(BaseEstimator):
    """A2, the two testing constants and a norm lower bound for a pair (sigma, omega)."""

    def __init__(
        self,
        gamma: float = 3.0,
        d: float | None = None,
        window: ScaleWindow | None = None,
        position_refine: int = 1,
        quad_sub: int = 2,
        restarts: int = 4,
        iterations: int = 20,
        seed: int = 0,
    ):
        self.gamma = gamma
        self.d = d
        self.window = window
        self.position_refine = position_refine
        self.quad_sub = quad_sub
        self.restarts = restarts
        self.iterations = iterations
        self.seed = seed

    def fit(self, sigma: CellMeasure, omega: CellMeasure):
        p = TestingParams(self.gamma, self.d, self.window, self.position_refine, self.quad_sub)
        self.report_ = constants_report(sigma, omega, p, self.restarts, self.iterations, self.seed)
        self.a2_ = self.report_.a2.value
        self.t_gamma_ = self.report_.t_gamma.value
        self.t_d_gamma_ = self.report_.t_d_gamma.value
        self.norm_lb_ = self.report_.norm_lb.value
        self.ratio_ = self.report_.ratio
        return self


class WhitneyDecomposition(BaseEstimator):
    """Whitney families of the superlevel sets 2^k of M(f sigma), k in ``ks``."""

    def __init__(self, ks=(0,), R_W: int = 9, N_overlap: int = 5, refine: int = 1, m: int | None = None, m0: int = 2, translation=None):
        self.ks = ks
        self.R_W = R_W
        self.N_overlap = N_overlap
        self.refine = refine
        self.m = m
        self.m0 = m0
        self.translation = translation

    def fit(self, f: CellFunction, sigma: CellMeasure):
        self.setup_ = setup_whitney(
            f, sigma, self.ks, self.refine, self.R_W, self.N_overlap, self.m, self.m0, translation=self.translation
        )
        self.family_ = self.setup_.family
        self.check_ = check_whitney_properties(self.family_)
        return self


class PrincipalCubes(BaseEstimator):
    """Principal-cube stopping time over a Whitney family carrying averages."""

    def __init__(self, eta: float = 4.0, L: int | None = None):
        self.eta = eta
        self.L = L

    def fit(self, family, f_norm_sq: float | None = None):
        self.family_ = build_principal(family, self.eta, self.L)
        self.check_ = check_principal(self.family_, f_norm_sq)
        return self
