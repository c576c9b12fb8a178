"""Numerical laboratory for maximal-function two-weight inequalities on piecewise-constant measures."""

__version__ = "0.1.0"

from .constants import (
    ConstantsReport,
    TestingParams,
    a2_constant,
    constants_report,
    estimate_norm_lower,
    mollified_stability_report,
    restricted_testing_constant,
    stabilize,
    testing_constant,
)
from .estimators import DyadicMaximalFunction, MaximalFunction, PrincipalCubes, TwoWeightConstants, WhitneyDecomposition
from .generators import generate_measure, make_rng
from .grid import DyadicCube, GridFamily, GridShift, bad_fraction, enumerate_grids, is_r_bad, sample_grid
from .maximal import ScaleWindow, domination_check, dyadic_maximal, maximal, weighted_dyadic_maximal
from .measure import CellFunction, CellMeasure, LatticeSpec, MollifierKernel, Rect, integrate, mollify, read_measure, write_measure
from .stopping import build_principal, check_principal, split_good_bad
from .whitney import check_whitney_properties, setup_whitney, superlevel, whitney_decompose

__all__ = [
    "CellFunction",
    "CellMeasure",
    "ConstantsReport",
    "DyadicCube",
    "DyadicMaximalFunction",
    "GridFamily",
    "GridShift",
    "LatticeSpec",
    "MaximalFunction",
    "MollifierKernel",
    "PrincipalCubes",
    "Rect",
    "ScaleWindow",
    "TestingParams",
    "TwoWeightConstants",
    "WhitneyDecomposition",
    "a2_constant",
    "bad_fraction",
    "build_principal",
    "check_principal",
    "check_whitney_properties",
    "constants_report",
    "domination_check",
    "dyadic_maximal",
    "enumerate_grids",
    "estimate_norm_lower",
    "generate_measure",
    "integrate",
    "is_r_bad",
    "make_rng",
    "maximal",
    "mollified_stability_report",
    "mollify",
    "read_measure",
    "restricted_testing_constant",
    "sample_grid",
    "setup_whitney",
    "split_good_bad",
    "stabilize",
    "superlevel",
    "testing_constant",
    "weighted_dyadic_maximal",
    "whitney_decompose",
    "write_measure",
]
