"""Seeded measure families used by experiments and tests.

Every generator returns a CellMeasure of total mass 1 unless ``mass`` says
otherwise.  Random streams come from numpy's Philox counter-based generator
keyed by ``(seed, instance)``.
"""

from __future__ import annotations

import numpy as np

from .measure import CellFunction, CellMeasure, LatticeSpec

GENERATORS = ("uniform", "random-cells", "cantor", "power", "point-pair")


def make_rng(seed: int, instance: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(instance)])))


def _normalized(spec: LatticeSpec, density: np.ndarray, mass: float) -> CellMeasure:
    total = float(density.sum()) * spec.cell_volume
    if total <= 0:
        raise ValueError("generated density has zero mass")
    return CellMeasure(spec, density * (mass / total))


def _unit_spec(dim: int, res: int) -> LatticeSpec:
    return LatticeSpec(dim, res, (0,) * dim, (2**res,) * dim)


def uniform(dim: int = 1, res: int = 4, mass: float = 1.0) -> CellMeasure:
    spec = _unit_spec(dim, res)
    return _normalized(spec, np.ones(spec.extent), mass)


def random_cells(dim: int = 1, res: int = 4, rng: np.random.Generator | None = None, mass: float = 1.0) -> CellMeasure:
    """Independent U[0,1] cell densities on the unit cube."""
    rng = rng or make_rng(0)
    spec = _unit_spec(dim, res)
    return _normalized(spec, rng.random(spec.extent), mass)


def cantor(dim: int = 1, depth: int = 3, mass: float = 1.0) -> CellMeasure:
    """Dyadic Cantor mass: each interval keeps its outer quarters, products across axes."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    keep = np.ones(1, dtype=bool)
    for _ in range(depth):
        keep = np.kron(keep, np.array([True, False, False, True]))
    spec = _unit_spec(dim, 2 * depth)
    density = np.ones(spec.extent)
    for a in range(dim):
        shape = [1] * dim
        shape[a] = keep.size
        density = density * keep.reshape(shape)
    return _normalized(spec, density, mass)


def power(dim: int = 1, a: float = -0.5, res: int = 4, mass: float = 1.0) -> CellMeasure:
    """Density |x|^a on [-1, 1]^n, sampled at cell centers."""
    if a <= -dim:
        raise ValueError("exponent must exceed -dim for local integrability")
    spec = LatticeSpec(dim, res, (-(2**res),) * dim, (2 ** (res + 1),) * dim)
    h = spec.cell_side
    axes = [(np.arange(o, o + e) + 0.5) * h for o, e in zip(spec.origin, spec.extent)]
    grid = np.meshgrid(*axes, indexing="ij")
    r = np.sqrt(sum(g**2 for g in grid))
    return _normalized(spec, r**a, mass)


def point_pair(dim: int = 1, gap: float = 0.5, res: int = 4, mass: float = 1.0) -> CellMeasure:
    """Two one-cell bumps of equal mass along the first axis, ``gap`` apart (rounded to cells)."""
    if gap < 0:
        raise ValueError("gap must be >= 0")
    h = 2.0**-res
    cells = int(round(gap / h))
    ext = [cells + 2] + [1] * (dim - 1)
    spec = LatticeSpec(dim, res, (0,) * dim, tuple(ext))
    density = np.zeros(ext)
    density[(0,) * dim] = 1.0
    density[(cells + 1,) + (0,) * (dim - 1)] = 1.0
    return _normalized(spec, density, mass)


def bump_function(spec: LatticeSpec, rng: np.random.Generator, height_exp: int = 7) -> CellFunction:
    """Small positive noise plus a three-cell bump of height about 2^height_exp along the first axis."""
    v = rng.random(spec.extent) * 0.5
    n0 = spec.extent[0]
    c = int(rng.integers(1, n0 - 1)) if n0 > 2 else 0
    sl = (slice(max(c - 1, 0), c + 2),) + (slice(None),) * (spec.dim - 1)
    v[sl] += rng.random(v[sl].shape) * 2.0**height_exp
    return CellFunction(spec, v)


def generate_measure(name: str, dim: int = 1, seed: int = 0, instance: int = 0, **params) -> CellMeasure:
    """Dispatch by family name; parameters not used by a family are rejected."""
    if name == "uniform":
        return uniform(dim, **params)
    if name == "random-cells":
        return random_cells(dim, rng=make_rng(seed, instance), **params)
    if name == "cantor":
        return cantor(dim, **params)
    if name == "power":
        return power(dim, **params)
    if name == "point-pair":
        return point_pair(dim, **params)
    raise ValueError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
