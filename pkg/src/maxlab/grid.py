"""Shifted and truncated dyadic grids.

All grid arithmetic is done in integer units of 2^-M, where M is the finest
level of the truncation.  The level-l tiling of a grid with translation t is
the lattice (t mod 2^(M-l)) + 2^(M-l) Z^n, shifted by the continuous offset.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .measure import Rect

ENUMERATION_GUARD = 24


class GridSizeError(ValueError):
    """Raised when an enumeration would exceed the size guard."""


@dataclass(frozen=True)
class GridFamily:
    dim: int
    M: int
    N: int
    kind: str = "Omega"

    def __post_init__(self):
        if self.N > self.M:
            raise ValueError("need N <= M")
        if self.kind not in ("Omega", "Phi"):
            raise ValueError("kind must be 'Omega' or 'Phi'")

    @property
    def cardinality(self) -> int:
        return 2 ** (self.dim * (self.M - self.N))


@dataclass(frozen=True)
class GridShift:
    """One grid of a truncated family.

    ``form`` is ``"scales"`` (``data`` holds one 0/1 vector per level
    N+1..M, listed from coarse to fine) or ``"translation"`` (``data`` holds
    the integer translation in units of 2^-M, each entry in [0, 2^(M-N))).
    """

    dim: int
    M: int
    N: int
    form: str = "translation"
    data: tuple = ()
    offset: tuple = field(default=None)

    def __post_init__(self):
        if self.N > self.M:
            raise ValueError("need N <= M")
        if self.form == "translation":
            data = tuple(int(v) for v in (self.data or (0,) * self.dim))
            if len(data) != self.dim or any(v < 0 or v >= 2 ** (self.M - self.N) for v in data):
                raise ValueError("translation entries must lie in [0, 2^(M-N))")
        elif self.form == "scales":
            data = tuple(tuple(int(b) for b in beta) for beta in self.data)
            if len(data) != self.M - self.N or any(
                len(b) != self.dim or any(v not in (0, 1) for v in b) for b in data
            ):
                raise ValueError("scales form needs M-N binary vectors of length dim")
        else:
            raise ValueError("form must be 'scales' or 'translation'")
        object.__setattr__(self, "data", data)
        off = tuple(float(v) for v in (self.offset or (0.0,) * self.dim))
        if len(off) != self.dim or any(v < 0 or v >= 2.0 ** (-self.M) for v in off):
            raise ValueError("offset must lie in [0, 2^-M)^n")
        object.__setattr__(self, "offset", off)

    @classmethod
    def standard(cls, dim: int, M: int, N: int) -> "GridShift":
        return cls(dim, M, N)

    @property
    def translation_units(self) -> tuple:
        if self.form == "translation":
            return self.data
        t = [0] * self.dim
        for step, beta in enumerate(self.data):
            i = self.N + 1 + step
            for a in range(self.dim):
                t[a] += beta[a] << (self.M - i)
        return tuple(t)

    def level_offset_units(self, level: int) -> tuple:
        """Offset of the level tiling in units of 2^-M, reduced modulo the cube side."""
        self._check_level(level)
        if self.form == "scales":
            # direct sum of the finer scale choices, independent of translation_units
            t = [0] * self.dim
            for step, beta in enumerate(self.data):
                i = self.N + 1 + step
                if i > level:
                    for a in range(self.dim):
                        t[a] += beta[a] << (self.M - i)
            return tuple(t)
        side = 1 << (self.M - level)
        return tuple(v % side for v in self.data)

    def key(self) -> tuple:
        """Canonical identity: equal keys iff the grids have identical cube sets."""
        return (self.dim, self.M, self.N, self.translation_units, self.offset)

    def tiling_key(self) -> tuple:
        return tuple(self.level_offset_units(l) for l in range(self.N, self.M + 1)) + (self.offset,)

    def _check_level(self, level: int):
        if not self.N <= level <= self.M:
            raise ValueError(f"level {level} outside truncation [{self.N}, {self.M}]")

    def side(self, level: int) -> float:
        return 2.0 ** (-level)

    def containing_cube(self, x, level: int) -> "DyadicCube":
        self._check_level(level)
        x = np.asarray(x, dtype=float)
        base = np.asarray(self.offset) + np.asarray(self.level_offset_units(level)) * 2.0 ** (-self.M)
        k = np.floor((x - base) / self.side(level)).astype(np.int64)
        return DyadicCube(self, level, tuple(int(v) for v in k))

    def to_dict(self) -> dict:
        data = [list(b) for b in self.data] if self.form == "scales" else list(self.data)
        return {
            "n": self.dim,
            "M": self.M,
            "N": self.N,
            "form": self.form,
            "data": data,
            "offset": list(self.offset),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridShift":
        data = d["data"]
        if d["form"] == "scales":
            data = tuple(tuple(b) for b in data)
        return cls(d["n"], d["M"], d["N"], d["form"], tuple(data), tuple(d["offset"]))

    def as_translation(self) -> "GridShift":
        return GridShift(self.dim, self.M, self.N, "translation", self.translation_units, self.offset)


@dataclass(frozen=True)
class DyadicCube:
    grid: GridShift
    level: int
    index: tuple

    @property
    def side(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def side_units(self) -> int:
        return 1 << (self.grid.M - self.level)

    @property
    def lo_units(self) -> tuple:
        off = self.grid.level_offset_units(self.level)
        s = self.side_units
        return tuple(o + s * k for o, k in zip(off, self.index))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lo_units, dtype=float) * 2.0 ** (-self.grid.M) + np.asarray(self.grid.offset)

    @property
    def rect(self) -> Rect:
        lo = self.lo
        return Rect(tuple(lo), tuple(lo + self.side))

    def parent(self) -> "DyadicCube":
        lvl = self.level - 1
        self.grid._check_level(lvl)
        off = self.grid.level_offset_units(lvl)
        s = 1 << (self.grid.M - lvl)
        return DyadicCube(self.grid, lvl, tuple((u - o) // s for u, o in zip(self.lo_units, off)))

    def ancestor(self, r: int) -> "DyadicCube":
        c = self
        for _ in range(r):
            c = c.parent()
        return c

    def children(self) -> list:
        lvl = self.level + 1
        self.grid._check_level(lvl)
        off = self.grid.level_offset_units(lvl)
        s = 1 << (self.grid.M - lvl)
        base = [(u - o) // s for u, o in zip(self.lo_units, off)]
        return [
            DyadicCube(self.grid, lvl, tuple(b + d for b, d in zip(base, bits)))
            for bits in itertools.product((0, 1), repeat=self.grid.dim)
        ]

    def contains(self, other: "DyadicCube") -> bool:
        if other.level < self.level:
            return False
        a, b = self.lo_units, other.lo_units
        s, t = self.side_units, other.side_units
        return all(x <= y and y + t <= x + s for x, y in zip(a, b))


def enumerate_grids(fam: GridFamily, form: str = "scales") -> list:
    if fam.kind != "Omega":
        raise ValueError("only the finite Omega family can be enumerated")
    if fam.dim * (fam.M - fam.N) > ENUMERATION_GUARD:
        raise GridSizeError(f"n(M-N) = {fam.dim * (fam.M - fam.N)} exceeds {ENUMERATION_GUARD}")
    L = fam.M - fam.N
    if form == "scales":
        vecs = list(itertools.product((0, 1), repeat=fam.dim))
        return [GridShift(fam.dim, fam.M, fam.N, "scales", betas) for betas in itertools.product(vecs, repeat=L)]
    if form == "translation":
        return [
            GridShift(fam.dim, fam.M, fam.N, "translation", t)
            for t in itertools.product(range(2**L), repeat=fam.dim)
        ]
    raise ValueError("form must be 'scales' or 'translation'")


def sample_grid(fam: GridFamily, rng: np.random.Generator) -> GridShift:
    t = rng.integers(0, 2 ** (fam.M - fam.N), size=fam.dim)
    off = None
    if fam.kind == "Phi":
        off = tuple(rng.random(fam.dim) * 2.0 ** (-fam.M))
    return GridShift(fam.dim, fam.M, fam.N, "translation", tuple(int(v) for v in t), off)


def sample_translations(fam: GridFamily, rng: np.random.Generator, count: int):
    """Vectorized sampling: integer translations (count, n) and offsets (count, n)."""
    t = rng.integers(0, 2 ** (fam.M - fam.N), size=(count, fam.dim))
    if fam.kind == "Phi":
        off = rng.random((count, fam.dim)) * 2.0 ** (-fam.M)
    else:
        off = np.zeros((count, fam.dim))
    return t, off


def is_r_bad(c: DyadicCube, r: int) -> bool:
    if r < 0:
        raise ValueError("r must be >= 0")
    if c.level - r < c.grid.N:
        raise ValueError("level-r parent lies outside the grid truncation")
    p = c.ancestor(r)
    s = c.side_units
    top = (1 << r) - 3
    for cu, pu in zip(c.lo_units, p.lo_units):
        k = (cu - pu) // s
        if not 2 <= k <= top:
            return True
    return False


def bad_fraction(n: int, r: int) -> Fraction:
    if r < 1:
        raise ValueError("r must be >= 1")
    total = (2**r) ** n
    good = max(2**r - 4, 0) ** n
    return Fraction(total - good, total)


def closed_boundaries_meet(c_lo, c_side, p_lo, p_side) -> bool:
    """Whether the boundary of the closed tripled cube meets the boundary of the parent.

    Geometric test: some face of the parent (a degenerate closed box) meets the
    closed tripled cube.  Used as an oracle for :func:`is_r_bad`.
    """
    n = len(c_lo)
    t_lo = [a - c_side for a in c_lo]
    t_hi = [a + 2 * c_side for a in c_lo]
    p_hi = [a + p_side for a in p_lo]

    def boxes_meet(alo, ahi, blo, bhi):
        return all(max(x, y) <= min(u, v) for x, u, y, v in zip(alo, ahi, blo, bhi))

    for axis in range(n):
        for face in (p_lo[axis], p_hi[axis]):
            flo = list(p_lo)
            fhi = list(p_hi)
            flo[axis] = fhi[axis] = face
            if boxes_meet(flo, fhi, t_lo, t_hi):
                return True
    return False


def is_r_bad_many(g: GridShift, level: int, index, r: int) -> np.ndarray:
    """Vectorized :func:`is_r_bad` for an (m, n) array of cube indices at one level."""
    if level - r < g.N:
        raise ValueError("level-r parent lies outside the grid truncation")
    index = np.asarray(index, dtype=np.int64).reshape(-1, g.dim)
    s = 1 << (g.M - level)
    lo = np.asarray(g.level_offset_units(level)) + s * index
    ps = s << r
    poff = np.asarray(g.level_offset_units(level - r))
    plo = poff + ps * ((lo - poff) // ps)
    k = (lo - plo) // s
    return np.any((k < 2) | (k > (1 << r) - 3), axis=1)


def count_bad_offsets(n: int, r: int) -> int:
    """Exhaustive count over all placements of a cube inside its level-r parent."""
    g = GridShift.standard(n, r, 0)
    idx = np.array(list(itertools.product(range(2**r), repeat=n)), dtype=np.int64)
    return int(is_r_bad_many(g, r, idx, r).sum())
