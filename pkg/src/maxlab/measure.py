"""Piecewise-constant measures on uniform dyadic lattices.

Rectangle masses are exact: the cumulative mass function is the multilinear
interpolant of the node prefix-sum table, so a rectangle query is an
inclusion-exclusion over its 2^n corners.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ResolutionError(ValueError):
    """Raised when a kernel scale is too small for the output lattice."""


@dataclass(frozen=True)
class Rect:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("Rect requires lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    @property
    def center(self) -> tuple:
        return tuple((a + b) / 2 for a, b in zip(self.lo, self.hi))

    def dilate(self, factor: float) -> "Rect":
        """Concentric rectangle with every side multiplied by ``factor``."""
        c = np.add(self.lo, self.hi) / 2
        half = np.subtract(self.hi, self.lo) * (factor / 2)
        return Rect(tuple(c - half), tuple(c + half))

    def translate(self, v) -> "Rect":
        return Rect(tuple(np.add(self.lo, v)), tuple(np.add(self.hi, v)))

    def contains_point(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    @classmethod
    def cube(cls, lo, side: float) -> "Rect":
        lo = np.asarray(lo, dtype=float)
        return cls(tuple(lo), tuple(lo + side))


@dataclass(frozen=True)
class LatticeSpec:
    dim: int
    res_exp: int
    origin: tuple
    extent: tuple

    def __post_init__(self):
        origin = tuple(int(v) for v in self.origin)
        extent = tuple(int(v) for v in self.extent)
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if len(origin) != self.dim or len(extent) != self.dim:
            raise ValueError("origin and extent must have dim entries")
        if any(e < 1 for e in extent):
            raise ValueError("extent components must be >= 1")
        object.__setattr__(self, "res_exp", int(self.res_exp))
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)

    @property
    def cell_side(self) -> float:
        return 2.0 ** (-self.res_exp)

    @property
    def cell_volume(self) -> float:
        return self.cell_side ** self.dim

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float) * self.cell_side

    @property
    def hi(self) -> np.ndarray:
        return (np.asarray(self.origin) + np.asarray(self.extent)) * self.cell_side

    @property
    def box(self) -> Rect:
        return Rect(tuple(self.lo), tuple(self.hi))

    @property
    def shape(self) -> tuple:
        return self.extent

    def edges(self, axis: int) -> np.ndarray:
        o = self.origin[axis]
        return np.arange(o, o + self.extent[axis] + 1, dtype=float) * self.cell_side

    def refined(self, levels: int) -> "LatticeSpec":
        if levels < 0:
            raise ValueError("levels must be >= 0")
        f = 2**levels
        return LatticeSpec(
            self.dim,
            self.res_exp + levels,
            tuple(o * f for o in self.origin),
            tuple(e * f for e in self.extent),
        )

    def translated(self, v) -> "LatticeSpec":
        return LatticeSpec(self.dim, self.res_exp, tuple(np.add(self.origin, v)), self.extent)


class CellMeasure:
    """Nonnegative density, constant on each lattice cell, zero outside the box."""

    __slots__ = ("spec", "density", "total_mass", "_prefix")

    def __init__(self, spec: LatticeSpec, density):
        density = np.array(density, dtype=float, copy=True)
        if density.shape != tuple(spec.extent):
            raise ValueError(f"density shape {density.shape} != extent {spec.extent}")
        if not np.all(np.isfinite(density)) or np.any(density < 0):
            raise ValueError("density must be finite and nonnegative")
        density.setflags(write=False)
        self.spec = spec
        self.density = density
        prefix = np.zeros(tuple(e + 1 for e in spec.extent))
        inner = density * spec.cell_volume
        for axis in range(spec.dim):
            inner = np.cumsum(inner, axis=axis)
        prefix[tuple(slice(1, None) for _ in range(spec.dim))] = inner
        prefix.setflags(write=False)
        self._prefix = prefix
        self.total_mass = float(prefix[tuple(-1 for _ in range(spec.dim))])

    def __repr__(self) -> str:
        s = self.spec
        return (
            f"CellMeasure(dim={s.dim}, res_exp={s.res_exp}, origin={s.origin}, "
            f"extent={s.extent}, total_mass={self.total_mass:.6g})"
        )

    @property
    def dim(self) -> int:
        return self.spec.dim

    def cell_masses(self) -> np.ndarray:
        return self.density * self.spec.cell_volume

    def cdf(self, y) -> np.ndarray:
        """Mass of the orthant below ``y`` (clamped to the box), shape (...,)."""
        y = np.asarray(y, dtype=float)
        s = self.spec
        if s.dim == 1:
            return np.interp(y[..., 0], s.edges(0), self._prefix)
        u = (y - s.lo) / s.cell_side
        ext = np.asarray(s.extent)
        u = np.clip(u, 0.0, ext)
        i = np.minimum(np.floor(u).astype(np.int64), ext - 1)
        t = u - i
        out = np.zeros(y.shape[:-1])
        for bits in itertools.product((0, 1), repeat=s.dim):
            w = np.ones(y.shape[:-1])
            idx = []
            for a, b in enumerate(bits):
                w = w * (t[..., a] if b else 1.0 - t[..., a])
                idx.append(i[..., a] + b)
            out = out + w * self._prefix[tuple(idx)]
        return out

    def integrate_many(self, lo, hi, clip_lo=None, clip_hi=None) -> np.ndarray:
        """Exact masses of the boxes [lo, hi], optionally intersected with clip boxes."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        s = self.spec
        lo = np.maximum(lo, s.lo)
        hi = np.minimum(hi, s.hi)
        if clip_lo is not None:
            lo = np.maximum(lo, clip_lo)
            hi = np.minimum(hi, clip_hi)
        empty = np.any(hi <= lo, axis=-1)
        hi = np.maximum(hi, lo)
        out = np.zeros(lo.shape[:-1])
        n = s.dim
        for bits in itertools.product((0, 1), repeat=n):
            corner = np.where(np.asarray(bits, dtype=bool), hi, lo)
            sign = -1.0 if (n - sum(bits)) % 2 else 1.0
            out = out + sign * self.cdf(corner)
        out = np.where(empty, 0.0, np.maximum(out, 0.0))
        return out

    def integrate(self, r: Rect) -> float:
        return float(self.integrate_many(np.asarray(r.lo), np.asarray(r.hi)))

    def support_box(self) -> Rect | None:
        """Bounding box of the cells carrying positive density."""
        nz = np.nonzero(self.density > 0)
        if len(nz[0]) == 0:
            return None
        s = self.spec
        lo = np.array([(s.origin[a] + nz[a].min()) for a in range(s.dim)]) * s.cell_side
        hi = np.array([(s.origin[a] + nz[a].max() + 1) for a in range(s.dim)]) * s.cell_side
        return Rect(tuple(lo), tuple(hi))

    def refined(self, levels: int) -> "CellMeasure":
        """Same measure on a lattice 2^levels times finer (densities unchanged)."""
        d = self.density
        for axis in range(self.dim):
            d = np.repeat(d, 2**levels, axis=axis)
        return CellMeasure(self.spec.refined(levels), d)

    def on_lattice(self, spec: LatticeSpec) -> "CellMeasure":
        """Restriction to a finer (or equal) lattice box; mass outside ``spec`` is dropped."""
        if spec.dim != self.dim or spec.res_exp < self.spec.res_exp:
            raise ValueError("target lattice must have the same dim and be at least as fine")
        ref = self.refined(spec.res_exp - self.spec.res_exp)
        out = np.zeros(spec.extent)
        src, dst = [], []
        for a in range(self.dim):
            s0, s1 = ref.spec.origin[a], ref.spec.origin[a] + ref.spec.extent[a]
            d0, d1 = spec.origin[a], spec.origin[a] + spec.extent[a]
            a0, a1 = max(s0, d0), min(s1, d1)
            if a1 <= a0:
                return CellMeasure(spec, out)
            src.append(slice(a0 - s0, a1 - s0))
            dst.append(slice(a0 - d0, a1 - d0))
        out[tuple(dst)] = ref.density[tuple(src)]
        return CellMeasure(spec, out)

    def masked(self, mask) -> "CellMeasure":
        return CellMeasure(self.spec, np.where(mask, self.density, 0.0))


@dataclass(frozen=True)
class CellFunction:
    spec: LatticeSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != tuple(self.spec.extent):
            raise ValueError("values shape must match the lattice extent")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("values must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def times(self, m: CellMeasure) -> CellMeasure:
        """The measure h dm, on the finer of the two lattices, over this function's box."""
        res = max(self.spec.res_exp, m.spec.res_exp)
        lev = res - self.spec.res_exp
        fine_spec = self.spec.refined(lev)
        vals = self.values
        for axis in range(self.spec.dim):
            vals = np.repeat(vals, 2**lev, axis=axis)
        dens = m.on_lattice(fine_spec).density
        return CellMeasure(fine_spec, vals * dens)


def integrate(m: CellMeasure, r: Rect) -> float:
    return m.integrate(r)


def scale(m: CellMeasure, c: float) -> CellMeasure:
    if c < 0:
        raise ValueError("scale factor must be nonnegative")
    return CellMeasure(m.spec, m.density * c)


def translate(m: CellMeasure, v) -> CellMeasure:
    v = tuple(int(x) for x in np.atleast_1d(v))
    return CellMeasure(m.spec.translated(v), m.density)


def zero_measure(spec: LatticeSpec) -> CellMeasure:
    return CellMeasure(spec, np.zeros(spec.extent))


# --- mollification -------------------------------------------------------


class MollifierKernel:
    """Tensor product of an even piecewise-linear profile supported in (-1, 1).

    The default profile is a trapezoid of height 2/3 with a plateau on
    |t| <= 9/16 that falls to zero at |t| = 15/16.
    """

    def __init__(self, dim: int, knots=None, values=None, check_points: int = 1000):
        if knots is None:
            knots = (-15 / 16, -9 / 16, 9 / 16, 15 / 16)
            values = (0.0, 2 / 3, 2 / 3, 0.0)
        t = np.asarray(knots, dtype=float)
        p = np.asarray(values, dtype=float)
        if t[0] <= -1 or t[-1] >= 1 or np.any(np.diff(t) <= 0):
            raise ValueError("profile knots must be increasing inside (-1, 1)")
        if p[0] != 0 or p[-1] != 0 or np.any(p < 0) or np.any(p > 1):
            raise ValueError("profile values must lie in [0, 1] and vanish at the ends")
        if not np.allclose(t, -t[::-1]) or not np.allclose(p, p[::-1]):
            raise ValueError("profile must be even")
        self.dim = int(dim)
        # pad with the support endpoints so the antiderivatives start at -1
        self._t = np.concatenate([[-1.0], t, [1.0]])
        self._p = np.concatenate([[0.0], p, [0.0]])
        dt = np.diff(self._t)
        slope = np.diff(self._p) / dt
        phi = np.zeros_like(self._t)
        psi = np.zeros_like(self._t)
        for k in range(len(dt)):
            h = dt[k]
            phi[k + 1] = phi[k] + self._p[k] * h + slope[k] * h * h / 2
            psi[k + 1] = psi[k] + phi[k] * h + self._p[k] * h * h / 2 + slope[k] * h**3 / 6
        if abs(phi[-1] - 1.0) > 1e-12:
            raise ValueError(f"profile integral is {phi[-1]!r}, expected 1")
        self._slope = slope
        self._phi = phi
        self._psi = psi
        self.c_phi = self._translation_constant(check_points)

    def profile(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.interp(u, self._t, self._p, left=0.0, right=0.0)

    def profile_cdf(self, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
        k = np.clip(np.searchsorted(self._t, u, side="right") - 1, 0, len(self._slope) - 1)
        d = u - self._t[k]
        return self._phi[k] + self._p[k] * d + self._slope[k] * d * d / 2

    def _profile_cdf_integral(self, u) -> np.ndarray:
        """Antiderivative of the profile CDF minus max(u, 0); vanishes for |u| >= 1."""
        u = np.asarray(u, dtype=float)
        uc = np.clip(u, -1.0, 1.0)
        k = np.clip(np.searchsorted(self._t, uc, side="right") - 1, 0, len(self._slope) - 1)
        d = uc - self._t[k]
        psi = (
            self._psi[k]
            + self._phi[k] * d
            + self._p[k] * d * d / 2
            + self._slope[k] * d**3 / 6
        )
        return np.where(np.abs(u) >= 1.0, 0.0, psi - np.maximum(uc, 0.0))

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.prod(self.profile(z), axis=-1)

    def scaled(self, z, eps: float) -> np.ndarray:
        """phi_eps(z) = eps^{-n} phi(z / eps)."""
        return self(np.asarray(z, dtype=float) / eps) / eps**self.dim

    def _translation_constant(self, m: int) -> float:
        # per-axis sup of p(z) / (p((z + h)/8) / 8) over |h| < 1; tensorizes
        z = np.linspace(-1, 1, m)
        h = np.linspace(-1, 1, m + 2)[1:-1]
        num = self.profile(z)[:, None]
        den = self.profile((z[:, None] + h[None, :]) / 8) / 8
        pos = num > 0
        if np.any(pos & (den <= 0)):
            raise ValueError("profile violates the translation bound")
        ratio = np.where(pos, num / np.where(den > 0, den, 1.0), 0.0)
        return float(ratio.max()) ** self.dim


def _axis_transfer(in_edges, out_edges, eps, kernel: MollifierKernel) -> np.ndarray:
    """T[o, i] = integral over input cell i of the kernel mass landing in output cell o."""
    c0 = in_edges[:-1][None, :]
    c1 = in_edges[1:][None, :]
    a = out_edges[:-1][:, None]
    b = out_edges[1:][:, None]
    overlap = np.maximum(0.0, np.minimum(c1, b) - np.maximum(c0, a))
    e = kernel._profile_cdf_integral
    corr = (e((b - c0) / eps) - e((b - c1) / eps)) - (e((a - c0) / eps) - e((a - c1) / eps))
    return overlap + eps * corr


def mollify(m: CellMeasure, eps: float, kernel: MollifierKernel, out_res_exp: int) -> CellMeasure:
    """Cell averages of m * phi_eps on a lattice with side 2^-out_res_exp."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if out_res_exp < m.spec.res_exp:
        raise ValueError("output lattice must be at least as fine as the input")
    if kernel.dim != m.dim:
        raise ValueError("kernel and measure dimensions differ")
    h = 2.0 ** (-out_res_exp)
    if eps < 2 * h:
        raise ResolutionError(f"eps={eps} unresolved on lattice 2^-{out_res_exp}")
    s = m.spec
    f = 2 ** (out_res_exp - s.res_exp)
    pad = int(np.ceil(eps / h))
    origin = tuple(o * f - pad for o in s.origin)
    extent = tuple(e * f + 2 * pad for e in s.extent)
    out_spec = LatticeSpec(s.dim, out_res_exp, origin, extent)
    masses = np.asarray(m.density)
    for axis in range(s.dim):
        T = _axis_transfer(s.edges(axis), out_spec.edges(axis), eps, kernel)
        masses = np.moveaxis(np.tensordot(T, masses, axes=([1], [axis])), 0, axis)
    masses = np.maximum(masses, 0.0)
    return CellMeasure(out_spec, masses / out_spec.cell_volume)


# --- file format ---------------------------------------------------------


def write_measure(m: CellMeasure, path) -> None:
    s = m.spec
    lines = [
        f"dim {s.dim}",
        f"res {s.res_exp}",
        "origin " + " ".join(str(v) for v in s.origin),
        "extent " + " ".join(str(v) for v in s.extent),
    ]
    for idx in zip(*np.nonzero(m.density)):
        lines.append(" ".join(str(int(k)) for k in idx) + " " + repr(float(m.density[idx])))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_measure(path) -> CellMeasure:
    header = {}
    cells = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] in ("dim", "res", "origin", "extent"):
            header[parts[0]] = [int(v) for v in parts[1:]]
            continue
        if "dim" not in header:
            raise ValueError(f"line {lineno}: cell before header")
        n = header["dim"][0]
        if len(parts) != n + 1:
            raise ValueError(f"line {lineno}: expected {n} indices and a density")
        key = tuple(int(v) for v in parts[:n])
        val = float(parts[n])
        if val < 0:
            raise ValueError(f"line {lineno}: negative density")
        if key in cells:
            raise ValueError(f"line {lineno}: duplicate cell {key}")
        cells[key] = val
    missing = {"dim", "res", "origin", "extent"} - header.keys()
    if missing:
        raise ValueError(f"missing header fields: {sorted(missing)}")
    spec = LatticeSpec(header["dim"][0], header["res"][0], tuple(header["origin"]), tuple(header["extent"]))
    dens = np.zeros(spec.extent)
    for key, val in cells.items():
        if any(k < 0 or k >= e for k, e in zip(key, spec.extent)):
            raise ValueError(f"cell {key} outside extent")
        dens[key] = val
    return CellMeasure(spec, dens)
