"""Superlevel sets of the maximal function, Whitney decompositions and E-sets.

Regions live on a refined lattice: a boolean mask over a box of cells of side
2^-res.  Grid cubes and their dilates are handled in integer lattice units so
every containment and overlap test is exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridFamily, GridShift, sample_grid
from .maximal import ScaleWindow, cell_max_many
from .measure import CellFunction, CellMeasure, LatticeSpec, Rect


@dataclass(frozen=True)
class LatticeDomain:
    res: int
    origin: tuple
    shape: tuple

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> float:
        return 2.0 ** (-self.res)

    def cell_lo(self) -> np.ndarray:
        axes = [np.arange(o, o + s) for o, s in zip(self.origin, self.shape)]
        g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return g.astype(float) * self.h

    def spec(self) -> LatticeSpec:
        return LatticeSpec(self.dim, self.res, self.origin, self.shape)


class _Counter:
    """Exact counts of marked cells in integer boxes via a prefix table."""

    def __init__(self, dom: LatticeDomain, mask: np.ndarray):
        self.dom = dom
        p = np.zeros(tuple(s + 1 for s in dom.shape), dtype=np.int64)
        inner = mask.astype(np.int64)
        for a in range(dom.dim):
            inner = np.cumsum(inner, axis=a)
        p[tuple(slice(1, None) for _ in range(dom.dim))] = inner
        self.p = p

    def count(self, lo, hi) -> np.ndarray:
        """Marked cells in [lo, hi) (absolute lattice units), clipped to the domain."""
        o = np.asarray(self.dom.origin)
        s = np.asarray(self.dom.shape)
        a = np.clip(np.asarray(lo) - o, 0, s)
        b = np.clip(np.asarray(hi) - o, 0, s)
        b = np.maximum(a, b)
        out = np.zeros(a.shape[:-1], dtype=np.int64)
        n = self.dom.dim
        for bits in itertools.product((0, 1), repeat=n):
            corner = np.where(np.asarray(bits, dtype=bool), b, a)
            sign = -1 if (n - sum(bits)) % 2 else 1
            out += sign * self.p[tuple(corner[..., i] for i in range(n))]
        return out

    def inside(self, lo, hi) -> np.ndarray:
        """Whether the box [lo, hi) lies in the domain and every cell of it is marked."""
        lo = np.asarray(lo)
        hi = np.asarray(hi)
        o = np.asarray(self.dom.origin)
        e = o + np.asarray(self.dom.shape)
        within = np.all((lo >= o) & (hi <= e), axis=-1)
        vol = np.prod(hi - lo, axis=-1)
        return within & (self.count(lo, hi) == vol)


# --- superlevel sets -----------------------------------------------------------


@dataclass
class MaximalField:
    """Largest window average over cubes containing each whole cell of a domain."""

    measure: CellMeasure
    domain: LatticeDomain
    window: ScaleWindow
    values: np.ndarray
    witness_lo: np.ndarray
    witness_side: np.ndarray
    k_min: int


def field_domain(fsigma: CellMeasure, res: int, k_min: int) -> LatticeDomain:
    """Support box grown far enough that every outside point has maximal function <= 2^k_min."""
    n = fsigma.dim
    box = fsigma.support_box()
    h = 2.0 ** (-res)
    if box is None:
        lo = np.asarray(fsigma.spec.lo)
        return LatticeDomain(res, tuple(int(v) for v in np.floor(lo / h)), (1,) * n)
    margin = (fsigma.total_mass / 2.0**k_min) ** (1.0 / n)
    pad = math.ceil(margin / h) + 1
    lo = [round(v / h) - pad for v in box.lo]
    hi = [round(v / h) + pad for v in box.hi]
    return LatticeDomain(res, tuple(lo), tuple(b - a for a, b in zip(lo, hi)))


def maximal_field(fsigma: CellMeasure, domain: LatticeDomain, window: ScaleWindow, k_min: int) -> MaximalField:
    n = fsigma.dim
    lo = domain.cell_lo().reshape(-1, n)
    vals, wlo, wside = cell_max_many(fsigma, lo, lo + domain.h, window)
    shape = domain.shape
    return MaximalField(fsigma, domain, window, vals.reshape(shape), wlo.reshape(shape + (n,)), wside.reshape(shape), k_min)


@dataclass
class SuperlevelSet:
    k: int
    domain: LatticeDomain
    mask: np.ndarray
    field: MaximalField | None = None

    @property
    def threshold(self) -> float:
        return 2.0**self.k

    def is_empty(self) -> bool:
        return not bool(self.mask.any())

    def replay_witnesses(self) -> bool:
        """Re-integrate every stored witness: it must contain its cell and average above 2^k."""
        if self.field is None or self.is_empty():
            return True
        f = self.field
        n = self.domain.dim
        idx = np.nonzero(self.mask)
        lo = f.witness_lo[idx]
        side = f.witness_side[idx]
        cell = self.domain.cell_lo()[idx]
        contains = np.all((lo <= cell) & (cell + self.domain.h <= lo + side[:, None]), axis=1)
        avg = f.measure.integrate_many(lo, lo + side[:, None]) / side**n
        return bool(np.all(contains) and np.all(avg > self.threshold))


def superlevel_from_field(f: MaximalField, k: int) -> SuperlevelSet:
    if k < f.k_min:
        raise ValueError("field domain was sized for thresholds >= k_min")
    return SuperlevelSet(k, f.domain, f.values > 2.0**k, f)


def superlevel(fsigma: CellMeasure, k: int, w: ScaleWindow, refine: int = 1) -> SuperlevelSet:
    res = fsigma.spec.res_exp + refine
    dom = field_domain(fsigma, res, k)
    return superlevel_from_field(maximal_field(fsigma, dom, w, k), k)


# --- Whitney decomposition ----------------------------------------------------------


def overlap_cap(n: int, R_W: int, N: int) -> int:
    """Largest possible number of N-dilates of one family covering a point."""
    if R_W <= N:
        raise ValueError("the overlap bound needs R_W > N")
    levels = math.floor(math.log2((2 * R_W + N + 1) / (R_W - N))) + 1
    return levels * (N + 1) ** n


def crowd_cap(n: int, R_W: int, N: int) -> int:
    """Largest possible number of family cubes meeting one N-dilate."""
    if R_W <= N:
        raise ValueError("the crowd bound needs R_W > N")
    rho_min = (R_W - N) / (2 * (R_W + 1))
    rho_max = (2 * R_W + N + 1) / (R_W - 1)
    return math.floor(((N + 2 * rho_max) / rho_min) ** n)


def default_m(n: int, R_W: int) -> int:
    return math.ceil(math.log2(4 * (3 * R_W) ** n)) + 1


@dataclass
class WhitneyFamily:
    grid: GridShift
    R_W: int
    N_overlap: int
    domain: LatticeDomain
    regions: dict
    k: np.ndarray
    level: np.ndarray
    lo: np.ndarray
    side: np.ndarray
    averages: np.ndarray | None = None
    sigma_mass: np.ndarray | None = None
    measured: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.k)

    @property
    def j(self) -> np.ndarray:
        """Position of each cube within its k-level."""
        out = np.zeros(len(self), dtype=np.int64)
        for k in np.unique(self.k):
            idx = np.nonzero(self.k == k)[0]
            out[idx] = np.arange(len(idx))
        return out

    def index(self) -> np.ndarray:
        """Grid indices of the cubes at their levels."""
        g = self.grid
        f = 1 << (self.domain.res - g.M)
        out = np.empty_like(self.lo)
        for i, lvl in enumerate(self.level):
            off = np.asarray(g.level_offset_units(int(lvl))) * f
            out[i] = (self.lo[i] - off) // self.side[i]
        return out

    def rects(self) -> list:
        h = self.domain.h
        return [Rect(tuple(l * h), tuple((l + s) * h)) for l, s in zip(self.lo, self.side)]

    def subset(self, idx) -> "WhitneyFamily":
        idx = np.asarray(idx, dtype=np.int64)
        return WhitneyFamily(
            self.grid,
            self.R_W,
            self.N_overlap,
            self.domain,
            self.regions,
            self.k[idx],
            self.level[idx],
            self.lo[idx],
            self.side[idx],
            None if self.averages is None else self.averages[idx],
            None if self.sigma_mass is None else self.sigma_mass[idx],
        )

    def with_averages(self, f: CellFunction, sigma: CellMeasure) -> "WhitneyFamily":
        fs = f.times(sigma)
        h = self.domain.h
        lo = self.lo * h
        hi = (self.lo + self.side[:, None]) * h
        sm = sigma.integrate_many(lo, hi)
        fm = fs.integrate_many(lo, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            avg = np.where(sm > 0, fm / np.where(sm > 0, sm, 1.0), 0.0)
        out = self.subset(np.arange(len(self)))
        out.averages = avg
        out.sigma_mass = sm
        out.measured = dict(self.measured)
        return out

    def to_rows(self) -> list:
        idx = self.index()
        j = self.j
        rows = []
        for i in range(len(self)):
            row = {"k": int(self.k[i]), "j": int(j[i]), "level": int(self.level[i])}
            for a in range(self.domain.dim):
                row[f"index{a}"] = int(idx[i, a])
            row["A_jk"] = None if self.averages is None else float(self.averages[i])
            rows.append(row)
        return rows


def _grid_units(g: GridShift, dom: LatticeDomain, level: int):
    f = 1 << (dom.res - g.M)
    return np.asarray(g.level_offset_units(level), dtype=np.int64) * f, (1 << (g.M - level)) * f


def _dilate(lo, side, factor: int):
    ext = (factor - 1) // 2 * side
    return lo - ext[:, None], lo + side[:, None] + ext[:, None]


def _check_whitney_inputs(g: GridShift, dom: LatticeDomain, R_W: int, N_overlap: int):
    if any(v != 0.0 for v in g.offset):
        raise ValueError("Whitney grids must have zero continuous offset")
    if g.M > dom.res:
        raise ValueError("grid finest level must not exceed the lattice resolution")
    if R_W < 3 or R_W % 2 == 0:
        raise ValueError("R_W must be an odd integer >= 3")
    if N_overlap < 1 or N_overlap % 2 == 0:
        raise ValueError("N_overlap must be an odd positive integer")
    if 2.0 ** (-g.N) < max(dom.shape) * dom.h:
        raise ValueError("coarsest grid cubes must be at least as wide as the domain")


def _decompose_mask(dom: LatticeDomain, mask: np.ndarray, g: GridShift, R_W: int):
    n = dom.dim
    cnt = _Counter(dom, mask)
    o = np.asarray(dom.origin)
    e = o + np.asarray(dom.shape)
    off, side = _grid_units(g, dom, g.N)
    k0 = (o - off) // side
    k1 = (e - 1 - off) // side
    axes = [np.arange(a, b + 1) for a, b in zip(k0, k1)]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    lo = off + side * idx
    out_lvl, out_lo, out_side = [], [], []
    children = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)
    for lvl in range(g.N, g.M + 1):
        if len(lo) == 0:
            break
        side = (1 << (g.M - lvl)) * (1 << (dom.res - g.M))
        sides = np.full(len(lo), side, dtype=np.int64)
        live = cnt.count(lo, lo + side) > 0
        lo = lo[live]
        sides = sides[live]
        if lvl == g.N and len(lo):
            dlo, dhi = _dilate(lo, sides, R_W)
            if np.any(cnt.inside(dlo, dhi)):
                raise ValueError("a coarsest-level cube is admissible; widen the grid truncation")
        dlo, dhi = _dilate(lo, sides, R_W)
        ok = cnt.inside(dlo, dhi)
        out_lvl.append(np.full(int(ok.sum()), lvl))
        out_lo.append(lo[ok])
        out_side.append(sides[ok])
        rest = lo[~ok]
        if lvl < g.M:
            half = side // 2
            lo = (rest[:, None, :] + half * children[None, :, :]).reshape(-1, n)
        else:
            lo = np.zeros((0, n), dtype=np.int64)
    if out_lo:
        return np.concatenate(out_lvl), np.concatenate(out_lo), np.concatenate(out_side)
    return np.zeros(0, dtype=np.int64), np.zeros((0, n), dtype=np.int64), np.zeros(0, dtype=np.int64)


def whitney_decompose(omega_k: SuperlevelSet, g: GridShift, R_W: int = 9, N_overlap: int = 5) -> WhitneyFamily:
    """Maximal grid cubes whose R_W-dilates lie in the region."""
    return whitney_family([omega_k], g, R_W, N_overlap)


def whitney_family(regions, g: GridShift, R_W: int = 9, N_overlap: int = 5) -> WhitneyFamily:
    """Whitney decompositions of several superlevel sets sharing one domain."""
    regions = list(regions)
    if not regions:
        raise ValueError("need at least one region")
    dom = regions[0].domain
    _check_whitney_inputs(g, dom, R_W, N_overlap)
    ks, lvls, los, sides = [], [], [], []
    store = {}
    for r in regions:
        if r.domain != dom:
            raise ValueError("all regions must share one domain")
        if r.mask.all():
            raise ValueError("region covers the whole domain; its complement is empty")
        store[r.k] = r.mask
        lv, lo, sd = _decompose_mask(dom, r.mask, g, R_W)
        ks.append(np.full(len(lv), r.k))
        lvls.append(lv)
        los.append(lo)
        sides.append(sd)
    return WhitneyFamily(
        g,
        R_W,
        N_overlap,
        dom,
        store,
        np.concatenate(ks).astype(np.int64),
        np.concatenate(lvls).astype(np.int64),
        np.concatenate(los).astype(np.int64),
        np.concatenate(sides).astype(np.int64),
    )


def coverable_core(dom: LatticeDomain, mask: np.ndarray, g: GridShift, R_W: int) -> np.ndarray:
    """Region cells whose finest-level grid cube has its R_W-dilate inside the region."""
    n = dom.dim
    cnt = _Counter(dom, mask)
    off, side = _grid_units(g, dom, g.M)
    cells = np.stack(np.nonzero(mask), axis=-1) + np.asarray(dom.origin)
    lo = off + side * ((cells - off) // side)
    dlo, dhi = _dilate(lo, np.full(len(lo), side), R_W)
    ok = cnt.inside(dlo, dhi)
    core = np.zeros_like(mask)
    rel = cells - np.asarray(dom.origin)
    core[tuple(rel[ok].T)] = True
    return core


def _paint(dom: LatticeDomain, lo, hi, pad: int) -> np.ndarray:
    """Per-cell coverage counts of boxes on a canvas extended by pad cells per side."""
    n = dom.dim
    shape = tuple(s + 2 * pad + 1 for s in dom.shape)
    diff = np.zeros(shape, dtype=np.int64)
    base = np.asarray(dom.origin) - pad
    a = np.clip(np.asarray(lo) - base, 0, np.asarray(shape) - 1)
    b = np.clip(np.asarray(hi) - base, 0, np.asarray(shape) - 1)
    for bits in itertools.product((0, 1), repeat=n):
        corner = np.where(np.asarray(bits, dtype=bool), b, a)
        sign = -1 if sum(bits) % 2 else 1
        np.add.at(diff, tuple(corner[:, i] for i in range(n)), sign)
    for axis in range(n):
        diff = np.cumsum(diff, axis=axis)
    return diff[tuple(slice(0, s + 2 * pad) for s in dom.shape)]


def _boxes_overlap(alo, ahi, blo, bhi) -> np.ndarray:
    """Pairwise positive-volume overlap of half-open boxes, shape (A, B)."""
    return np.all(
        (alo[:, None, :] < bhi[None, :, :]) & (blo[None, :, :] < ahi[:, None, :]),
        axis=-1,
    )


@dataclass
class WhitneyCheck:
    disjoint_cover: bool
    whitney_condition: bool
    bounded_overlap: bool
    crowd_control: bool
    side_comparability: bool
    nested: bool
    measured: dict

    @property
    def all_passed(self) -> bool:
        return all(self.as_dict().values())

    def as_dict(self) -> dict:
        return {
            "disjoint_cover": self.disjoint_cover,
            "whitney_condition": self.whitney_condition,
            "bounded_overlap": self.bounded_overlap,
            "crowd_control": self.crowd_control,
            "side_comparability": self.side_comparability,
            "nested": self.nested,
        }

    def failing(self) -> set:
        return {k for k, v in self.as_dict().items() if not v}


def check_whitney_properties(fam: WhitneyFamily) -> WhitneyCheck:
    dom = fam.domain
    n = dom.dim
    R, N = fam.R_W, fam.N_overlap
    cap_o = overlap_cap(n, R, N)
    cap_c = crowd_cap(n, R, N)
    ok = dict.fromkeys(
        ["disjoint_cover", "whitney_condition", "bounded_overlap", "crowd_control", "side_comparability"], True
    )
    meas = {"overlap": 0, "crowd": 0, "max_side_ratio": 1.0, "uncovered_cells": 0, "overlap_cap": cap_o, "crowd_cap": cap_c}
    for k, mask in fam.regions.items():
        sel = fam.k == k
        lo = fam.lo[sel]
        sd = fam.side[sel]
        hi = lo + sd[:, None]
        # 1. disjoint cover of the coverable core, inside the region
        pad = max(int(sd.max(initial=1)) * (max(3 * R, N) // 2 + 1), 1)
        paint = _paint(dom, lo, hi, pad)
        inner = paint[tuple(slice(pad, pad + s) for s in dom.shape)]
        outer_total = int(paint.sum()) - int(inner.sum())
        core = coverable_core(dom, mask, fam.grid, R)
        cover_ok = (
            int(paint.max(initial=0)) <= 1
            and outer_total == 0
            and not np.any((inner > 0) & ~mask)
            and np.array_equal(inner > 0, core)
        )
        ok["disjoint_cover"] &= bool(cover_ok)
        meas["uncovered_cells"] += int((mask & ~core).sum())
        cnt = _Counter(dom, mask)
        # 2. Whitney condition
        dlo, dhi = _dilate(lo, sd, R)
        tlo, thi = _dilate(lo, sd, 3 * R)
        inside = cnt.inside(dlo, dhi)
        touches = cnt.count(tlo, thi) < np.prod(thi - tlo, axis=1)
        ok["whitney_condition"] &= bool(np.all(inside) and np.all(touches))
        # 3. bounded overlap of N-dilates, supported in the region
        nlo, nhi = _dilate(lo, sd, N)
        cover = _paint(dom, nlo, nhi, pad)
        in_cover = cover[tuple(slice(pad, pad + s) for s in dom.shape)]
        ov = int(cover.max(initial=0))
        meas["overlap"] = max(meas["overlap"], ov)
        supp_ok = int(cover.sum()) == int(in_cover.sum()) and not np.any((in_cover > 0) & ~mask)
        ok["bounded_overlap"] &= bool(ov <= cap_o and supp_ok)
        if len(lo):
            # 4. crowd control
            crowd = _boxes_overlap(nlo, nhi, lo, hi).sum(axis=1)
            meas["crowd"] = max(meas["crowd"], int(crowd.max()))
            ok["crowd_control"] &= bool(crowd.max() <= cap_c)
            # 5. side-length comparability for neighbours
            t3lo, t3hi = _dilate(lo, sd, 3)
            near = _boxes_overlap(t3lo, t3hi, t3lo, t3hi)
            ratio = sd[:, None] / sd[None, :]
            worst = float(np.max(np.where(near, ratio, 1.0)))
            meas["max_side_ratio"] = max(meas["max_side_ratio"], worst)
            ok["side_comparability"] &= bool(worst <= 2.0)
    # 6. nested property across levels
    lo, sd, kk = fam.lo, fam.side, fam.k
    hi = lo + sd[:, None]
    cont = np.all((lo[:, None, :] >= lo[None, :, :]) & (hi[:, None, :] <= hi[None, :, :]), axis=-1)
    strict = cont & (sd[:, None] < sd[None, :])
    nested = not np.any(strict & (kk[:, None] <= kk[None, :]))
    fam.measured.update(meas)
    return WhitneyCheck(ok["disjoint_cover"], ok["whitney_condition"], ok["bounded_overlap"], ok["crowd_control"], ok["side_comparability"], nested, meas)


# --- mutation harness ----------------------------------------------------------------

MUTATIONS = {
    "duplicate": {"disjoint_cover"},
    "drop": {"disjoint_cover"},
    "coarsen": {"whitney_condition"},
    "nested": {"nested"},
    "deep_split": {"side_comparability"},
    "crowd": {"crowd_control"},
    "stack": {"bounded_overlap"},
}


def _with_cubes(fam: WhitneyFamily, k, level, lo, side) -> WhitneyFamily:
    out = WhitneyFamily(
        fam.grid,
        fam.R_W,
        fam.N_overlap,
        fam.domain,
        fam.regions,
        np.asarray(k, dtype=np.int64),
        np.asarray(level, dtype=np.int64),
        np.asarray(lo, dtype=np.int64).reshape(-1, fam.domain.dim),
        np.asarray(side, dtype=np.int64),
    )
    return out


def _split_towards(lo, side: int, level: int, depth: int, target) -> list:
    """Split a cube ``depth`` times, each time refining only the child touching ``target``."""
    n = len(lo)
    out = []
    cur = (np.asarray(lo), int(side), int(level))
    for _ in range(depth):
        clo, cs, cl = cur
        h = cs // 2
        kids = [(clo + h * np.asarray(b), h, cl + 1) for b in itertools.product((0, 1), repeat=n)]
        pick = next(i for i, c in enumerate(kids) if np.all(c[0] <= target) and np.all(target <= c[0] + c[1]))
        out.extend(c for i, c in enumerate(kids) if i != pick)
        cur = kids[pick]
    out.append(cur)
    return out


def mutate_family(fam: WhitneyFamily, kind: str, rng: np.random.Generator) -> WhitneyFamily | None:
    """Inject one violation of the given kind; returns None when the family cannot host it."""
    if kind not in MUTATIONS or len(fam) == 0:
        return None
    k, lvl, lo, sd = fam.k.copy(), fam.level.copy(), fam.lo.copy(), fam.side.copy()
    i = int(rng.integers(len(fam)))
    if kind == "duplicate":
        return _with_cubes(fam, np.append(k, k[i]), np.append(lvl, lvl[i]), np.vstack([lo, lo[i]]), np.append(sd, sd[i]))
    if kind == "drop":
        keep = np.arange(len(fam)) != i
        return _with_cubes(fam, k[keep], lvl[keep], lo[keep], sd[keep])
    if kind == "coarsen":
        ok = np.nonzero(lvl > fam.grid.N)[0]
        if len(ok) == 0:
            return None
        i = int(rng.choice(ok))
        g = fam.grid
        off, pside = _grid_units(g, fam.domain, int(lvl[i]) - 1)
        plo = off + pside * ((lo[i] - off) // pside)
        phi = plo + pside
        same = k == k[i]
        inside = same & np.all((lo >= plo) & (lo + sd[:, None] <= phi), axis=1)
        keep = ~inside
        return _with_cubes(
            fam, np.append(k[keep], k[i]), np.append(lvl[keep], lvl[i] - 1), np.vstack([lo[keep], plo]), np.append(sd[keep], pside)
        )
    if kind == "nested":
        hi = lo + sd[:, None]
        cont = np.all((lo[:, None, :] >= lo[None, :, :]) & (hi[:, None, :] <= hi[None, :, :]), axis=-1)
        strict = cont & (sd[:, None] < sd[None, :])
        pairs = np.argwhere(strict)
        if len(pairs) == 0:
            return None
        a, b = pairs[int(rng.integers(len(pairs)))]
        # a small cube relabelled to sit at or below the level of a cube containing it
        k2 = k.copy()
        k2[a] = k[b]
        return _with_cubes(fam, k2, lvl, lo, sd)
    if kind == "deep_split":
        hi = lo + sd[:, None]
        same = k[:, None] == k[None, :]
        t3lo, t3hi = _dilate(lo, sd, 3)
        near = _boxes_overlap(t3lo, t3hi, lo, hi) & same & ~np.eye(len(fam), dtype=bool)
        ok = np.nonzero((sd >= 8) & near.any(axis=1))[0]
        if len(ok) == 0:
            return None
        i = int(rng.choice(ok))
        # the tiny cube sits at the centre, next to siblings four times its size
        new = _split_towards(lo[i], sd[i], lvl[i], 3, lo[i] + sd[i] // 2)
        keep = np.arange(len(fam)) != i
        return _with_cubes(
            fam,
            np.concatenate([k[keep], np.full(len(new), k[i])]),
            np.concatenate([lvl[keep], [c[2] for c in new]]),
            np.vstack([lo[keep]] + [c[0] for c in new]),
            np.concatenate([sd[keep], [c[1] for c in new]]),
        )
    if kind in ("crowd", "stack"):
        n = fam.domain.dim
        cap = crowd_cap if kind == "crowd" else overlap_cap
        reps = cap(n, fam.R_W, fam.N_overlap) + 1
        return _with_cubes(
            fam,
            np.append(k, np.full(reps, k[i])),
            np.append(lvl, np.full(reps, lvl[i])),
            np.vstack([lo] + [lo[i]] * reps),
            np.append(sd, np.full(reps, sd[i])),
        )
    return None


# --- dyadic fields, E-sets and the maximum principle ----------------------------------


def dyadic_field(fsigma: CellMeasure, dom: LatticeDomain, g: GridShift, cells=None) -> np.ndarray:
    """Grid dyadic maximal function of fsigma on the given domain cells (all by default)."""
    n = dom.dim
    if cells is None:
        lo = dom.cell_lo().reshape(-1, n)
    else:
        lo = (np.asarray(cells) + np.asarray(dom.origin)) * dom.h
    x = lo + dom.h / 2
    best = np.zeros(len(lo))
    for lvl in range(g.N, g.M + 1):
        side = 2.0 ** (-lvl)
        base = np.asarray(g.offset) + np.asarray(g.level_offset_units(lvl)) * 2.0 ** (-g.M)
        clo = base + side * np.floor((x - base) / side)
        best = np.maximum(best, fsigma.integrate_many(clo, clo + side) / side**n)
    return best if cells is not None else best.reshape(dom.shape)


@dataclass
class WhitneySetup:
    f: CellFunction
    sigma: CellMeasure
    fsigma: CellMeasure
    domain: LatticeDomain
    grid: GridShift
    window: ScaleWindow
    field: MaximalField
    dyadic: np.ndarray
    ks: list
    R_W: int
    N_overlap: int
    m: int
    m0: int
    family: WhitneyFamily

    def region(self, k: int) -> np.ndarray:
        return self.field.values > 2.0**k


def whitney_grid_for(dom: LatticeDomain, rng: np.random.Generator | None = None, translation=None) -> GridShift:
    """A grid with finest level at the lattice resolution whose coarsest cubes span the domain."""
    width = max(dom.shape) * dom.h
    N = math.floor(-math.log2(width))
    M = dom.res
    if translation is not None:
        return GridShift(dom.dim, M, N, "translation", tuple(translation))
    if rng is None:
        return GridShift.standard(dom.dim, M, N)
    return sample_grid(GridFamily(dom.dim, M, N, "Omega"), rng)


def setup_whitney(
    f: CellFunction,
    sigma: CellMeasure,
    ks,
    refine: int = 1,
    R_W: int = 9,
    N_overlap: int = 5,
    m: int | None = None,
    m0: int = 2,
    rng: np.random.Generator | None = None,
    translation=None,
    field: MaximalField | None = None,
) -> WhitneySetup:
    """Fields, grid and Whitney family for the superlevel sets 2^k, k in ks, of M(f sigma).

    The field domain is sized for the smallest k, and the window reaches far
    enough above the coarsest grid scale for the maximum-principle argument.
    A field from an earlier call with the same inputs may be passed in; it
    does not depend on the grid translation.
    """
    ks = sorted(int(k) for k in ks)
    fs = f.times(sigma)
    n = fs.dim
    m = default_m(n, R_W) if m is None else m
    res = fs.spec.res_exp + refine
    dom = field_domain(fs, res, ks[0]) if field is None else field.domain
    g = whitney_grid_for(dom, rng, translation)
    if field is None:
        reach = math.ceil(math.log2(3 * R_W)) + 2
        field = maximal_field(fs, dom, ScaleWindow(-res, -g.N + reach), ks[0])
    # the grid maximal function never exceeds the field, so it is only needed where E-sets can live
    dy = np.zeros(dom.shape)
    live = field.values > 2.0 ** (ks[0] + m)
    if live.any():
        dy[live] = dyadic_field(fs, dom, g, np.argwhere(live))
    regions = [superlevel_from_field(field, k) for k in ks]
    fam = whitney_family(regions, g, R_W, N_overlap).with_averages(f, sigma)
    return WhitneySetup(f, sigma, fs, dom, g, field.window, field, dy, ks, R_W, N_overlap, m, m0, fam)


def with_m(setup: WhitneySetup, m: int) -> WhitneySetup:
    """The same setup with another gap exponent m (the grid maximal field is extended as needed)."""
    dy = np.zeros(setup.domain.shape)
    live = setup.field.values > 2.0 ** (setup.ks[0] + m)
    if live.any():
        dy[live] = dyadic_field(setup.fsigma, setup.domain, setup.grid, np.argwhere(live))
    return WhitneySetup(**{**setup.__dict__, "m": m, "dyadic": dy})


def esets(setup: WhitneySetup) -> list:
    """Boolean masks (over the domain) of E_j^k for every cube of the family."""
    fam = setup.family
    dom = setup.domain
    out = []
    for i in range(len(fam)):
        k = int(fam.k[i])
        mask = _cube_mask(dom, fam.lo[i], fam.side[i])
        mask &= setup.dyadic > 2.0 ** (k + setup.m)
        mask &= ~(setup.field.values > 2.0 ** (k + setup.m + setup.m0))
        out.append(mask)
    return out


def _cube_mask(dom: LatticeDomain, lo, side) -> np.ndarray:
    mask = np.zeros(dom.shape, dtype=bool)
    rel = np.asarray(lo) - np.asarray(dom.origin)
    sl = tuple(slice(max(int(a), 0), max(int(a + side), 0)) for a in rel)
    mask[sl] = True
    return mask


@dataclass
class MaxPrincipleReport:
    checked_cells: int
    sampled_points: int
    violations: int
    min_margin: float
    m: int
    m_meets_precondition: bool

    @property
    def passed(self) -> bool:
        return self.violations == 0


def maximum_principle_check(setup: WhitneySetup, samples: int = 4, rng: np.random.Generator | None = None, m: int | None = None) -> MaxPrincipleReport:
    """Check that the grid maximal function of f sigma restricted to Q_j^k exceeds 2^(k+m-1) on E_j^k.

    Every E-set cell is checked; the grid maximal function is constant on the
    finest grid cells, so this covers every point.  ``samples`` extra random
    points per E-set are re-evaluated with an independent tower walk.
    """
    from .maximal import dyadic_maximal

    if m is not None and m != setup.m:
        setup = with_m(setup, m)
    rng = rng or np.random.default_rng(0)
    fam = setup.family
    dom = setup.domain
    n = dom.dim
    viol = 0
    checked = 0
    sampled = 0
    margin = math.inf
    for i, e in enumerate(esets(setup)):
        if not e.any():
            continue
        k = int(fam.k[i])
        thr = 2.0 ** (k + setup.m - 1)
        cube = _cube_mask(dom, fam.lo[i], fam.side[i])
        local = setup.fsigma.on_lattice(dom.spec()).masked(cube)
        cells = np.argwhere(e)
        vals = dyadic_field(local, dom, setup.grid, cells)
        viol += int(np.sum(vals <= thr))
        checked += len(cells)
        margin = min(margin, float(np.min(vals / thr)))
        for c in cells[rng.integers(len(cells), size=min(samples, len(cells)))]:
            x = (c + np.asarray(dom.origin) + rng.random(n)) * dom.h
            v = dyadic_maximal(local, x, setup.grid).value
            viol += int(v <= thr)
            sampled += 1
    need = math.log2(4 * (3 * setup.R_W) ** n) + 1
    return MaxPrincipleReport(checked, sampled, viol, margin, setup.m, setup.m >= need)


def eset_disjointness(setup: WhitneySetup, k0: int | None = None) -> dict:
    """Disjointness of E-sets at each k and across the levels k = k0 mod (m + m0)."""
    fam = setup.family
    es = esets(setup)
    per_k = True
    for k in np.unique(fam.k):
        idx = np.nonzero(fam.k == k)[0]
        tot = np.zeros(setup.domain.shape, dtype=np.int64)
        for i in idx:
            tot += es[i]
        per_k &= bool(tot.max(initial=0) <= 1)
    step = setup.m + setup.m0
    k0 = int(fam.k.min()) if k0 is None and len(fam) else (k0 or 0)
    tot = np.zeros(setup.domain.shape, dtype=np.int64)
    for i in range(len(fam)):
        if (int(fam.k[i]) - k0) % step == 0:
            tot += es[i]
    inside = all(not np.any(es[i] & ~_cube_mask(setup.domain, fam.lo[i], fam.side[i])) for i in range(len(fam)))
    return {"per_level": per_k, "distinguished": bool(tot.max(initial=0) <= 1), "inside_cubes": inside}


@dataclass
class PiPartition:
    pi1: list
    pi2: list
    pi3: list
    e_mass: np.ndarray
    triple_mass: np.ndarray
    out_mass: np.ndarray
    in_mass: np.ndarray
    in_condition_failed: list

    @property
    def sizes(self) -> tuple:
        return (len(self.pi1), len(self.pi2), len(self.pi3))


def classify_pi(setup: WhitneySetup, omega: CellMeasure, beta: float = 1 / 64) -> PiPartition:
    """Split the (k, j) indices into the three cases by E-set, triple and H-set omega masses."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    fam = setup.family
    dom = setup.domain
    n = dom.dim
    wcell = omega.integrate_many(dom.cell_lo(), dom.cell_lo() + dom.h)
    fs_dom = setup.fsigma.on_lattice(dom.spec())
    h = dom.h
    pi = ([], [], [])
    e_mass, t_mass, o_mass, i_mass, failed = [], [], [], [], []
    for i, e in enumerate(esets(setup)):
        k = int(fam.k[i])
        lo = fam.lo[i] * h
        side = fam.side[i] * h
        tlo = lo - side
        tm = float(omega.integrate(Rect(tuple(tlo), tuple(tlo + 3 * side))))
        em = float(wcell[e].sum())
        e_mass.append(em)
        t_mass.append(tm)
        cube = _cube_mask(dom, fam.lo[i], fam.side[i])
        high = setup.field.values > 2.0 ** (k + setup.m + setup.m0)
        thr = 2.0 ** (k + setup.m - 2)
        cells = np.argwhere(e)
        if len(cells):
            h_in = dyadic_field(fs_dom.masked(cube & high), dom, setup.grid, cells) > thr
            h_out = dyadic_field(fs_dom.masked(cube & ~high), dom, setup.grid, cells) > thr
            w = wcell[tuple(cells.T)]
            om, im = float(w[h_out].sum()), float(w[h_in].sum())
        else:
            om = im = 0.0
        o_mass.append(om)
        i_mass.append(im)
        key = (k, i)
        if em == 0 or em < beta * tm:
            pi[0].append(key)
        elif om >= em / 2:
            pi[1].append(key)
        else:
            pi[2].append(key)
            if im < em / 2:
                failed.append(key)
    return PiPartition(pi[0], pi[1], pi[2], np.array(e_mass), np.array(t_mass), np.array(o_mass), np.array(i_mass), failed)
