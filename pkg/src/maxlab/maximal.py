"""Maximal operators over cubes with dyadic side lengths.

For a fixed side s the mass of a cube is piecewise multilinear in its lower
corner, with breakpoints where a face crosses a cell boundary.  The maximum
over the corners of cubes that contain a query box is therefore attained on
the product of per-axis candidate sets, which are enumerated exactly for
n <= 2 and searched by coordinate ascent for n = 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridFamily, GridShift, sample_translations
from .measure import CellFunction, CellMeasure, Rect

_CHUNK = 1 << 20
# candidates within this relative gap of the best count as tied and resolve by order,
# so that rounding noise never decides the witness; reported values stay exact maxima
TIE = 1e-12


@dataclass(frozen=True)
class ScaleWindow:
    j_min: int
    j_max: int

    def __post_init__(self):
        if self.j_min > self.j_max:
            raise ValueError("empty scale window")

    def scales(self) -> np.ndarray:
        return 2.0 ** np.arange(self.j_min, self.j_max + 1)

    def levels(self) -> range:
        """Grid levels whose cube sides lie in the window."""
        return range(-self.j_max, -self.j_min + 1)

    def widened(self, k: int) -> "ScaleWindow":
        return ScaleWindow(self.j_min - k, self.j_max + k)

    @classmethod
    def for_measures(cls, *measures: CellMeasure) -> "ScaleWindow":
        """Default window: from a quarter cell up to the scale of the joint bounding box."""
        res = max(m.spec.res_exp for m in measures)
        lo = np.min([m.spec.lo for m in measures], axis=0)
        hi = np.max([m.spec.hi for m in measures], axis=0)
        j_max = math.ceil(math.log2(float(np.max(hi - lo))))
        return cls(-res - 2, max(j_max, -res - 2))


@dataclass(frozen=True)
class MaximalValue:
    value: float
    witness: Rect | None
    scale_saturated: tuple = (False, False)
    heuristic: bool = False


def _edges(mu: CellMeasure) -> list:
    box = mu.support_box()
    if box is None:
        return [np.zeros(0) for _ in range(mu.dim)]
    s = mu.spec
    out = []
    for a in range(s.dim):
        e = s.edges(a)
        out.append(e[(e >= box.lo[a]) & (e <= box.hi[a])])
    return out


def _axis_candidates(edges, lo_q, hi_q, s, extra):
    """Candidate lower-face positions along one axis, shape (Q, K), inside [lo_q, hi_q]."""
    parts = [lo_q[:, None], hi_q[:, None]]
    if len(edges):
        for shift in (0.0, s):
            i0 = np.searchsorted(edges, lo_q + shift, side="left")
            i1 = np.searchsorted(edges, hi_q + shift, side="right")
            k = int(np.max(i1 - i0, initial=0))
            if k:
                idx = np.minimum(i0[:, None] + np.arange(k)[None, :], len(edges) - 1)
                parts.append(edges[idx] - shift)
    for e in extra:
        parts.append(e[:, None])
        parts.append(e[:, None] - s)
    cand = np.concatenate(parts, axis=1)
    return np.clip(cand, lo_q[:, None], hi_q[:, None])


def _box_max(
    mu: CellMeasure,
    qlo,
    qhi,
    scales,
    clip_lo=None,
    clip_hi=None,
    restarts: int = 8,
    seed: int = 0,
):
    """Largest average over cubes of side in ``scales`` that contain the boxes [qlo, qhi].

    Returns (values, witness lower corners, witness sides, scale indices).
    """
    qlo = np.atleast_2d(np.asarray(qlo, dtype=float))
    qhi = np.atleast_2d(np.asarray(qhi, dtype=float))
    Q, n = qlo.shape
    if clip_lo is not None:
        clip_lo = np.broadcast_to(np.asarray(clip_lo, dtype=float), (Q, n))
        clip_hi = np.broadcast_to(np.asarray(clip_hi, dtype=float), (Q, n))
        total = mu.integrate_many(clip_lo, clip_hi)
    else:
        total = np.full(Q, mu.total_mass)
    best = np.full(Q, -1.0)
    wlo = qlo.copy()
    wside = np.zeros(Q)
    widx = np.zeros(Q, dtype=np.int64)
    edges = _edges(mu)
    extent = np.max(qhi - qlo, axis=1)
    for si, s in enumerate(scales):
        feasible = extent <= s
        ceiling = total / s**n
        active = np.nonzero(feasible & ((ceiling > best) | (best < 0)))[0]
        if len(active) == 0:
            continue
        lo_q = qhi[active] - s
        hi_q = qlo[active]
        cands = []
        for a in range(n):
            extra = []
            if clip_lo is not None:
                extra = [clip_lo[active, a], clip_hi[active, a]]
            cands.append(_axis_candidates(edges[a], lo_q[:, a], hi_q[:, a], s, extra))
        cl = None if clip_lo is None else clip_lo[active]
        ch = None if clip_hi is None else clip_hi[active]
        if n <= 2:
            vals, pos = _enumerate(mu, cands, s, cl, ch)
        else:
            vals, pos = _ascent(mu, cands, s, cl, ch, restarts, seed)
        avg = vals / s**n
        better = avg > best[active] * (1 + TIE)
        upd = active[better]
        best[active] = np.maximum(best[active], avg)
        wlo[upd] = pos[better]
        wside[upd] = s
        widx[upd] = si
    return np.maximum(best, 0.0), wlo, wside, widx


def _enumerate(mu, cands, s, clip_lo, clip_hi):
    Q = cands[0].shape[0]
    n = len(cands)
    sizes = [c.shape[1] for c in cands]
    per = int(np.prod(sizes))
    step = max(1, _CHUNK // per)
    vals = np.empty(Q)
    pos = np.empty((Q, n))
    for start in range(0, Q, step):
        sl = slice(start, min(Q, start + step))
        m = sl.stop - sl.start
        grids = np.meshgrid(*[np.arange(k) for k in sizes], indexing="ij")
        lo = np.stack([cands[a][sl][:, grids[a].ravel()] for a in range(n)], axis=-1)
        if clip_lo is None:
            mass = mu.integrate_many(lo, lo + s)
        else:
            mass = mu.integrate_many(lo, lo + s, clip_lo[sl, None, :], clip_hi[sl, None, :])
        top = mass.max(axis=1, keepdims=True)
        j = np.argmax(mass >= top * (1 - TIE), axis=1)
        vals[sl] = top[:, 0]
        pos[sl] = lo[np.arange(m), j]
    return vals, pos


def _ascent(mu, cands, s, clip_lo, clip_hi, restarts, seed):
    Q = cands[0].shape[0]
    n = len(cands)
    rng = np.random.default_rng(seed)
    choice = np.stack([rng.integers(0, c.shape[1], size=(Q, restarts)) for c in cands], axis=-1)
    rows = np.arange(Q)[:, None]

    def corners(ch):
        return np.stack([cands[a][rows, ch[..., a]] for a in range(n)], axis=-1)

    def mass_of(lo):
        if clip_lo is None:
            return mu.integrate_many(lo, lo + s)
        return mu.integrate_many(lo, lo + s, clip_lo[:, None, :], clip_hi[:, None, :])

    cur = mass_of(corners(choice))
    for _ in range(64):
        changed = False
        for a in range(n):
            K = cands[a].shape[1]
            trial = np.repeat(choice[:, :, None, :], K, axis=2)
            trial[..., a] = np.arange(K)[None, None, :]
            lo = np.stack([cands[b][np.arange(Q)[:, None, None], trial[..., b]] for b in range(n)], axis=-1)
            m = mass_of(lo.reshape(Q, -1, n)).reshape(Q, restarts, K)
            j = np.argmax(m, axis=2)
            new = np.take_along_axis(m, j[..., None], axis=2)[..., 0]
            imp = new > cur * (1 + TIE)
            if np.any(imp):
                changed = True
                choice[..., a] = np.where(imp, j, choice[..., a])
                cur = np.where(imp, new, cur)
        if not changed:
            break
    r = np.argmax(cur, axis=1)
    pos = corners(choice)[np.arange(Q), r]
    return cur[np.arange(Q), r], pos


def maximal_many(mu: CellMeasure, points, w: ScaleWindow, clip: Rect | None = None) -> np.ndarray:
    """Maximal function values at an (m, n) array of points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    kw = {}
    if clip is not None:
        kw = {"clip_lo": np.asarray(clip.lo), "clip_hi": np.asarray(clip.hi)}
    vals, _, _, _ = _box_max(mu, pts, pts, w.scales(), **kw)
    return vals


def maximal(mu: CellMeasure, x, w: ScaleWindow) -> MaximalValue:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    vals, wlo, wside, widx = _box_max(mu, x[None, :], x[None, :], w.scales())
    k = len(w.scales())
    lo = wlo[0]
    return MaximalValue(
        float(vals[0]),
        Rect(tuple(lo), tuple(lo + wside[0])),
        (bool(widx[0] == 0), bool(widx[0] == k - 1)),
        heuristic=mu.dim >= 3,
    )


def cell_max_many(mu: CellMeasure, box_lo, box_hi, w: ScaleWindow, clip_lo=None, clip_hi=None):
    """For each box, the largest average over window cubes containing the whole box.

    This is a lower bound for the maximal function at every point of the box.
    Returns (values, witness lower corners, witness sides).
    """
    vals, wlo, wside, _ = _box_max(mu, box_lo, box_hi, w.scales(), clip_lo, clip_hi)
    return vals, wlo, wside


# --- dyadic maximal operators ----------------------------------------------


def _tower_masses(mu: CellMeasure, x, t_units, offsets, M: int, levels):
    """Averages of mu over the cubes containing x at each level, for many grids.

    ``t_units`` and ``offsets`` have shape (G, n); returns (G, L) averages and
    the (G, L, n) lower corners.
    """
    x = np.asarray(x, dtype=float)
    t_units = np.atleast_2d(np.asarray(t_units, dtype=np.int64))
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    G, n = t_units.shape
    avgs = np.empty((G, len(levels)))
    los = np.empty((G, len(levels), n))
    for i, lvl in enumerate(levels):
        su = 1 << (M - lvl)
        side = 2.0 ** (-lvl)
        base = offsets + (t_units % su) * 2.0 ** (-M)
        lo = base + side * np.floor((x - base) / side)
        avgs[:, i] = mu.integrate_many(lo, lo + side) / side**n
        los[:, i] = lo
    return avgs, los


def _grid_levels(g: GridShift, w: ScaleWindow | None) -> list:
    if w is None:
        return list(range(g.N, g.M + 1))
    lv = list(w.levels())
    if lv[0] < g.N or lv[-1] > g.M:
        raise ValueError("scale window exceeds the grid truncation")
    return lv


def dyadic_maximal(mu: CellMeasure, x, g: GridShift, w: ScaleWindow | None = None) -> MaximalValue:
    levels = _grid_levels(g, w)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    avgs, los = _tower_masses(mu, x, [g.translation_units], [g.offset], g.M, levels)
    i = int(np.argmax(avgs[0]))
    side = 2.0 ** (-levels[i])
    lo = los[0, i]
    return MaximalValue(
        float(avgs[0, i]),
        Rect(tuple(lo), tuple(lo + side)),
        (i == len(levels) - 1, i == 0),
    )


def weighted_dyadic_maximal(h: CellFunction, omega: CellMeasure, x, g: GridShift, w: ScaleWindow | None = None) -> float:
    """Largest omega-average of h over the tower at x; 0 when every tower cube is omega-null."""
    levels = _grid_levels(g, w)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    hw = h.times(omega)
    best = 0.0
    for lvl in levels:
        c = g.containing_cube(x, lvl).rect
        wm = omega.integrate(c)
        if wm > 0:
            best = max(best, hw.integrate(c) / wm)
    return best


@dataclass
class DominationReport:
    points: np.ndarray
    maximal: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    ci99: np.ndarray
    ratio: np.ndarray
    passed: np.ndarray
    constant: float
    samples: int

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))


def domination_family(dim: int, w: ScaleWindow) -> GridFamily:
    """A Phi family whose truncation comfortably contains the window."""
    return GridFamily(dim, -w.j_min, -w.j_max - 3, "Phi")


def domination_check(
    mu: CellMeasure,
    points,
    fam: GridFamily,
    samples: int,
    rng: np.random.Generator,
    w: ScaleWindow | None = None,
) -> DominationReport:
    """Monte Carlo comparison of the maximal function with the mean dyadic maximal function."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = mu.dim
    if w is None:
        w = ScaleWindow(-fam.M, -fam.N)
    lv = list(w.levels())
    if lv[0] < fam.N or lv[-1] > fam.M:
        raise ValueError("grid family must contain the evaluation window")
    fam = GridFamily(n, fam.M, fam.N, fam.kind)
    levels = list(range(fam.N, fam.M + 1))
    big = maximal_many(mu, pts, w)
    mean = np.empty(len(pts))
    se = np.empty(len(pts))
    for i, x in enumerate(pts):
        t, off = sample_translations(fam, rng, samples)
        avgs, _ = _tower_masses(mu, x, t, off, fam.M, levels)
        d = avgs.max(axis=1)
        mean[i] = d.mean()
        se[i] = d.std(ddof=1) / math.sqrt(samples) if samples > 1 else 0.0
    c = 2.0 ** (n + 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mean > 0, big / mean, np.where(big > 0, np.inf, 0.0))
    passed = big <= c * (mean + 3 * se)
    return DominationReport(pts, big, mean, se, 2.576 * se, ratio, passed, c, samples)
