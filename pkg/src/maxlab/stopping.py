"""Principal-cube stopping times and the good/bad split of Whitney cubes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import is_r_bad_many
from .whitney import WhitneyFamily, setup_whitney


@dataclass
class PrincipalFamily:
    """Stopping-time selection over the distinct cubes of a Whitney family.

    ``cubes`` indexes the deduplicated family; ``parent`` is the smallest
    strictly larger cube (-1 for roots); ``pred`` is the smallest principal
    cube containing each cube; ``generation`` is -1 for non-principal cubes.
    """

    eta: float
    L: int | None
    cubes: np.ndarray
    lo: np.ndarray
    side: np.ndarray
    k: np.ndarray
    averages: np.ndarray
    sigma_mass: np.ndarray
    parent: np.ndarray
    pred: np.ndarray
    generation: np.ndarray
    witnesses: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.cubes)

    @property
    def principal(self) -> np.ndarray:
        return np.nonzero(self.generation >= 0)[0]

    def generations(self) -> list:
        if len(self) == 0:
            return []
        top = int(self.generation.max(initial=-1))
        return [np.nonzero(self.generation == g)[0].tolist() for g in range(top + 1)]


def _dedupe(fam: WhitneyFamily, L: int | None) -> np.ndarray:
    """One index per geometric cube, keeping the largest k; cubes below L dropped."""
    keep = {}
    for i in range(len(fam)):
        if L is not None and fam.k[i] < L:
            continue
        key = (int(fam.side[i]),) + tuple(int(v) for v in fam.lo[i])
        if key not in keep or fam.k[i] > fam.k[keep[key]]:
            keep[key] = i
    return np.array(sorted(keep.values()), dtype=np.int64)


def _containment(lo, side):
    """cont[a, b]: cube a lies inside cube b (closed containment of half-open boxes)."""
    hi = lo + side[:, None]
    return np.all((lo[:, None, :] >= lo[None, :, :]) & (hi[:, None, :] <= hi[None, :, :]), axis=-1)


def build_principal(fam: WhitneyFamily, eta: float = 4.0, L: int | None = None) -> PrincipalFamily:
    if eta <= 1:
        raise ValueError("eta must be > 1")
    if fam.averages is None:
        raise ValueError("the Whitney family needs averages (use with_averages)")
    idx = _dedupe(fam, L)
    lo = fam.lo[idx]
    side = fam.side[idx]
    C = len(idx)
    empty = np.zeros(0, dtype=np.int64)
    if C == 0:
        return PrincipalFamily(eta, L, idx, lo, side, empty, np.zeros(0), np.zeros(0), empty, empty, empty)
    cont = _containment(lo, side)
    strict = cont & (side[:, None] < side[None, :])
    # the smallest strict container is the forest parent
    big = np.where(strict, side[None, :], np.iinfo(np.int64).max)
    parent = np.where(strict.any(axis=1), np.argmin(big, axis=1), -1)
    avg = fam.averages[idx]
    sm = fam.sigma_mass[idx] if fam.sigma_mass is not None else np.ones(C)
    pred = np.full(C, -1, dtype=np.int64)
    gen = np.full(C, -1, dtype=np.int64)
    witnesses = []
    for i in np.lexsort((np.arange(C), -side)):
        p = parent[i]
        if p < 0:
            pred[i] = i
            gen[i] = 0
            continue
        r = pred[p]
        if avg[i] > eta * avg[r]:
            pred[i] = i
            gen[i] = gen[r] + 1
            witnesses.append((int(i), int(r), float(avg[i]), float(avg[r])))
        else:
            pred[i] = r
    return PrincipalFamily(eta, L, idx, lo, side, fam.k[idx], avg, sm, parent, pred, gen, witnesses)


@dataclass
class PrincipalCheck:
    clause_i: bool
    clause_ii: bool
    predecessor_minimal: bool
    witnesses_replay: bool
    carleson_ratio: float

    @property
    def all_passed(self) -> bool:
        return self.clause_i and self.clause_ii and self.predecessor_minimal and self.witnesses_replay


def check_principal(pf: PrincipalFamily, f_norm_sq: float | None = None) -> PrincipalCheck:
    """Replay both stopping clauses exhaustively and report the Carleson ratio."""
    C = len(pf)
    if C == 0:
        return PrincipalCheck(True, True, True, True, 0.0)
    a = pf.averages
    clause_i = bool(np.all(a <= pf.eta * a[pf.pred]))
    prin = pf.generation >= 0
    cont = _containment(pf.lo, pf.side)
    strict = cont & (pf.side[:, None] < pf.side[None, :])
    pairs = strict & prin[:, None] & prin[None, :]
    clause_ii = bool(np.all(~pairs | (a[:, None] > pf.eta * a[None, :])))
    # predecessor: the smallest principal cube containing the cube
    holders = cont & prin[None, :]
    size = np.where(holders, pf.side[None, :], np.iinfo(np.int64).max)
    smallest = np.argmin(size, axis=1)
    minimal = bool(np.all(holders.any(axis=1)) and np.array_equal(pf.side[smallest], pf.side[pf.pred]) and np.all(cont[np.arange(C), pf.pred]))
    replay = all(a[i] > pf.eta * a[r] and pf.pred[i] == i and pf.pred[pf.parent[i]] == r for i, r, _, _ in pf.witnesses)
    total = float(np.sum(a[prin] ** 2 * pf.sigma_mass[prin]))
    if f_norm_sq is None or f_norm_sq <= 0:
        ratio = math.nan
    else:
        ratio = total / f_norm_sq
    return PrincipalCheck(clause_i, clause_ii, minimal, replay, ratio)


def split_good_bad(fam: WhitneyFamily, r: int) -> tuple:
    """Indices of r-good and r-bad cubes; cubes without a level-r parent in the truncation are good."""
    g = fam.grid
    idx = fam.index()
    bad_mask = np.zeros(len(fam), dtype=bool)
    for lvl in np.unique(fam.level):
        if int(lvl) - r < g.N:
            continue
        sel = np.nonzero(fam.level == lvl)[0]
        bad_mask[sel] = is_r_bad_many(g, int(lvl), idx[sel], r)
    return np.nonzero(~bad_mask)[0].tolist(), np.nonzero(bad_mask)[0].tolist()


def eset_masses(setup, cell_weights: np.ndarray) -> np.ndarray:
    """Weight of every E-set, summing per-cell weights over the domain lattice."""
    fam = setup.family
    dom = setup.domain
    out = np.zeros(len(fam))
    rel = fam.lo - np.asarray(dom.origin)
    for k in np.unique(fam.k):
        live = (setup.dyadic > 2.0 ** (k + setup.m)) & ~(setup.field.values > 2.0 ** (k + setup.m + setup.m0))
        w = np.where(live, cell_weights, 0.0)
        for i in np.nonzero(fam.k == k)[0]:
            sl = tuple(slice(max(int(a), 0), max(int(a + fam.side[i]), 0)) for a in rel[i])
            out[i] = float(w[sl].sum())
    return out


@dataclass
class BadMassReport:
    r: int
    samples: int
    fraction: float
    stderr: float
    bound: float
    used_samples: int

    @property
    def passed(self) -> bool:
        return self.fraction <= self.bound + 3 * self.stderr


def bad_mass_fraction(f, sigma, omega, ks, r: int, samples: int, rng: np.random.Generator, **setup_kw) -> BadMassReport:
    """Share of the E-set omega mass carried by r-bad Whitney cubes over random grids.

    A ratio estimator over the sampled grids, with a delta-method standard error.
    """
    first = setup_whitney(f, sigma, ks, rng=rng, **setup_kw)
    fld = first.field
    dom = first.domain
    wcell = omega.integrate_many(dom.cell_lo(), dom.cell_lo() + dom.h)
    bad_w = np.zeros(samples)
    tot_w = np.zeros(samples)
    for s in range(samples):
        st = first if s == 0 else setup_whitney(f, sigma, ks, rng=rng, field=fld, **setup_kw)
        w = eset_masses(st, wcell)
        _, bad = split_good_bad(st.family, r)
        tot_w[s] = w.sum()
        bad_w[s] = w[bad].sum() if bad else 0.0
    used = int(np.sum(tot_w > 0))
    n = fld.domain.dim
    bound = 4 * n * 2.0 ** (-r)
    if tot_w.sum() <= 0:
        return BadMassReport(r, samples, 0.0, 0.0, bound, used)
    frac = bad_w.sum() / tot_w.sum()
    mt = tot_w.mean()
    resid = bad_w - frac * tot_w
    se = math.sqrt(np.var(resid, ddof=1) / samples) / mt if samples > 1 else 0.0
    return BadMassReport(r, samples, float(frac), float(se), bound, used)
