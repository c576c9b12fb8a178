"""Two-weight constants for the maximal operator.

Every supremum runs over a finite candidate family: cubes with side 2^j for j
in the scale window and faces on a dyadic lattice.  Testing integrals use
quadrature nodes that are lattice boxes; the integrand on a node is the
largest average over window cubes containing the whole node, which never
exceeds the maximal function anywhere on the node.  All testing values and
the norm estimate are therefore certified lower bounds for their
continuum counterparts over the same candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .maximal import TIE, ScaleWindow, cell_max_many, maximal_many
from .measure import CellFunction, CellMeasure, LatticeSpec, MollifierKernel, Rect, mollify


def default_doubling(n: int) -> float:
    return 2.0 ** (2 * n + 1) + 1


@dataclass(frozen=True)
class TestingParams:
    gamma: float = 3.0
    d: float | None = None
    window: ScaleWindow | None = None
    position_refine: int = 1
    quad_sub: int = 2
    candidate_res: int | None = None
    node_res: int | None = None
    min_side: float = 0.0
    rhs: str = "dilate"

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.d is not None and self.d <= 1:
            raise ValueError("d must be > 1")
        if self.quad_sub < 1 or self.quad_sub & (self.quad_sub - 1):
            raise ValueError("quad_sub must be a power of two")
        if self.position_refine < 0:
            raise ValueError("position_refine must be >= 0")
        if self.rhs not in ("dilate", "cube"):
            raise ValueError("rhs must be 'dilate' or 'cube'")

    def resolved(self, sigma: CellMeasure, omega: CellMeasure) -> "TestingParams":
        n = sigma.dim
        d = default_doubling(n) if self.d is None else self.d
        w = self.window or ScaleWindow.for_measures(sigma, omega)
        res = max(sigma.spec.res_exp, omega.spec.res_exp)
        cres = self.candidate_res if self.candidate_res is not None else res + self.position_refine
        nres = self.node_res
        if nres is None:
            nres = omega.spec.res_exp + int(math.log2(self.quad_sub))
        # every candidate cube must contain whole quadrature nodes
        nres = max(nres, cres, -w.j_min)
        return replace(self, d=d, window=w, candidate_res=cres, node_res=nres)

    def to_dict(self) -> dict:
        w = self.window
        return {
            "gamma": self.gamma,
            "d": self.d,
            "window": None if w is None else [w.j_min, w.j_max],
            "position_refine": self.position_refine,
            "quad_sub": self.quad_sub,
            "candidate_res": self.candidate_res,
            "node_res": self.node_res,
            "min_side": self.min_side,
            "rhs": self.rhs,
        }


@dataclass
class ConstantValue:
    value: float
    witness: Rect | None
    n_candidates: int = 0
    n_doubling: int | None = None
    empty_filter: bool = False


@dataclass
class NormEstimate:
    value: float
    f: CellFunction | None
    converged: bool
    assignments: np.ndarray | None = None
    seed_value: float = 0.0


def _support_union(sigma: CellMeasure, omega: CellMeasure):
    boxes = [b for b in (sigma.support_box(), omega.support_box()) if b is not None]
    if not boxes:
        return None
    lo = np.min([b.lo for b in boxes], axis=0)
    hi = np.max([b.hi for b in boxes], axis=0)
    return lo, hi


class CandidateTable:
    """Candidate cubes with their cached masses and testing numerators."""

    def __init__(self, sigma: CellMeasure, omega: CellMeasure, p: TestingParams):
        if sigma.dim != omega.dim:
            raise ValueError("measures must have the same dimension")
        self.sigma = sigma
        self.omega = omega
        self.p = p = p.resolved(sigma, omega)
        n = sigma.dim
        step = 2.0 ** (-p.candidate_res)
        los, sides = [], []
        box = _support_union(sigma, omega)
        if box is not None:
            blo, bhi = box
            for s in p.window.scales():
                if s < p.min_side:
                    continue
                axes = []
                for a in range(n):
                    k0 = math.floor((blo[a] - s) / step) + 1
                    k1 = math.ceil(bhi[a] / step) - 1
                    pos = np.arange(k0, k1 + 1) * step
                    # positions whose interval covers the whole support projection give identical values
                    covers = (pos <= blo[a]) & (pos + s >= bhi[a])
                    if covers.sum() > 1:
                        pos = np.concatenate([pos[~covers & (pos < blo[a])], pos[covers][:1], pos[~covers & (pos > blo[a])]])
                    axes.append(pos)
                g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
                los.append(g)
                sides.append(np.full(len(g), s))
        self.lo = np.concatenate(los) if los else np.zeros((0, n))
        self.side = np.concatenate(sides) if sides else np.zeros(0)
        hi = self.lo + self.side[:, None]
        self.sigma_mass = sigma.integrate_many(self.lo, hi)
        self.omega_mass = omega.integrate_many(self.lo, hi)
        self._numerator = None
        self._dilate_cache = {}

    def __len__(self) -> int:
        return len(self.side)

    @property
    def volume(self) -> np.ndarray:
        return self.side ** self.sigma.dim

    def rect(self, i: int) -> Rect:
        return Rect(tuple(self.lo[i]), tuple(self.lo[i] + self.side[i]))

    def sigma_dilate(self, gamma: float) -> np.ndarray:
        if gamma not in self._dilate_cache:
            c = self.lo + self.side[:, None] / 2
            half = self.side[:, None] * gamma / 2
            self._dilate_cache[gamma] = self.sigma.integrate_many(c - half, c + half)
        return self._dilate_cache[gamma]

    def nodes(self):
        """Quadrature boxes on the node lattice that carry omega mass."""
        return _nodes(self.omega, self.p.node_res)

    @property
    def numerator(self) -> np.ndarray:
        """Certified lower bound of the integral over Q of M(1_Q sigma)^2 d omega."""
        if self._numerator is None:
            self._numerator = self._compute_numerators()
        return self._numerator

    def _compute_numerators(self) -> np.ndarray:
        n = self.sigma.dim
        out = np.zeros(len(self))
        nlo, nhi, nw = self.nodes()
        if len(nw) == 0 or len(self) == 0:
            return out
        live = np.nonzero((self.sigma_mass > 0) & (self.omega_mass > 0))[0]
        qi, ni = [], []
        for i in live:
            inside = np.all((nlo >= self.lo[i]) & (nhi <= self.lo[i] + self.side[i]), axis=1)
            idx = np.nonzero(inside)[0]
            qi.append(np.full(len(idx), i))
            ni.append(idx)
        if not qi:
            return out
        qi = np.concatenate(qi)
        ni = np.concatenate(ni)
        chunk = 1 << 14
        vals = np.empty(len(qi))
        for start in range(0, len(qi), chunk):
            sl = slice(start, start + chunk)
            q = qi[sl]
            v, _, _ = cell_max_many(
                self.sigma,
                nlo[ni[sl]],
                nhi[ni[sl]],
                self.p.window,
                self.lo[q],
                self.lo[q] + self.side[q, None],
            )
            vals[sl] = v
        np.add.at(out, qi, nw[ni] * vals**2)
        return out


def _nodes(omega: CellMeasure, res: int):
    box = omega.support_box()
    n = omega.dim
    if box is None:
        return np.zeros((0, n)), np.zeros((0, n)), np.zeros(0)
    h = 2.0 ** (-res)
    axes = [np.arange(round(box.lo[a] / h), round(box.hi[a] / h)) * h for a in range(n)]
    lo = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    hi = lo + h
    w = omega.integrate_many(lo, hi)
    keep = w > 0
    return lo[keep], hi[keep], w[keep]


def _argmax_value(values, table: CandidateTable, mask=None):
    if mask is not None:
        values = np.where(mask, values, -np.inf)
    if len(values) == 0 or not np.any(np.isfinite(values)):
        return 0.0, None
    i = int(np.argmax(values))
    return float(max(values[i], 0.0)), table.rect(i)


def a2_constant(sigma: CellMeasure, omega: CellMeasure, p: TestingParams = TestingParams(), table=None) -> ConstantValue:
    t = table or CandidateTable(sigma, omega, p)
    prod = (t.sigma_mass / t.volume) * (t.omega_mass / t.volume)
    v, wit = _argmax_value(prod, t)
    return ConstantValue(v, wit, len(t))


def _testing_ratio(t: CandidateTable, gamma: float, rhs: str = "dilate") -> np.ndarray:
    num = t.numerator
    den = t.sigma_dilate(gamma) if rhs == "dilate" else t.sigma_mass
    if np.any((den <= 0) & (num > 0)):
        raise AssertionError("positive testing integral over a sigma-null cube")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def testing_constant(sigma: CellMeasure, omega: CellMeasure, p: TestingParams = TestingParams(), table=None) -> ConstantValue:
    t = table or CandidateTable(sigma, omega, p)
    r = _testing_ratio(t, p.gamma)
    v, wit = _argmax_value(r, t)
    return ConstantValue(math.sqrt(v), wit, len(t))


def doubling_mask(t: CandidateTable, gamma: float, d: float) -> np.ndarray:
    return t.sigma_dilate(gamma) <= d * t.sigma_mass


def restricted_testing_constant(
    sigma: CellMeasure, omega: CellMeasure, p: TestingParams = TestingParams(), table=None
) -> ConstantValue:
    t = table or CandidateTable(sigma, omega, p)
    pp = p.resolved(sigma, omega)
    mask = doubling_mask(t, pp.gamma, pp.d)
    r = _testing_ratio(t, pp.gamma, pp.rhs)
    count = int(mask.sum())
    if count == 0:
        return ConstantValue(0.0, None, len(t), 0, True)
    v, wit = _argmax_value(r, t, mask)
    return ConstantValue(math.sqrt(v), wit, len(t), count, False)


def quadrature_stability(sigma, omega, p: TestingParams = TestingParams(), tol: float = 0.05):
    """Testing constant with one and four nodes per omega cell per axis; flags a gap above tol."""
    lo = testing_constant(sigma, omega, replace(p, quad_sub=1, node_res=None)).value
    hi = testing_constant(sigma, omega, replace(p, quad_sub=4, node_res=None)).value
    gap = abs(hi - lo) / hi if hi > 0 else 0.0
    return {"quad_sub_1": lo, "quad_sub_4": hi, "relative_gap": gap, "unstable": gap > tol}


# --- operator norm lower bound -----------------------------------------------


class _NormProblem:
    """The frozen-assignment linear map from cell functions to node values."""

    def __init__(self, sigma: CellMeasure, omega: CellMeasure, p: TestingParams):
        self.sigma = sigma
        self.p = p
        spec = sigma.spec.refined(p.candidate_res - sigma.spec.res_exp)
        self.fspec = spec
        dens = sigma.on_lattice(spec).density
        self.cells = np.array(np.nonzero(dens > 0)).T
        self.dens = dens[tuple(self.cells.T)]
        self.mass = self.dens * spec.cell_volume
        self.nlo, self.nhi, self.nw = _nodes(omega, p.node_res)

    def function(self, f_cells) -> CellFunction:
        v = np.zeros(self.fspec.extent)
        v[tuple(self.cells.T)] = f_cells
        return CellFunction(self.fspec, v)

    def assign(self, f_cells):
        fs = CellMeasure(self.fspec, self.function(f_cells).values * self.sigma.on_lattice(self.fspec).density)
        _, wlo, wside = cell_max_many(fs, self.nlo, self.nhi, self.p.window)
        return wlo, wside

    def operator(self, wlo, wside) -> np.ndarray:
        s = self.fspec
        n = s.dim
        L = np.ones((len(self.nw), len(self.cells)))
        for a in range(n):
            c0 = (s.origin[a] + self.cells[:, a]) * s.cell_side
            c1 = c0 + s.cell_side
            ov = np.minimum(c1[None, :], (wlo[:, a] + wside)[:, None]) - np.maximum(c0[None, :], wlo[:, a][:, None])
            L *= np.maximum(ov, 0.0)
        return L * self.dens[None, :] / (wside**n)[:, None]

    def quotient(self, L, f) -> float:
        den = float(np.dot(self.mass, f * f))
        if den <= 0:
            return 0.0
        y = L @ f
        return float(np.dot(self.nw, y * y)) / den


def power_iteration(B: np.ndarray, g0: np.ndarray, tol: float = 1e-10, cap: int = 500):
    """Top eigenpair of a nonnegative symmetric matrix on the nonnegative cone.

    Returns (vector, Rayleigh quotient, iterations, converged, clamp_active).
    """
    g = np.maximum(np.asarray(g0, dtype=float), 0.0)
    nrm = np.linalg.norm(g)
    if nrm == 0:
        return g, 0.0, 0, True, False
    g = g / nrm
    q = float(g @ B @ g)
    clamp_active = False
    for it in range(1, cap + 1):
        h = B @ g
        if np.any(h < 0):
            clamp_active = True
        h = np.maximum(h, 0.0)
        nrm = np.linalg.norm(h)
        if nrm == 0:
            return g, q, it, True, clamp_active
        g = h / nrm
        q_new = float(g @ B @ g)
        if abs(q_new - q) <= tol * max(abs(q_new), 1e-300):
            return g, q_new, it, True, clamp_active
        q = q_new
    return g, q, cap, False, clamp_active


def estimate_norm_lower(
    sigma: CellMeasure,
    omega: CellMeasure,
    p: TestingParams = TestingParams(),
    restarts: int = 4,
    iterations: int = 20,
    seed: int = 0,
    table: CandidateTable | None = None,
) -> NormEstimate:
    """Certified lower bound for the L2(sigma) -> L2(omega) norm of f -> M(f sigma)."""
    if sigma.total_mass <= 0:
        raise ValueError("sigma must have positive mass")
    t = table or CandidateTable(sigma, omega, p)
    pp = t.p
    prob = _NormProblem(sigma, omega, pp)
    if len(prob.nw) == 0:
        return NormEstimate(0.0, None, True)
    best_q, best_f, best_assign = 0.0, None, None
    # every candidate indicator is a certified seed through the cached numerators
    with np.errstate(divide="ignore", invalid="ignore"):
        ind = np.where(t.sigma_mass > 0, t.numerator / np.where(t.sigma_mass > 0, t.sigma_mass, 1.0), 0.0)
    seeds = []
    if len(ind) and ind.max() > 0:
        # rank on a rounded relative scale so near-ties keep their index order under rescaling
        order = np.argsort(-np.round(ind / ind.max(), 9), kind="stable")
        best_q = float(ind[order[0]])
        best_f = _indicator(prob, t, order[0])
        for i in order[:restarts]:
            seeds.append(_indicator(prob, t, i))
    seed_value = best_q
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        seeds.append(rng.random(len(prob.cells)))
    converged = True
    sqm = np.sqrt(prob.mass)
    sqw = np.sqrt(prob.nw)
    for f in seeds:
        if not np.any(f > 0):
            continue
        assign = prob.assign(f)
        L = prob.operator(*assign)
        q = prob.quotient(L, f)
        if q > best_q * (1 + TIE):
            best_q, best_f, best_assign = q, f, assign
        stable = False
        for _ in range(iterations):
            A = (sqw[:, None] * L) / sqm[None, :]
            g, _, _, ok, _ = power_iteration(A.T @ A, sqm * f)
            converged &= ok
            f = g / sqm
            q = prob.quotient(L, f)
            if q > best_q * (1 + TIE):
                best_q, best_f, best_assign = q, f, assign
            new = prob.assign(f)
            if np.array_equal(new[0], assign[0]) and np.array_equal(new[1], assign[1]):
                stable = True
                break
            assign = new
            L = prob.operator(*assign)
            q = prob.quotient(L, f)
            if q > best_q * (1 + TIE):
                best_q, best_f, best_assign = q, f, assign
        converged &= stable
    fn = None if best_f is None else prob.function(best_f)
    return NormEstimate(math.sqrt(best_q), fn, converged, best_assign, math.sqrt(seed_value))


def _indicator(prob: _NormProblem, t: CandidateTable, i: int) -> np.ndarray:
    s = prob.fspec
    c0 = (np.asarray(s.origin)[None, :] + prob.cells) * s.cell_side
    inside = np.all((c0 >= t.lo[i]) & (c0 + s.cell_side <= t.lo[i] + t.side[i]), axis=1)
    return inside.astype(float)


# --- reports ------------------------------------------------------------------


@dataclass
class StabilizedResult:
    value: float
    base_value: float
    relative_change: float
    stable: bool
    rounds: int
    window: ScaleWindow


def stabilize(op, sigma, omega, p: TestingParams, extra_levels: int = 2, max_rounds: int = 1) -> StabilizedResult:
    """Recompute ``op`` with the window widened on both ends until the value settles."""
    pp = p.resolved(sigma, omega)
    base = op(sigma, omega, pp).value
    w = pp.window
    prev = base
    rel = 0.0
    for rounds in range(1, max_rounds + 1):
        w = w.widened(extra_levels)
        cur = op(sigma, omega, replace(pp, window=w)).value
        rel = abs(cur - prev) / abs(cur) if cur != 0 else abs(cur - prev)
        prev = cur
        if rel <= 1e-6:
            return StabilizedResult(cur, base, rel, True, rounds, w)
    return StabilizedResult(prev, base, rel, False, max_rounds, w)


@dataclass
class ConstantsReport:
    a2: ConstantValue
    t_gamma: ConstantValue
    t_d_gamma: ConstantValue
    norm_lb: NormEstimate
    params: TestingParams
    flags: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        den = self.t_d_gamma.value + math.sqrt(self.a2.value)
        return self.norm_lb.value / den if den > 0 else math.nan

    def to_dict(self) -> dict:
        def rect(r):
            return None if r is None else {"lo": list(r.lo), "hi": list(r.hi)}

        return {
            "a2": {"value": self.a2.value, "witness": rect(self.a2.witness)},
            "t_gamma": {"value": self.t_gamma.value, "witness": rect(self.t_gamma.witness)},
            "t_d_gamma": {
                "value": self.t_d_gamma.value,
                "witness": rect(self.t_d_gamma.witness),
                "n_doubling": self.t_d_gamma.n_doubling,
                "empty_filter": self.t_d_gamma.empty_filter,
            },
            "norm_lb": {"value": self.norm_lb.value, "converged": self.norm_lb.converged},
            "ratio": self.ratio,
            "n_candidates": self.a2.n_candidates,
            "params": self.params.to_dict(),
            "flags": self.flags,
        }


def constants_report(
    sigma: CellMeasure,
    omega: CellMeasure,
    p: TestingParams = TestingParams(),
    restarts: int = 4,
    iterations: int = 20,
    seed: int = 0,
) -> ConstantsReport:
    t = CandidateTable(sigma, omega, p)
    pp = t.p
    a2 = a2_constant(sigma, omega, pp, t)
    tg = testing_constant(sigma, omega, pp, t)
    td = restricted_testing_constant(sigma, omega, pp, t)
    nl = estimate_norm_lower(sigma, omega, pp, restarts, iterations, seed, t)
    return ConstantsReport(a2, tg, td, nl, pp)


# --- mollified experiments ------------------------------------------------------


def alpha_threshold(gamma: float, gamma_prime: float) -> float:
    return min((gamma_prime / gamma - 1) / 288, 1 / 32)


def mollify_pair(sigma, omega, eps: float, kernel: MollifierKernel | None = None):
    """(sigma mollified at 8 eps, omega mollified at eps), each on a lattice resolving its kernel."""
    kernel = kernel or MollifierKernel(sigma.dim)
    res_w = max(omega.spec.res_exp, math.ceil(math.log2(2 / eps)))
    res_s = max(sigma.spec.res_exp, math.ceil(math.log2(2 / (8 * eps))))
    return mollify(sigma, 8 * eps, kernel, res_s), mollify(omega, eps, kernel, res_w)


def mollified_stability_report(
    sigma: CellMeasure,
    omega: CellMeasure,
    eps_list,
    p: TestingParams = TestingParams(),
    gamma_prime: float | None = None,
    d_prime: float | None = None,
    alpha: float | None = None,
    osc_samples: int = 50,
    seed: int = 0,
    kernel: MollifierKernel | None = None,
) -> list:
    """Constants of mollified pairs against the originals, one row per eps."""
    pp = p.resolved(sigma, omega)
    gp = pp.gamma + 1 if gamma_prime is None else gamma_prime
    dp = pp.d if d_prime is None else d_prime
    kernel = kernel or MollifierKernel(sigma.dim)
    alpha = alpha_threshold(pp.gamma, gp) if alpha is None else alpha
    base = CandidateTable(sigma, omega, pp)
    a2_0 = a2_constant(sigma, omega, pp, base).value
    td_0 = restricted_testing_constant(sigma, omega, pp, base).value
    td_0p = restricted_testing_constant(sigma, omega, replace(pp, gamma=gp, d=dp), base).value
    rng = np.random.default_rng(seed)
    rows = []
    for eps in eps_list:
        s8, we = mollify_pair(sigma, omega, eps, kernel)
        a2 = a2_constant(s8, we, pp).value
        # the alpha constraint needs cubes of side >= eps / alpha, so the window is raised to reach them
        top = max(pp.window.j_max, math.ceil(math.log2(eps / alpha)))
        q = replace(
            pp,
            gamma=gp,
            d=dp,
            window=ScaleWindow(pp.window.j_min, top),
            min_side=eps / alpha,
        )
        t = CandidateTable(s8, we, q)
        td = restricted_testing_constant(s8, we, q, t).value
        s1 = mollify(sigma, eps, kernel, max(sigma.spec.res_exp, math.ceil(math.log2(2 / eps))))
        c_osc = _oscillation_constant(s1, s8, eps, alpha, q, rng, osc_samples)
        rows.append(
            {
                "eps": eps,
                "mass_sigma": s8.total_mass,
                "mass_omega": we.total_mass,
                "a2": a2,
                "t_d_gamma_prime": td,
                "a2_ratio": a2 / a2_0 if a2_0 > 0 else math.nan,
                "td_ratio": td / td_0 if td_0 > 0 else math.nan,
                "td_ratio_same_gamma": td / td_0p if td_0p > 0 else math.nan,
                "osc_constant": c_osc,
                "alpha": alpha,
                "n_candidates": len(t),
            }
        )
    return rows


def _oscillation_constant(s_eps, s_8eps, eps, alpha, p: TestingParams, rng, samples: int) -> float:
    """Largest observed M(1_Q s_eps)(x) / M(1_Q s_8eps)(x + h) over random (Q, x, h), |h| < eps."""
    n = s_eps.dim
    box = s_eps.support_box()
    if box is None:
        return 0.0
    w = p.window
    sides = [s for s in w.scales() if s >= eps / alpha] or [w.scales()[-1]]
    worst = 0.0
    for _ in range(samples):
        s = float(rng.choice(sides))
        lo = np.asarray(box.lo) - s + rng.random(n) * (np.asarray(box.hi) - np.asarray(box.lo) + s)
        Q = Rect(tuple(lo), tuple(lo + s))
        x = lo + rng.random(n) * s
        h = (2 * rng.random(n) - 1) * eps
        a = float(maximal_many(s_eps, x[None, :], w, clip=Q)[0])
        b = float(maximal_many(s_8eps, (x + h)[None, :], w, clip=Q)[0])
        if a > 0:
            worst = max(worst, a / b if b > 0 else math.inf)
    return worst


__all__ = [
    "TestingParams",
    "CandidateTable",
    "ConstantValue",
    "NormEstimate",
    "ConstantsReport",
    "StabilizedResult",
    "a2_constant",
    "testing_constant",
    "restricted_testing_constant",
    "estimate_norm_lower",
    "stabilize",
    "constants_report",
    "mollified_stability_report",
    "quadrature_stability",
    "power_iteration",
    "alpha_threshold",
    "default_doubling",
    "doubling_mask",
    "mollify_pair",
]
