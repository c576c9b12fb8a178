"""Command-line experiment runner.

Each subcommand writes ``<name>.csv`` and ``<name>.report.json`` into the
output directory and exits with 0 when every asserted property holds.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .constants import (
    TestingParams,
    a2_constant,
    constants_report,
    default_doubling,
    estimate_norm_lower,
    mollified_stability_report,
    stabilize,
)
from .generators import GENERATORS, bump_function, generate_measure, make_rng
from .grid import ENUMERATION_GUARD, GridFamily, GridSizeError, bad_fraction, count_bad_offsets, enumerate_grids
from .maximal import ScaleWindow, domination_check, domination_family
from .measure import ResolutionError, read_measure
from .stopping import bad_mass_fraction, build_principal, check_principal
from .whitney import (
    check_whitney_properties,
    classify_pi,
    default_m,
    eset_disjointness,
    maximum_principle_check,
    setup_whitney,
)

SCHEMA_VERSION = "1.0"

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_GUARD = 4


class ConfigError(ValueError):
    """Bad configuration file or option values."""


class GuardError(RuntimeError):
    """A size or resource guard refused the run."""


def defaults_for(n: int) -> dict:
    """Every tuning default, printed into each report."""
    R_W = 9
    return {
        "gamma": 3.0,
        "d": default_doubling(n),
        "eta": 4.0,
        "R_W": R_W,
        "N_overlap": 5,
        "m": default_m(n, R_W),
        "m0": 2,
        "r": 6,
        "beta": 1 / 64,
        "rng": "numpy Philox keyed by SeedSequence([seed, instance])",
    }


def workers() -> int:
    raw = os.environ.get("MAXLAB_THREADS", "1")
    try:
        k = int(raw)
    except ValueError as e:
        raise ConfigError(f"MAXLAB_THREADS must be an integer, got {raw!r}") from e
    if k < 1:
        raise ConfigError("MAXLAB_THREADS must be >= 1")
    return k


def ordered_map(fn, items) -> list:
    """Map with up to MAXLAB_THREADS workers; results keep input order."""
    items = list(items)
    k = min(workers(), max(len(items), 1))
    if k == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


# --- measures from options --------------------------------------------------------


def _family_params(args, family: str) -> dict:
    if family == "cantor":
        return {"depth": args.depth}
    p = {"res": args.res}
    if family == "power":
        p["a"] = args.power_a
    if family == "point-pair":
        p["gap"] = args.gap
    return p


def measure_pair(args, instance: int):
    """(sigma, omega) for one instance: files if given, else the generator at instances 2i and 2i+1."""
    if getattr(args, "sigma", None) or getattr(args, "omega", None):
        if not (args.sigma and args.omega):
            raise ConfigError("--sigma and --omega must be given together")
        return read_measure(args.sigma), read_measure(args.omega)
    p = _family_params(args, args.family)
    s = generate_measure(args.family, args.n, args.seed, 2 * instance, **p)
    w = generate_measure(args.family, args.n, args.seed, 2 * instance + 1, **p)
    return s, w


def testing_params(args) -> TestingParams:
    return TestingParams(gamma=args.gamma, d=args.d, position_refine=args.position_refine, quad_sub=args.quad_sub)


# --- output ---------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path: Path, rows: list) -> None:
    if not rows:
        path.write_bytes(b"")
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0].keys())
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    return v


def emit(args, rows: list, properties: dict, results: dict, started: float) -> int:
    out = Path(args.out_dir)
    name = args.name or args.command
    failing = sorted(k for k, ok in properties.items() if not ok)
    report = {
        "schema_version": SCHEMA_VERSION,
        "maxlab_version": __version__,
        "command": args.command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)},
        "defaults": defaults_for(getattr(args, "n", 1)),
        "properties": properties,
        "failing": failing,
        "results": results,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / f"{name}.csv", rows)
        (out / f"{name}.report.json").write_text(json.dumps(_jsonable(report), indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        print(f"error: cannot write reports: {e}", file=sys.stderr)
        return EXIT_IO
    for k in failing:
        print(f"FAILED property: {k}")
    return EXIT_OK if not failing else EXIT_PROPERTY


# --- subcommands ----------------------------------------------------------------


def cmd_constants(args) -> int:
    t0 = time.perf_counter()
    sigma, omega = measure_pair(args, args.instance)
    p = testing_params(args)
    rep = constants_report(sigma, omega, p, args.restarts, args.iterations, args.seed)
    st = stabilize(a2_constant, sigma, omega, rep.params, extra_levels=2, max_rounds=2)
    rep.flags["a2_window_stable"] = st.stable
    d = rep.to_dict()
    props = {
        "restricted_le_testing": rep.t_d_gamma.value <= rep.t_gamma.value,
        "values_nonnegative": min(rep.a2.value, rep.t_gamma.value, rep.t_d_gamma.value, rep.norm_lb.value) >= 0,
        "norm_ge_indicator_seeds": rep.norm_lb.value >= rep.norm_lb.seed_value,
    }
    row = {
        "instance": args.instance,
        "seed": args.seed,
        "generator": args.family,
        "a2": rep.a2.value,
        "t_gamma": rep.t_gamma.value,
        "t_d_gamma": rep.t_d_gamma.value,
        "n_doubling": rep.t_d_gamma.n_doubling,
        "norm_lb": rep.norm_lb.value,
        "ratio": rep.ratio,
    }
    print(f"A2 = {rep.a2.value!r}  T = {rep.t_gamma.value!r}  T^D = {rep.t_d_gamma.value!r}  N_lb = {rep.norm_lb.value!r}")
    return emit(args, [row], props, d, t0)


def cmd_norm(args) -> int:
    t0 = time.perf_counter()
    sigma, omega = measure_pair(args, args.instance)
    p = testing_params(args)
    est = estimate_norm_lower(sigma, omega, p, args.restarts, args.iterations, args.seed)
    row = {"instance": args.instance, "seed": args.seed, "norm_lb": est.value, "seed_value": est.seed_value, "converged": est.converged}
    props = {"norm_ge_indicator_seeds": est.value >= est.seed_value}
    print(f"N_lb = {est.value!r} (indicator seeds {est.seed_value!r}, converged {est.converged})")
    return emit(args, [row], props, {"norm_lb": est.value, "converged": est.converged}, t0)


def _whitney_instance(args, instance: int):
    rng = make_rng(args.seed, instance)
    sigma = generate_measure(args.family, args.n, args.seed, instance, **_family_params(args, args.family))
    f = bump_function(sigma.spec, rng, args.height_exp)
    m = args.m if args.m is not None else default_m(args.n, args.R_W)
    if args.ks:
        ks = [int(v) for v in args.ks.split(",")]
    else:
        top = math.floor(math.log2(float(np.max(f.values * sigma.density))))
        ks = list(range(top - m - 3, top - m + 1))
    st = setup_whitney(f, sigma, ks, args.refine, args.R_W, args.N_overlap, m, args.m0, rng=rng)
    return sigma, f, st


def cmd_whitney(args) -> int:
    t0 = time.perf_counter()
    sigma, f, st = _whitney_instance(args, args.instance)
    fam = st.family
    chk = check_whitney_properties(fam)
    mp = maximum_principle_check(st, samples=4, rng=make_rng(args.seed, 10**6 + args.instance))
    dis = eset_disjointness(st)
    pf = build_principal(fam, args.eta, args.L)
    fn = float(np.sum(f.values**2 * sigma.density) * sigma.spec.cell_volume)
    pc = check_principal(pf, fn)
    pi = classify_pi(st, sigma, args.beta)
    props = {f"whitney_{k}": v for k, v in chk.as_dict().items() if isinstance(v, bool)}
    if mp.m_meets_precondition:
        props["maximum_principle"] = mp.passed
    props["eset_disjoint"] = dis["per_level"] and dis["inside_cubes"]
    props["principal_clause_i"] = pc.clause_i
    props["principal_clause_ii"] = pc.clause_ii
    props["principal_predecessor_minimal"] = pc.predecessor_minimal
    rows = fam.to_rows()
    results = {
        "ks": st.ks,
        "grid": st.grid.to_dict(),
        "n_cubes": len(fam),
        "measured": chk.measured,
        "maximum_principle": {"violations": mp.violations, "checked": mp.checked_cells, "m": mp.m, "min_margin": mp.min_margin},
        "principal": {"generations": [len(g) for g in pf.generations()], "carleson_ratio": pc.carleson_ratio},
        "pi_sizes": list(pi.sizes),
    }
    print(f"{len(fam)} Whitney cubes over k = {st.ks}; principal generations {results['principal']['generations']}")
    return emit(args, rows, props, results, t0)


def cmd_badness(args) -> int:
    t0 = time.perf_counter()
    n, r = args.n, args.r
    if n * r > ENUMERATION_GUARD:
        raise GuardError(f"n*r = {n * r} exceeds the enumeration guard {ENUMERATION_GUARD}")
    total = 2 ** (n * r)
    bad = total - max(2**r - 4, 0) ** n
    counted = count_bad_offsets(n, r)
    frac = bad_fraction(n, r)
    print(f"{bad}/{total}")
    print(f"enumeration: {counted}/{total} ({'confirmed' if counted == bad else 'MISMATCH'})")
    props = {"enumeration_matches_formula": counted == bad, "fraction_le_bound": frac <= Fraction(4 * n, 2**r)}
    row = {"n": n, "r": r, "bad": bad, "total": total, "enumerated": counted, "fraction": float(frac), "bound": 4 * n * 2.0**-r}
    results = {"bad": bad, "total": total, "enumerated": counted, "fraction": frac}
    if args.samples > 0:
        sigma, f, st = _whitney_instance(args, args.instance)
        rep = bad_mass_fraction(f, sigma, sigma, st.ks, r, args.samples, make_rng(args.seed, 2 * 10**6 + args.instance), refine=args.refine, R_W=args.R_W, N_overlap=args.N_overlap, m=st.m, m0=args.m0)
        props["monte_carlo_bad_mass"] = rep.passed
        results["monte_carlo"] = {"fraction": rep.fraction, "stderr": rep.stderr, "bound": rep.bound, "samples": rep.samples, "weighting": "E-set omega mass"}
        row.update({"mc_fraction": rep.fraction, "mc_stderr": rep.stderr})
        print(f"Monte Carlo bad mass fraction {rep.fraction:.4f} +- {rep.stderr:.4f} (bound {rep.bound:.4f})")
    return emit(args, [row], props, results, t0)


def cmd_domination(args) -> int:
    t0 = time.perf_counter()

    def one(i):
        rng = make_rng(args.seed, i)
        mu = generate_measure(args.family, args.n, args.seed, i, **_family_params(args, args.family))
        box = mu.support_box() or mu.spec.box
        x = np.asarray(box.lo) + rng.random(args.n) * (np.asarray(box.hi) - np.asarray(box.lo))
        w = ScaleWindow.for_measures(mu)
        rep = domination_check(mu, x[None, :], domination_family(args.n, w), args.samples, rng, w)
        return {
            "instance": i,
            "seed": args.seed,
            "generator": args.family,
            **{f"x{a}": float(x[a]) for a in range(args.n)},
            "maximal": float(rep.maximal[0]),
            "dyadic_mean": float(rep.mean[0]),
            "stderr": float(rep.stderr[0]),
            "ratio": float(rep.ratio[0]),
            "passed": bool(rep.passed[0]),
        }

    rows = ordered_map(one, range(args.count))
    props = {"domination": all(r["passed"] for r in rows)}
    results = {"constant": 2.0 ** (args.n + 3), "max_ratio": max(r["ratio"] for r in rows), "count": len(rows)}
    print(f"{sum(r['passed'] for r in rows)}/{len(rows)} instances pass; max ratio {results['max_ratio']:.4f}")
    return emit(args, rows, props, results, t0)


def cmd_mollify(args) -> int:
    t0 = time.perf_counter()
    sigma, omega = measure_pair(args, args.instance)
    eps = [float(v) for v in args.eps.split(",")]
    p = testing_params(args)
    rows = mollified_stability_report(
        sigma, omega, eps, p, gamma_prime=args.gamma_prime, d_prime=args.d_prime, osc_samples=args.osc_samples, seed=args.seed
    )
    ms, mw = sigma.total_mass, omega.total_mass
    props = {
        "mass_preserved": all(abs(r["mass_sigma"] - ms) <= 1e-12 * ms and abs(r["mass_omega"] - mw) <= 1e-12 * mw for r in rows),
        "ratios_finite": all(math.isfinite(r["a2_ratio"]) and math.isfinite(r["td_ratio"]) for r in rows),
    }
    results = {"max_a2_ratio": max(r["a2_ratio"] for r in rows), "max_td_ratio": max(r["td_ratio"] for r in rows)}
    print(f"sup A2 ratio {results['max_a2_ratio']!r}, sup restricted-testing ratio {results['max_td_ratio']!r}")
    return emit(args, rows, props, results, t0)


def ratio_row(args, i: int) -> dict:
    sigma, omega = measure_pair(args, i)
    rep = constants_report(sigma, omega, testing_params(args), args.restarts, args.iterations, args.seed + i)
    return {
        "instance": i,
        "seed": args.seed,
        "generator": args.family,
        "a2": rep.a2.value,
        "t_gamma": rep.t_gamma.value,
        "t_d_gamma": rep.t_d_gamma.value,
        "n_doubling": rep.t_d_gamma.n_doubling,
        "norm_lb": rep.norm_lb.value,
        "norm_converged": rep.norm_lb.converged,
        "ratio": rep.ratio,
        "restricted_le_testing": rep.t_d_gamma.value <= rep.t_gamma.value,
        "norm_ge_indicator_seeds": rep.norm_lb.value >= rep.norm_lb.seed_value,
    }


def cmd_ratio_sweep(args) -> int:
    t0 = time.perf_counter()
    rows = ordered_map(lambda i: ratio_row(args, i), range(args.count))
    ratios = [r["ratio"] for r in rows]
    props = {
        "ratios_finite": all(math.isfinite(v) for v in ratios),
        "restricted_le_testing": all(r["restricted_le_testing"] for r in rows),
        "norm_ge_indicator_seeds": all(r["norm_ge_indicator_seeds"] for r in rows),
    }
    best = int(np.nanargmax(ratios)) if rows else -1
    results = {"max_ratio": ratios[best] if rows else math.nan, "argmax_instance": best, "count": len(rows)}
    print(f"max ratio {results['max_ratio']!r} at instance {best}")
    return emit(args, rows, props, results, t0)


def cmd_gridcheck(args) -> int:
    t0 = time.perf_counter()
    fam = GridFamily(args.n, args.M, args.N)
    if fam.dim * (fam.M - fam.N) > ENUMERATION_GUARD:
        raise GuardError(f"n(M-N) = {fam.dim * (fam.M - fam.N)} exceeds the enumeration guard {ENUMERATION_GUARD}")
    by_scales = enumerate_grids(fam, "scales")
    by_translation = enumerate_grids(fam, "translation")
    a = {g.tiling_key() for g in by_scales}
    b = {g.tiling_key() for g in by_translation}
    props = {
        "cardinality": len(by_scales) == fam.cardinality == len(b),
        "constructions_agree": a == b,
        "distinct_grids": len(a) == len(by_scales),
    }
    print(f"#grids = {fam.cardinality}; constructions agree: {a == b}")
    row = {"n": args.n, "M": args.M, "N": args.N, "cardinality": fam.cardinality, "scales": len(a), "translations": len(b)}
    return emit(args, [row], props, {"cardinality": fam.cardinality}, t0)


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    t0 = time.perf_counter()
    results = run_selftest()
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    rows = [{"check": k, "passed": v} for k, v in results.items()]
    return emit(args, rows, dict(results), {"checks": len(results)}, t0)


# --- parser -----------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="key = value file with a [maxlab] section; flags override it")
    p.add_argument("--out-dir", default=".", help="directory for <name>.csv and <name>.report.json")
    p.add_argument("--name", default=None, help="report base name (default: the subcommand)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1, choices=(1, 2, 3), help="dimension")


def _generator(p, default="random-cells"):
    p.add_argument("--family", default=default, choices=GENERATORS)
    p.add_argument("--res", type=int, default=4, help="cells per axis = 2^res")
    p.add_argument("--depth", type=int, default=3, help="cantor depth")
    p.add_argument("--power-a", type=float, default=-0.5, help="power exponent a > -n")
    p.add_argument("--gap", type=float, default=0.5, help="point-pair gap")
    p.add_argument("--instance", type=int, default=0)


def _pair(p):
    _generator(p)
    p.add_argument("--sigma", default=None, help="sigma measure file (overrides the generator)")
    p.add_argument("--omega", default=None, help="omega measure file")
    p.add_argument("--gamma", type=float, default=3.0)
    p.add_argument("--d", type=float, default=None, help="doubling threshold (default 2^(2n+1)+1)")
    p.add_argument("--position-refine", type=int, default=1)
    p.add_argument("--quad-sub", type=int, default=2)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--iterations", type=int, default=20)


def _whitney_opts(p):
    _generator(p)
    p.add_argument("--R-W", dest="R_W", type=int, default=9)
    p.add_argument("--N-overlap", dest="N_overlap", type=int, default=5)
    p.add_argument("--m", type=int, default=None, help="gap exponent (default from R_W and n)")
    p.add_argument("--m0", type=int, default=2)
    p.add_argument("--refine", type=int, default=2)
    p.add_argument("--ks", default=None, help="comma-separated thresholds k (default: derived from the bump height)")
    p.add_argument("--height-exp", type=int, default=7)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maxlab", description="Maximal-function two-weight experiments")
    ap.add_argument("--version", action="version", version=f"maxlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="A2, testing constants and norm lower bound for one pair")
    _common(p)
    _pair(p)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("norm", help="norm lower bound for one pair")
    _common(p)
    _pair(p)
    p.set_defaults(func=cmd_norm)

    p = sub.add_parser("whitney", help="Whitney families, maximum principle and principal cubes")
    _common(p)
    _whitney_opts(p)
    p.add_argument("--eta", type=float, default=4.0)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--beta", type=float, default=1 / 64)
    p.set_defaults(func=cmd_whitney)

    p = sub.add_parser("badness", help="r-bad offset counts and optional Monte Carlo bad mass")
    _common(p)
    _whitney_opts(p)
    p.add_argument("--r", type=int, default=6)
    p.add_argument("--samples", type=int, default=0, help="random grids for the bad-mass estimate (0 = skip)")
    p.set_defaults(func=cmd_badness)

    p = sub.add_parser("domination", help="maximal function against the mean dyadic maximal function")
    _common(p)
    _generator(p)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--samples", type=int, default=4000)
    p.set_defaults(func=cmd_domination)

    p = sub.add_parser("mollify", help="constants of mollified pairs")
    _common(p)
    _pair(p)
    p.add_argument("--eps", default="0.125,0.0625")
    p.add_argument("--gamma-prime", type=float, default=None)
    p.add_argument("--d-prime", type=float, default=None)
    p.add_argument("--osc-samples", type=int, default=50)
    p.set_defaults(func=cmd_mollify)

    p = sub.add_parser("ratio-sweep", help="norm lower bound against T^D + sqrt(A2) over seeded pairs")
    _common(p)
    _pair(p)
    p.add_argument("--count", type=int, default=50)
    p.set_defaults(func=cmd_ratio_sweep)

    p = sub.add_parser("gridcheck", help="grid family cardinality and construction equivalence")
    _common(p)
    p.add_argument("--M", type=int, default=4)
    p.add_argument("--N", type=int, default=0)
    p.set_defaults(func=cmd_gridcheck)

    p = sub.add_parser("selftest", help="built-in invariant suite")
    _common(p)
    p.set_defaults(func=cmd_selftest)
    return ap


def _apply_config(parser: argparse.ArgumentParser, argv: list) -> argparse.Namespace:
    """Parse once to find the config file, load it as defaults, then parse again so flags win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(args.config, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as e:
        raise OSError(f"cannot read config {args.config}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"config {args.config}: {e}") from e
    if not cp.has_section("maxlab"):
        raise ConfigError("config needs a [maxlab] section")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    values = {}
    for key, raw in cp.items("maxlab"):
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        a = actions[dest]
        try:
            values[dest] = a.type(raw) if a.type else raw
        except (TypeError, ValueError) as e:
            raise ConfigError(f"config key {key}: {e}") from e
        if a.choices is not None and values[dest] not in a.choices:
            raise ConfigError(f"config key {key}: {raw!r} not in {list(a.choices)}")
    subparser.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        workers()
        return args.func(args)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    except (ConfigError, ResolutionError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (GuardError, GridSizeError) as e:
        print(f"guard: {e}", file=sys.stderr)
        return EXIT_GUARD
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
