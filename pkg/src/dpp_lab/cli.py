"""Command-line laboratory: solve, simulate, verify, reproduce.

    dpp-lab <command> --scenario <path|name> --out <dir> [--seed S]
            [--paths N] [--tol T] [--x0 csv] [--workers W]

Commands: solve {dpp,pucci-max,pucci-min}, simulate {value,exit-stats,
hitting,drift}, abp {continuous,measurable,ln-failure-demo},
cz {decompose,fuzz}, holder {profile,degiorgi}, compare, verify-all,
list. Artifacts go to <out>/<scenario-hash>/<command>/ as CSV/JSON with
stable key order; reruns with the same seed are byte-identical for any
worker count (set DPP_LAB_WORKERS or --workers). Exit codes: 0 ok,
2 validation error, 3 numerical divergence, 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import abp as abp_mod
from . import regularity as reg
from .dpp_core import DivergenceError, GridFunction, residual, solve_dpp, solve_pucci
from .fields import FieldSpec
from .geometry import Domain, Region
from .scenarios import Scenario, ScenarioError, get_scenario, scenario_list, scenario_load
from .walker import (
    drift_check,
    estimate_value,
    exit_time_stats,
    hitting_prob,
    ln_abp_failure_demo,
    worker_count,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_VERIFY_FAIL = 4


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _load_scenario(arg: str) -> Scenario:
    if os.path.exists(arg):
        return scenario_load(arg)
    return get_scenario(arg)


def _solution_rows(u: GridFunction):
    grid = u.grid
    nodes = grid.nodes().reshape(-1, grid.dim)
    cls = grid.classification.ravel()
    vals = u.values.ravel()
    for i in range(nodes.shape[0]):
        yield (*[float(c) for c in nodes[i]], int(cls[i]), float(vals[i]))


def _probe_points(scn: Scenario, k: int = 5) -> np.ndarray:
    """Deterministic interior probe points, grid-aligned."""
    grid = scn.grid()
    pts = grid.interior_points()
    idx = np.linspace(0, pts.shape[0] - 1, k).astype(int)
    return pts[idx]


C_GRID = 2.0  # frozen solver-vs-walker grid-bias constant


def compare(scn: Scenario, n_paths=None, seed=None, workers=None, probes=None,
            tol=None, method: str = "picard") -> dict:
    """Solver vs Monte Carlo agreement at probe points: |diff| <= 3 SE + C_grid h."""
    u, log = solve_dpp(scn, tol=tol, method=method)
    pts = probes if probes is not None else _probe_points(scn)
    rows = []
    ok = True
    for x in np.atleast_2d(pts):
        est = estimate_value(x, scn, n_paths=n_paths, seed=seed, workers=workers)
        solver_val = float(u(x))
        tol_pt = 3.0 * est.se + C_GRID * scn.h
        good = abs(solver_val - est.mean) <= tol_pt
        ok &= good
        rows.append({
            "point": [float(v) for v in x],
            "solver": solver_val,
            "mc": est.mean,
            "se": est.se,
            "diff": abs(solver_val - est.mean),
            "tol": tol_pt,
            "pass": bool(good),
        })
    return {"scenario": scn.name, "hash": scn.content_hash(), "rows": rows, "pass": bool(ok)}


# ---------------------------------------------------------------------------
# subcommand runners (each returns (exit_code, files))
# ---------------------------------------------------------------------------


def _run_solve(scn, outdir: Path, args) -> int:
    kind = args.variant or "dpp"
    if kind == "dpp":
        u, log = solve_dpp(scn, mode=args.mode, tol=args.tol, method=args.method)
    elif kind in ("pucci-max", "pucci-min"):
        u, log = solve_pucci(scn, kind.split("-")[1], tol=args.tol)
    else:
        raise ScenarioError(f"unknown solve variant {kind!r}")
    dim = scn.domain.dim
    _write_csv(outdir / "solution.csv",
               [*(f"x{d}" for d in range(dim)), "class", "value"], _solution_rows(u))
    _write_csv(outdir / "iterations.csv", ["iteration", "sup_increment"], log.rows())
    summary = {
        "scenario": scn.name,
        "variant": kind,
        "iterations": log.iterations,
        "final_increment": log.final_increment,
        "residual_sup_times_eps2": log.residual_sup,
        "method": log.method,
        "mode": log.mode,
    }
    if log.beta_min is not None:
        summary["beta_min"] = log.beta_min
    _write_json(outdir / "summary.json", summary)
    return EXIT_OK


def _hitting_spec(scn) -> tuple[Region, Domain]:
    spec = scn.extras.get("hitting") if scn.extras else None
    if spec:
        target = Region(tuple(Domain(p["kind"], p["center"], p["extent"]) for p in spec["target"]))
        stop = Domain(spec["stop"]["kind"], spec["stop"]["center"], spec["stop"]["extent"])
        return target, stop
    r = 0.25 * (float(np.min(scn.domain.extent)))
    return Region((Domain.ball(scn.domain.center, r),)), scn.domain


def _run_simulate(scn, outdir: Path, args) -> int:
    kind = args.variant or "value"
    x0 = _parse_x0(args, scn)
    n = args.paths or scn.n_paths
    seed = args.seed if args.seed is not None else scn.seed
    if kind == "value":
        est = estimate_value(x0, scn, n_paths=n, seed=seed, workers=args.workers)
        _write_json(outdir / "value.json", dataclasses.asdict(est))
    elif kind == "exit-stats":
        rep = exit_time_stats(x0, scn, n_paths=n, seed=seed, workers=args.workers)
        _write_json(outdir / "exit_stats.json", rep.to_json())
        _write_csv(outdir / "tail.csv", ["t", "prob"], zip(rep.tail_t.tolist(), rep.tail_p.tolist()))
    elif kind == "hitting":
        target, stop = _hitting_spec(scn)
        est = hitting_prob(x0, target, stop, scn, n_paths=n, seed=seed, workers=args.workers)
        _write_json(outdir / "hitting.json", dataclasses.asdict(est))
    elif kind == "drift":
        rep = drift_check(x0, scn, n_steps=n, seed=seed)
        _write_json(outdir / "drift.json", dataclasses.asdict(rep))
        if not rep.ok:
            return EXIT_VERIFY_FAIL
    else:
        raise ScenarioError(f"unknown simulate variant {kind!r}")
    return EXIT_OK


def _run_abp(scn, outdir: Path, args) -> int:
    kind = args.variant or "continuous"
    if kind == "continuous":
        u, _ = solve_dpp(scn, tol=args.tol, method=args.method)
        rep = abp_mod.verify_abp(scn, u)
        _write_json(outdir / "abp.json", rep.to_json())
        _write_csv(outdir / "cubes.csv", ["center", "side", "sup_f_plus"],
                   [(";".join(repr(float(c)) for c in t.cube.center), t.cube.side, t.sup_f_plus)
                    for t in rep.cubes])
        return EXIT_OK if rep.passed else EXIT_VERIFY_FAIL
    if kind == "measurable":
        rep = abp_mod.verify_abp_measurable(
            scn, n_paths=args.paths, seed=args.seed, workers=args.workers)
        _write_json(outdir / "abp_measurable.json", rep.to_json())
        return EXIT_OK if rep.passed else EXIT_VERIFY_FAIL
    if kind == "ln-failure-demo":
        rep = ln_abp_failure_demo(n_paths=args.paths or 10**5,
                                  seed=args.seed if args.seed is not None else 20240798,
                                  workers=args.workers)
        _write_json(outdir / "ln_failure.json", rep.to_json())
        # the demo *expects* the classical bound to fail; exit 0 when it does
        return EXIT_OK if rep.passed else EXIT_VERIFY_FAIL
    raise ScenarioError(f"unknown abp variant {kind!r}")


def _run_cz(scn, outdir: Path, args) -> int:
    kind = args.variant or "fuzz"
    seed = args.seed if args.seed is not None else 20240700
    if kind == "decompose":
        rng = np.random.Generator(np.random.Philox(key=seed))
        A = reg.DyadicSet.random(rng, args.cz_dim, args.cz_depth, args.cz_density)
        p = reg.CzParams(Fraction(args.cz_delta), Fraction(args.cz_dtilde), args.cz_L)
        if A.measure > p.delta:
            raise ScenarioError("random set exceeds delta; lower --cz-density")
        d = reg.cz_decompose(A, p)
        cert = reg.cz_verify(A, d, p)
        _write_json(outdir / "cz.json", {
            "selected": [[g, list(i)] for g, i in d.selected],
            "B_measure": str(d.b_measure),
            "certificate": dataclasses.asdict(cert),
        })
        return EXIT_OK if cert.passed else EXIT_VERIFY_FAIL
    if kind == "fuzz":
        n_trials = args.paths or 500
        rng = np.random.default_rng(seed)
        results = []
        all_ok = True
        for t in range(n_trials):
            dim = int(rng.integers(1, 3))
            depth = int(rng.integers(2, 7 if dim == 1 else 5))
            A = reg.DyadicSet.random(rng, dim, depth, float(rng.random() * 0.8))
            qd = int(rng.integers(4, 64))
            delta = Fraction(int(rng.integers(2, qd)), qd)
            if not A.measure <= delta:
                continue
            dt_den = int(rng.integers(4, 64))
            dt_num = int(rng.integers(1, max(2, int(delta * dt_den))))
            dt = Fraction(dt_num, dt_den)
            if not 0 < dt < delta:
                continue
            p = reg.CzParams(delta, dt, int(rng.integers(1, depth + 1)))
            cert = reg.cz_verify(A, reg.cz_decompose(A, p), p)
            all_ok &= cert.passed
            results.append({"trial": t, "dim": dim, "depth": depth, "delta": str(delta),
                            "delta_tilde": str(dt), "L": p.L, "passed": cert.passed})
        _write_json(outdir / "cz_fuzz.json", {"trials": results, "all_passed": bool(all_ok)})
        return EXIT_OK if all_ok else EXIT_VERIFY_FAIL
    raise ScenarioError(f"unknown cz variant {kind!r}")


def _profile_spec(scn):
    spec = scn.extras.get("profile", {}) if scn.extras else {}
    r_max = spec.get("r_max", 0.75 * float(np.min(scn.domain.extent)))
    ladder = spec.get("ladder", 2.0)
    center = np.asarray(spec.get("center", scn.domain.center), dtype=float)
    return r_max, ladder, center


def _run_holder(scn, outdir: Path, args) -> int:
    kind = args.variant or "profile"
    if kind == "profile":
        u, _ = solve_dpp(scn, tol=args.tol, method=args.method)
        r_max, ladder, center = _profile_spec(scn)
        prof = reg.oscillation_profile(u, center, r_max, scn.params.eps, ladder=ladder)
        f_sup = abs(scn.f.sup_norm() or 0.0)
        fit = reg.fit_holder(prof, sup_u=u.sup_norm(), f_sup=f_sup)
        cert = reg.holder_certificate(
            u, center, r_max / 2.0, fit.gamma * 0.9, fit.C * 1.5, scn.params.eps,
            f_sup=f_sup, n_pairs=10**4, seed=scn.seed, min_sep=scn.params.eps)
        _write_csv(outdir / "profile.csv", ["radius", "oscillation"], prof.rows())
        _write_json(outdir / "holder.json", {
            "fit": fit.to_json(),
            "certificate": dataclasses.asdict(cert),
        })
        return EXIT_OK if (fit.gamma > 0 and cert.passed) else EXIT_VERIFY_FAIL
    if kind == "degiorgi":
        u, _ = solve_dpp(scn, tol=args.tol, method=args.method)
        r_max, _, center = _profile_spec(scn)
        k = reg.DeGiorgiParams(R=r_max, theta=0.5).dilation(scn.domain.dim, scn.params.lam)
        params = reg.DeGiorgiParams(R=r_max / k, theta=0.5)
        rep = reg.degiorgi_probe(scn, u, center, params)
        _write_json(outdir / "degiorgi.json", rep.to_json())
        return EXIT_OK if rep.eta_observed > 0 else EXIT_VERIFY_FAIL
    raise ScenarioError(f"unknown holder variant {kind!r}")


def _run_compare(scn, outdir: Path, args) -> int:
    rep = compare(scn, n_paths=args.paths, seed=args.seed, workers=args.workers,
                  tol=args.tol, method=args.method)
    _write_json(outdir / "compare.json", rep)
    return EXIT_OK if rep["pass"] else EXIT_VERIFY_FAIL


def _run_verify_all(scn_unused, outroot: Path, args) -> int:
    """Desk-scale battery over the built-ins; artifacts under one root."""
    seed = args.seed if args.seed is not None else 20240800
    n = args.paths or 4000
    worst = EXIT_OK
    summary = {}

    def note(name, code):
        nonlocal worst
        summary[name] = code
        worst = max(worst, code)

    ns = argparse.Namespace(**vars(args))
    ns.paths = n
    ns.seed = seed

    for name in ("linear-1d", "mixture-1d", "uniform-2d"):
        scn = get_scenario(name)
        note(f"compare/{name}", _run_compare(scn, outroot / name / "compare", ns))
    px = get_scenario("pxlaplace-2d", eps=0.2, h=0.05)
    note("solve/pucci-max", _run_solve(
        px, outroot / "pxlaplace-2d" / "solve",
        argparse.Namespace(**{**vars(ns), "variant": "pucci-max", "mode": "monotone"})))
    note("abp/continuous", _run_abp(get_scenario("linear-1d", eps=0.05, h=0.0125),
                                    outroot / "abp-linear" / "abp", argparse.Namespace(**{**vars(ns), "variant": "continuous"})))
    box_scn = get_scenario("exit-1d").with_overrides(
        f=FieldSpec.box_indicator([([-0.1], [0.1])]), name="boxf-1d")
    note("abp/measurable", _run_abp(box_scn, outroot / "boxf-1d" / "abp",
                                    argparse.Namespace(**{**vars(ns), "variant": "measurable"})))
    note("abp/ln-failure", _run_abp(get_scenario("ln-failure-1d"), outroot / "ln-failure" / "abp",
                                    argparse.Namespace(**{**vars(ns), "variant": "ln-failure-demo", "paths": max(n, 10000)})))
    note("cz/fuzz", _run_cz(None, outroot / "cz" / "cz",
                            argparse.Namespace(**{**vars(ns), "variant": "fuzz", "paths": 100})))
    note("holder/profile", _run_holder(get_scenario("ellipsoid-2d"), outroot / "ellipsoid-2d" / "holder",
                                       argparse.Namespace(**{**vars(ns), "variant": "profile", "method": "auto"})))
    note("simulate/drift", _run_simulate(get_scenario("mixture-1d"), outroot / "mixture-1d" / "simulate",
                                         argparse.Namespace(**{**vars(ns), "variant": "drift", "x0": None, "paths": 20000})))
    from .dpp_core import nonuniqueness_check

    rep = nonuniqueness_check(20)
    _write_json(outroot / "nonuniqueness" / "report.json", {
        "k_checked": rep.k_checked,
        "identities": [[k, str(a), str(v), bool(m)] for k, a, v, m in rep.identities],
        "uniqueness_fails_without_boundedness": rep.uniqueness_fails,
    })
    note("nonuniqueness", EXIT_OK if rep.uniqueness_fails else EXIT_VERIFY_FAIL)
    _write_json(outroot / "verify_all.json", {"results": summary, "worst_exit": worst})
    return worst


def _parse_x0(args, scn) -> np.ndarray:
    if getattr(args, "x0", None):
        return np.asarray([float(v) for v in args.x0.split(",")], dtype=float)
    return np.asarray(scn.domain.center, dtype=float)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpp-lab", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("command", choices=["solve", "simulate", "abp", "cz", "holder",
                                        "compare", "verify-all", "list"])
    ap.add_argument("variant", nargs="?", default=None,
                    help="subcommand variant, e.g. dpp | pucci-max | value | fuzz")
    ap.add_argument("--scenario", default="linear-1d", help="built-in name or JSON path")
    ap.add_argument("--out", default="out", help="output root directory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--paths", type=int, default=None)
    ap.add_argument("--tol", type=float, default=None)
    ap.add_argument("--x0", default=None, help="comma-separated start point")
    ap.add_argument("--mode", default="monotone", choices=["monotone", "arbitrary-init"])
    ap.add_argument("--method", default="picard", choices=["picard", "direct", "auto"])
    ap.add_argument("--workers", type=int, default=None,
                    help="process count (default: DPP_LAB_WORKERS or 1)")
    ap.add_argument("--cz-dim", type=int, default=2)
    ap.add_argument("--cz-depth", type=int, default=5)
    ap.add_argument("--cz-L", type=int, default=3)
    ap.add_argument("--cz-delta", default="1/2")
    ap.add_argument("--cz-dtilde", default="1/8")
    ap.add_argument("--cz-density", type=float, default=0.3)
    return ap


_RUNNERS = {
    "solve": _run_solve,
    "simulate": _run_simulate,
    "abp": _run_abp,
    "cz": _run_cz,
    "holder": _run_holder,
    "compare": _run_compare,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    t0 = time.time()
    outroot = Path(args.out)
    try:
        if args.command == "list":
            for name in scenario_list():
                print(name)
            return EXIT_OK
        if args.command == "verify-all":
            code = _run_verify_all(None, outroot / "verify-all", args)
            _write_manifest(outroot / "verify-all", args, t0)
            return code
        scn = _load_scenario(args.scenario)
        if args.seed is not None:
            scn = scn.with_overrides(seed=args.seed)
        outdir = outroot / scn.content_hash() / args.command
        code = _RUNNERS[args.command](scn, outdir, args)
        _write_manifest(outdir, args, t0, scn)
        return code
    except ScenarioError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as e:
        print(f"numerical divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ValueError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


def _write_manifest(outdir: Path, args, t0: float, scn: Scenario = None) -> None:
    """Run manifest (not part of the deterministic artifact set: has timing)."""
    outdir.mkdir(parents=True, exist_ok=True)
    from . import __version__

    files = sorted(
        str(p.relative_to(outdir)) for p in outdir.rglob("*")
        if p.is_file() and p.name != "manifest.json"
    )
    _write_json(outdir / "manifest.json", {
        "artifact_version": __version__,
        "scenario_hash": scn.content_hash() if scn is not None else None,
        "scenario_name": scn.name if scn is not None else None,
        "seed": args.seed,
        "paths": args.paths,
        "worker_env": os.environ.get("DPP_LAB_WORKERS"),
        "outputs": files,
        "elapsed_s": round(time.time() - t0, 3),
    })


if __name__ == "__main__":
    sys.exit(main())
