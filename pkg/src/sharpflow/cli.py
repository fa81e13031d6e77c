"""Command-line entry point.

Exit codes: 0 success, 1 failed invariant or verification, 2 config or
usage error, 3 more than 10% of symbol rows failed, 4 flow aborted.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .coefficients import (
    ConfigError,
    HypothesisError,
    check_hypotheses,
    compute_constants,
    load_config,
)
from .curve_flow import (
    DT_MAX,
    CurveError,
    FlowAbort,
    reparametrize,
    run,
    shape_points,
    write_frame,
)
from .mode_solver import ModeSolverError, solve_mode, write_mode_csv
from .oracle import ClosedFormCase, zeta_affine, zeta_epsilon, zeta_general_tied, zeta_reference
from .symbols import (
    DOMINATED_LAWS,
    default_config_for,
    fit_exponent,
    isd_limit_coefficients,
    make_law,
    parse_law_id,
    tabulate,
    verify_table,
)

VERIFY_LAMBDAS = (1.0, 10.0, 100.0, 1e3, 1e4)
ORACLE_TOL = 1e-6
LIMIT_LAMBDA_MAX = 1e4


class UsageError(ValueError):
    pass


def shipped_config(name):
    """Path of a config bundled with the package ("fractional_affine", "isd", ...)."""
    return resources.files("sharpflow") / "configs" / f"{name}.json"


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True)


def _float_list(text, what):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"{what}: expected comma-separated numbers") from exc
    if not vals or not all(math.isfinite(v) for v in vals):
        raise UsageError(f"{what}: expected finite numbers")
    return vals


def _coeffs(args, law_id=None):
    if getattr(args, "config", None):
        return load_config(args.config)
    if law_id is not None:
        return default_config_for(law_id)
    return load_config(shipped_config("fractional_affine"))


# -- commands ---------------------------------------------------------------

def cmd_constants(args):
    coeffs = _coeffs(args)
    out = compute_constants(coeffs).to_dict()
    out["config_hash"] = coeffs.config_hash()
    print(_dump(out))
    return 0


def cmd_mode(args):
    coeffs = _coeffs(args)
    if args.nodes < 4:
        raise UsageError("--nodes must be at least 4")
    sol = solve_mode(coeffs, args.lam, n_cells=args.nodes)
    meta = sol.metadata()
    meta["config_hash"] = coeffs.config_hash()
    if args.out:
        write_mode_csv(sol, args.out, {"config_hash": coeffs.config_hash()})
    print(_dump(meta))
    return 0


def _tail_window(lams):
    hi = float(lams[-1])
    return max(float(lams[0]), hi / 10.0), hi


def cmd_symbol(args):
    law_id, _ = parse_law_id(args.law)
    coeffs = _coeffs(args, law_id)
    if not (0 < args.lmin < args.lmax) or args.points < 2:
        raise UsageError("need 0 < lmin < lmax and points >= 2")
    law = make_law(args.law, coeffs)
    table = tabulate(law, args.lmin, args.lmax, args.points)
    rep = verify_table(table, law.constants, law)
    report = {
        "law": law.label,
        "config_hash": table.config_hash,
        "positivity": rep.positivity,
        "dominance": rep.dominance,
        "zero_mode": rep.zero_mode,
        "min_margin": rep.min_margin,
        "worst_lambda": rep.worst_lambda,
        "failed_rows": rep.failed_rows,
        "messages": [m for m in table.messages if m],
    }
    if table.ok.sum() >= 4:
        try:
            report["tail_slope"] = fit_exponent(table, _tail_window(table.lambdas)).slope
        except ValueError:
            report["tail_slope"] = fit_exponent(table, (table.lambdas[0], table.lambdas[-1])).slope
    if law_id == "fractional_numeric" and coeffs.tied:
        case = ClosedFormCase.from_coefficients(coeffs)
        if case.affine:
            exact = zeta_affine(case, table.lambdas)
        else:
            exact = np.array([zeta_general_tied(case, x) for x in table.lambdas])
        delta = np.abs(table.zetas - exact) / exact
        report["oracle_deltas"] = [float(d) for d in delta]
        report["max_oracle_delta"] = float(np.nanmax(delta))
    if args.out:
        table.write_csv(args.out)
        Path(str(args.out) + ".report.json").write_text(_dump(report) + "\n")
    print(_dump({k: v for k, v in report.items() if k != "oracle_deltas"}))
    if rep.failed_rows > 0.1 * table.lambdas.size:
        print(f"error: {rep.failed_rows} of {table.lambdas.size} rows failed", file=sys.stderr)
        return 3
    if not rep.passed:
        names = sorted({v[0] for v in rep.violations}) or ["failed rows"]
        note = "" if law_id in DOMINATED_LAWS else " (limiting law, not a coefficient symbol)"
        print(f"invariant failed: {', '.join(names)}{note}", file=sys.stderr)
        return 1
    return 0


def cmd_limit_isd(args):
    coeffs = _coeffs(args, "intermediate")
    eps = _float_list(args.eps, "--eps")
    lams = _float_list(args.lambdas, "--lambdas")
    if len(eps) < 3:
        raise UsageError("--eps needs at least three values for a rate fit")
    if any(b >= a for a, b in zip(eps, eps[1:])) or not all(0 < e < 1 for e in eps):
        raise UsageError("--eps values must lie in (0, 1) and decrease")
    if any(lam < 0 or lam > LIMIT_LAMBDA_MAX for lam in lams):
        raise UsageError(f"--lambdas must lie in [0, {LIMIT_LAMBDA_MAX:g}]")
    alpha1 = compute_constants(coeffs).alpha1
    target = compute_constants(isd_limit_coefficients(coeffs))
    chash = coeffs.config_hash()
    rows, rates = [], {}
    for lam in lams:
        z_isd = zeta_reference("intermediate", target, lam)
        gaps = []
        for e in eps:
            z = zeta_epsilon(e, alpha1, lam, target.sigma)
            gaps.append(abs(z - z_isd))
            rows.append([e, lam, z, z_isd, abs(z - z_isd)])
        if lam > 0 and all(g > 0 for g in gaps):
            rates[lam] = float(np.polyfit(np.log(eps), np.log(gaps), 1)[0])
        else:
            rates[lam] = None
    lines = ["eps,lambda,zeta_eps,zeta_isd,abs_diff,rate,config_hash"]
    for e, lam, z, zi, d in rows:
        r = rates[lam]
        lines.append(f"{e!r},{lam!r},{z!r},{zi!r},{d!r},{'' if r is None else repr(r)},{chash}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    fitted = [r for r in rates.values() if r is not None]
    ok = all(r >= 0.9 for r in fitted)
    print(_dump({"config_hash": chash, "rates": {repr(k): v for k, v in rates.items()},
                 "min_rate": min(fitted) if fitted else None, "passed": ok}))
    if not ok:
        print("invariant failed: convergence rate below 0.9", file=sys.stderr)
        return 1
    return 0


def cmd_flow(args):
    law_id, _ = parse_law_id(args.law)
    coeffs = _coeffs(args, law_id)
    if args.n < 64 or args.n & (args.n - 1):
        raise UsageError("--n must be a power of two and at least 64")
    if not args.tend > 0 or args.frames < 1:
        raise UsageError("need --tend > 0 and --frames >= 1")
    law = make_law(args.law, coeffs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        state = reparametrize(shape_points(args.shape), args.n)
    except CurveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4

    def sink(index, st):
        write_frame(st, out, index, svg=not args.no_svg)

    diag = None
    code = 0
    try:
        diag = run(state, law, args.tend, args.frames, sink, enforce_area=args.enforce_area,
                   dt_max=args.dt_max)
    except FlowAbort as exc:
        print(f"error: flow aborted: {exc}", file=sys.stderr)
        diag = exc.diagnostics
        if exc.state is not None:
            write_frame(exc.state, out / "abort", 0, svg=False)
        code = 4
    if diag is not None and diag.records:
        diag.write_csv(out / "diagnostics.csv")
        report = diag.report()
        report.update({"law": law.label, "shape": args.shape, "n": args.n,
                       "enforce_area": args.enforce_area, "config_hash": coeffs.config_hash()})
        (out / "report.json").write_text(_dump(report) + "\n")
        print(_dump(report))
    return code


def _suggest_nodes(n, err, tol=ORACLE_TOL):
    need = n * math.sqrt(err / tol) * 1.2
    return int(2 ** math.ceil(math.log2(max(need, n + 1))))


def cmd_verify(args):
    coeffs = _coeffs(args)
    nodes = args.nodes
    results = []

    def record(name, passed, detail):
        results.append((name, bool(passed), detail))

    hyp = check_hypotheses(coeffs)
    for r in hyp.results:
        detail = r.note if r.passed else f"{r.note}; fails at u={r.witness_u:.6g} value={r.value:.6g}"
        record(f"hypothesis {r.name}", r.passed, detail)
    consts = compute_constants(coeffs)
    finite = all(v is None or (math.isfinite(v) and v > 0) for v in consts.to_dict().values())
    record("constants", finite, _dump(consts.to_dict()).replace("\n", " "))

    if hyp.passed and coeffs.branch == "monotone_coupling":
        case = ClosedFormCase.from_coefficients(coeffs) if coeffs.tied else None
        worst, worst_energy, worst_dual = 0.0, 0.0, 0.0
        for lam in VERIFY_LAMBDAS:
            try:
                sol = solve_mode(coeffs, lam, n_cells=nodes)
            except (ModeSolverError, HypothesisError) as exc:
                record(f"mode solve lambda={lam:g}", False, str(exc))
                continue
            s = consts.sigma * sol.zeta
            worst_energy = max(worst_energy, abs(sol.energy - s) / (1.0 + s))
            worst_dual = max(worst_dual, abs(sol.zeta - sol.zeta_alt) / sol.zeta)
            if case is not None:
                exact = zeta_affine(case, lam) if case.affine else zeta_general_tied(case, lam)
                worst = max(worst, abs(sol.zeta - exact) / exact)
        record("energy identity", worst_energy <= 1e-8, f"max |E - sigma zeta|/(1+sigma zeta) = {worst_energy:.3e}")
        record("dual zeta", worst_dual <= 1e-6, f"max |zeta - zeta_alt|/zeta = {worst_dual:.3e}")
        if case is not None:
            ok = worst <= ORACLE_TOL
            detail = f"max relative deviation {worst:.3e} at N={nodes}"
            if not ok:
                detail += f"; try --nodes {_suggest_nodes(nodes, worst)}"
            record("oracle agreement", ok, detail)
            if case.affine:
                lam = 1e4
                gap = abs(zeta_affine(case, lam) / (consts.sigma * consts.eta * math.sqrt(lam)) - 1)
                record("sqrt asymptotics", gap <= 1e-8, f"|zeta/(sigma eta sqrt(lam)) - 1| = {gap:.3e} at 1e4")
        law = make_law("fractional_closed" if coeffs.tied else "fractional_numeric", coeffs,
                       n_cells=nodes)
        grid = (1e-3, 1e4, 15)
    elif hyp.passed:
        law = make_law("intermediate", coeffs)
        grid = (1e-3, 1e8, 61)
    else:
        law = None
        record("solvers", False, "skipped: hypotheses fail")
    if law is not None:
        table = tabulate(law, *grid)
        rep = verify_table(table, consts, law)
        record("symbol positivity", rep.positivity, f"{table.lambdas.size} rows")
        record("symbol dominance", rep.dominance,
               f"min margin {rep.min_margin:.3e} at lambda={rep.worst_lambda:.3g}")
        record("symbol zero mode", rep.zero_mode, "zeta(0) = 0")
        record("symbol rows", rep.failed_rows == 0, f"{rep.failed_rows} failed rows")
        if law.id == "intermediate":
            slope = fit_exponent(table, (1e6, 1e8)).slope
            record("isd tail slope", slope <= 0.05, f"slope {slope:.3e} over [1e6, 1e8]")

    width = max(len(r[0]) for r in results)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    failed = [name for name, ok, _ in results if not ok]
    print(f"config_hash {coeffs.config_hash()}")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


# -- parser -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="sharpflow", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("constants", help="print sigma, delta, omega, eta, alpha(1) as JSON")
    c.add_argument("--config")
    c.set_defaults(func=cmd_constants)

    c = sub.add_parser("mode", help="solve one mode problem and write the profile")
    c.add_argument("--config")
    c.add_argument("--lambda", dest="lam", type=float, required=True)
    c.add_argument("--nodes", type=int, default=2048)
    c.add_argument("--out")
    c.set_defaults(func=cmd_mode)

    c = sub.add_parser("symbol", help="tabulate and verify a flow law")
    c.add_argument("--config")
    c.add_argument("--law", required=True)
    c.add_argument("--lmin", type=float, default=1e-3)
    c.add_argument("--lmax", type=float, default=1e8)
    c.add_argument("--points", type=int, default=61)
    c.add_argument("--out")
    c.set_defaults(func=cmd_symbol)

    c = sub.add_parser("limit-isd", help="convergence of the epsilon family to the ISD symbol")
    c.add_argument("--config")
    c.add_argument("--eps", default="0.1,0.01,0.001")
    c.add_argument("--lambdas", default="1,4,9,16")
    c.add_argument("--out")
    c.set_defaults(func=cmd_limit_isd)

    c = sub.add_parser("flow", help="evolve a closed curve")
    c.add_argument("--config")
    c.add_argument("--law", required=True)
    c.add_argument("--shape", required=True, help="circle:R, ellipse:a,b or fourier:k,re,im,...")
    c.add_argument("--n", type=int, default=256)
    c.add_argument("--tend", type=float, required=True)
    c.add_argument("--frames", type=int, default=10)
    c.add_argument("--out-dir", required=True)
    c.add_argument("--enforce-area", action="store_true")
    c.add_argument("--dt-max", type=float, default=DT_MAX)
    c.add_argument("--no-svg", action="store_true")
    c.set_defaults(func=cmd_flow)

    c = sub.add_parser("verify", help="run the invariant suite on a config")
    c.add_argument("--config")
    c.add_argument("--nodes", type=int, default=2048)
    c.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, HypothesisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
