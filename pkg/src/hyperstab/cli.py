"""hyperstab command line.

Exit codes: 0 success / certified, 1 rejected or check failed, 2 input
error, 3 numerical blow-up during simulation.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

from . import __version__, catalog, svgplot
from .certify import RELAXED, STRICT, Certificate, WeightSpec, certify, iss_gains, resolve_cg, sample_weights
from .expr import ExpressionError
from .model import Grid, SpecError, SystemSpec, load_spec, spec_from_dict, validate_spec
from .sim import BlowUpError, DisturbanceSpec, check_iss_bound, fit_decay_rate, simulate
from .synth import Budget, synthesize

EXIT_OK, EXIT_REJECTED, EXIT_INPUT, EXIT_BLOWUP = 0, 1, 2, 3
SIM_GRID = 200
# used when a built-in system is run without disturbance flags
BUILTIN_DISTURBANCES = {"damped-exchange": "damped_exchange_disturbances.json"}


class InputError(Exception):
    pass


# --------------------------------------------------------------------------
# Input helpers

def _load_system(ref: str) -> SystemSpec:
    if ref in catalog.BUILTINS and not Path(ref).exists():
        spec = spec_from_dict(catalog.BUILTINS[ref]())
    else:
        if not Path(ref).is_file():
            raise InputError(f"{ref}: no such file (built-ins: {', '.join(catalog.BUILTINS)})")
        spec = load_spec(ref)
    report = validate_spec(spec)
    if not report:
        raise InputError("invalid system:\n  " + "\n  ".join(report.failures))
    return spec


def _load_weights(args, spec: SystemSpec, required: bool = True) -> WeightSpec | None:
    if args.weights:
        if not Path(args.weights).is_file():
            raise InputError(f"{args.weights}: no such file")
        w = WeightSpec.load(args.weights)
        w.check_dims(spec.n)
        return w
    if args.system in catalog.BUILTIN_WEIGHTS and not Path(args.system).exists():
        return WeightSpec.from_dict(catalog.BUILTIN_WEIGHTS[args.system]())
    if required:
        raise InputError("no weights given (use --weights, or run `synth` first)")
    return None


def _load_disturbances(args, n: int) -> DisturbanceSpec:
    if getattr(args, "disturbances", None):
        if not Path(args.disturbances).is_file():
            raise InputError(f"{args.disturbances}: no such file")
        return DisturbanceSpec.load(args.disturbances, n)
    bundled = BUILTIN_DISTURBANCES.get(args.system)
    if not (args.d1 or args.d2) and bundled and not Path(args.system).exists():
        text = resources.files("hyperstab").joinpath("data", bundled).read_text()
        return DisturbanceSpec.from_dict(json.loads(text), n)
    d1 = args.d1 or ["0"] * n
    d2 = args.d2 or ["0"] * n
    if len(d1) != n or len(d2) != n:
        raise InputError(f"--d1/--d2 need {n} expressions each")
    return DisturbanceSpec.from_strings(d1, d2)


def _initial(args, spec: SystemSpec) -> list[str]:
    if args.u0:
        if len(args.u0) != spec.n:
            raise InputError(f"need {spec.n} --u0 expressions, got {len(args.u0)}")
        return args.u0
    if args.system in catalog.BUILTINS and not Path(args.system).exists():
        return catalog.exchange_initial()
    raise InputError("initial data required (--u0, once per component)")


def _plain(obj):
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=_plain) if args.json else text)


def _write(path, text: str) -> None:
    p = Path(path)
    if p.parent != Path(""):
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


def _cert_summary(cert: Certificate) -> str:
    lines = [f"verdict: {cert.verdict} ({cert.interior_mode} interior test, C_g {cert.C_g_provenance})",
             f"  lambda_m = {cert.lambda_m:.6g}  threshold = {cert.interior_threshold:.6g}  "
             f"C_g = {cert.C_g:.6g}  margin = {cert.interior_margin:.6g}",
             f"  boundary min eigenvalue = {cert.boundary_min_eig:.6g}  gain = {cert.gain:.6g}"]
    if cert.decay_rate_norm is not None:
        lines.append(f"  decay rate (norm) = {cert.decay_rate_norm:.6g}")
    if cert.iss is not None:
        i = cert.iss
        lines.append(f"  ISS: C1 = {i.C1:.6g}  C2 = {i.C2:.6g}  epsilon = {i.epsilon:.6g}  mu = {i.mu:.6g}")
    if cert.explanation:
        lines.append(f"  {cert.explanation}")
    lines += [f"  warning: {w}" for w in cert.warnings]
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Commands

def cmd_check(args) -> int:
    spec = _load_system(args.system)
    weights = _load_weights(args, spec)
    grid = Grid(args.grid, spec.L) if args.grid else None
    C_g = args.cg if args.cg is not None else resolve_cg(spec, weights, seed=args.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cert = certify(spec, weights, C_g, mode=args.mode, grid=grid, seed=args.seed)
    text = cert.to_json()
    if args.out:
        _write(args.out, text + "\n")
        print(_cert_summary(cert))
    else:
        print(text)
    return EXIT_OK if cert.certified else EXIT_REJECTED


def cmd_synth(args) -> int:
    spec = _load_system(args.system)
    C_g = args.cg if args.cg is not None else None
    result = synthesize(spec, C_g, mode=args.mode, budget=Budget(args.multistarts, args.iterations), seed=args.seed)
    if args.trace:
        result.trace_to_csv(args.trace)
    payload = {"success": result.success, "objective": result.objective, "family": result.family,
               "evaluations": result.evaluations, "message": result.message,
               "weights": None if result.weights is None else result.weights.to_dict(),
               "certificate": None if result.certificate is None else result.certificate.to_dict()}
    if result.success and args.out:
        _write(args.out, json.dumps(result.weights.to_dict(), indent=2) + "\n")
    if result.success:
        text = (f"synth: {result.message}, {result.family} family, objective {result.objective:.6g}, "
                f"{result.evaluations} evaluations\n" + _cert_summary(result.certificate))
        if not args.out:
            text += "\nweights: " + json.dumps(result.weights.to_dict())
    else:
        text = f"synth: {result.message} after {result.evaluations} evaluations"
        if not args.trace:
            best = {}
            for s, it, _, obj in result.trace:
                best[s] = obj
            text += "\n" + "\n".join(f"  start {s}: final objective {o:.6g}" for s, o in sorted(best.items()))
    _emit(args, payload, text)
    return EXIT_OK if result.success else EXIT_REJECTED


def _run_sim(args, spec, initial, dist, weights, T):
    grid = Grid(args.grid or SIM_GRID, spec.L)
    J2 = None if weights is None else sample_weights(spec, weights, grid).J2
    return simulate(spec, initial, T, grid, disturbances=dist, J2=J2, cfl=args.cfl,
                    n_out=args.outputs, snapshot_times=args.snapshot or ())


def cmd_simulate(args) -> int:
    spec = _load_system(args.system)
    weights = _load_weights(args, spec, required=False)
    dist = _load_disturbances(args, spec.n)
    try:
        traj = _run_sim(args, spec, _initial(args, spec), dist, weights, args.T)
    except BlowUpError as exc:
        print(f"blow-up: state became non-finite after t = {exc.t:.6g}", file=sys.stderr)
        if args.out:
            exc.trajectory.to_csv(args.out)
        return EXIT_BLOWUP
    if args.out:
        traj.to_csv(args.out)
    if args.svg:
        svgplot.write_norm_plot(args.svg, [(spec.name, traj)], title="L2 norm")
    if args.snapshot and args.snapshot_out:
        traj.snapshots_to_csv(args.snapshot_out)
    try:
        fit = fit_decay_rate(traj)
        rate, r2 = fit.rate, fit.r_squared
    except ValueError:
        rate, r2 = float("nan"), float("nan")
    ratio = traj.l2[-1] / traj.l2[0] if traj.l2[0] > 0 else float("nan")
    payload = {"T": args.T, "dt": traj.dt, "cfl": traj.cfl, "initial_norm": traj.l2[0],
               "final_norm": traj.l2[-1], "final_over_initial": ratio,
               "fitted_rate": None if math.isnan(rate) else rate,
               "r_squared": None if math.isnan(r2) else r2}
    _emit(args, payload, f"fitted decay rate {rate:.6g} (r^2 {r2:.4f}); ||u(T)||/||u0|| = {ratio:.6g}")
    return EXIT_OK


def cmd_iss(args) -> int:
    spec = _load_system(args.system)
    weights = _load_weights(args, spec)
    dist = _load_disturbances(args, spec.n)
    cert = iss_gains(spec, weights, args.cg, grid=Grid(args.cert_grid, spec.L), seed=args.seed)
    if cert.iss is None:
        _emit(args, {"certificate": cert.to_dict(), "max_ratio": None, "passed": False},
              "no ISS certificate: " + cert.explanation)
        if args.out:
            _write(args.out, cert.to_json() + "\n")
        return EXIT_REJECTED
    try:
        traj = _run_sim(args, spec, _initial(args, spec), dist, weights, args.T)
    except BlowUpError as exc:
        print(f"blow-up: state became non-finite after t = {exc.t:.6g}", file=sys.stderr)
        return EXIT_BLOWUP
    check = check_iss_bound(traj, cert)
    if args.out:
        _write(args.out, cert.to_json() + "\n")
    if args.trajectory:
        traj.to_csv(args.trajectory)
    payload = {"certificate": cert.to_dict(), "max_ratio": check.max_ratio, "passed": check.passed}
    _emit(args, payload, _cert_summary(cert) + f"\nISS envelope: max ratio {check.max_ratio:.6g} "
                                               f"({'pass' if check.passed else 'FAIL'})")
    return EXIT_OK if check.passed else EXIT_REJECTED


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("HYPERSTAB_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def cmd_sweep(args) -> int:
    """ISS envelope check at several disturbance amplitudes."""
    spec = _load_system(args.system)
    weights = _load_weights(args, spec)
    dist = _load_disturbances(args, spec.n)
    if dist.is_zero:
        raise InputError("sweep needs nonzero disturbances (--disturbances or --d1/--d2)")
    cert = iss_gains(spec, weights, args.cg, seed=args.seed)
    if cert.iss is None:
        print("no ISS certificate: " + cert.explanation)
        return EXIT_REJECTED
    initial = _initial(args, spec)
    factors = args.factors

    def one(f):
        d = dist.scaled(f if args.target in ("both", "d1") else 1.0, f if args.target in ("both", "d2") else 1.0)
        try:
            traj = _run_sim(args, spec, initial, d, weights, args.T)
        except BlowUpError:
            return f, float("inf"), False, float("nan")
        c = check_iss_bound(traj, cert)
        return f, c.max_ratio, c.passed, float(traj.l2[-1])

    with ThreadPoolExecutor(min(_threads(), len(factors))) as pool:
        rows = list(pool.map(one, factors))
    lines = ["factor,max_ratio,passed,final_norm"] + [f"{f:.17g},{r:.17g},{int(p)},{n:.17g}" for f, r, p, n in rows]
    if args.out:
        _write(args.out, "\n".join(lines) + "\n")
    _emit(args, {"rows": [dict(zip(("factor", "max_ratio", "passed", "final_norm"), r)) for r in rows]},
          "\n".join(lines))
    return EXIT_OK if all(r[2] for r in rows) else EXIT_REJECTED


def cmd_reproduce(args) -> int:
    out = Path(args.out or "example-bundle")
    out.mkdir(parents=True, exist_ok=True)
    c, L = 0.25, 1.0
    eps = catalog.exchange_epsilon(c, L)
    k_design = catalog.exchange_design_gain(c, L)
    weights = catalog.exchange_weights(c, L)
    design = catalog.exchange_system(c, L, 0.75)
    _write(out / "exchange_feedback.json", json.dumps(catalog.exchange_system_dict(c, L, 0.75), indent=2) + "\n")
    _write(out / "exchange_weights.json", json.dumps(weights.to_dict(), indent=2) + "\n")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cert = certify(design, weights, mode=args.mode, seed=args.seed)
        relaxed = certify(design, weights, mode=RELAXED, seed=args.seed)
        strict = certify(design, weights, mode=STRICT, seed=args.seed)
    _write(out / f"certificate_{args.mode}.json", cert.to_json() + "\n")

    grid = Grid(args.grid or SIM_GRID, L)
    runs, rows = [], []
    for k in (0.0, 0.5, 0.75):
        spec = catalog.exchange_system(c, L, k)
        traj = simulate(spec, catalog.exchange_initial(), args.T, grid)
        traj.to_csv(out / f"trajectory_k{k:g}.csv")
        runs.append((f"k = {k:g}", traj))
        rows.append({"k": k, "initial_norm": float(traj.l2[0]), "final_norm": float(traj.l2[-1]),
                     "final_over_initial": float(traj.l2[-1] / traj.l2[0])})
    svgplot.write_norm_plot(out / "norms.svg", runs, title=f"exchange system, c = {c:g}, L = {L:g}")

    N_diag = {f"{k:g}": 1.5 - 3.5 * (1 - k) ** 2 for k in (0.0, 0.5, 0.75)}
    decays = bool(all(r["final_over_initial"] < 0.05 for r in rows if r["k"] > 0))
    open_loop = bool(rows[0]["final_over_initial"] >= 0.5)
    summary = {
        "epsilon": eps,
        "relaxed_threshold": relaxed.interior_threshold,
        "strict_threshold": strict.interior_threshold,
        "C_g": strict.C_g,
        "strict_margin": strict.interior_margin,
        "k_design": k_design,
        "k_design_condition": {"(1-k)^2": (1 - k_design) ** 2, "eps/(eps+2L)": eps / (eps + 2 * L)},
        "boundary_N11_by_k": N_diag,
        "certificate_verdict": cert.verdict,
        "runs": rows,
        "closed_loop_decays": decays,
        "open_loop_persists": open_loop,
        "factor_two_note": (
            f"strict interior threshold {strict.interior_threshold:.6f} is half the relaxed "
            f"{relaxed.interior_threshold:.6f}; C_g = {strict.C_g:g} lies between them, so only the "
            f"relaxed test certifies (strict margin {strict.interior_margin:.6f})"),
    }
    _write(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    lines = [f"epsilon            {eps:.6f}",
             f"relaxed threshold  {relaxed.interior_threshold:.6f}  (1/(eps+2L))",
             f"strict threshold   {strict.interior_threshold:.6f}",
             f"k_design           {k_design:.6f}  (1-k)^2 = {(1 - k_design) ** 2:.6f} <= eps/(eps+2L) = "
             f"{eps / (eps + 2 * L):.6f}",
             "N_11 by k          " + ", ".join(f"k={k}: {v:g}" for k, v in N_diag.items()),
             f"certificate ({args.mode}): {cert.verdict}"]
    lines += [f"k = {r['k']:<5g} ||u(T)||/||u0|| = {r['final_over_initial']:.6g}" for r in rows]
    if args.mode == STRICT:
        lines.append("note: " + summary["factor_two_note"])
    _write(out / "summary.txt", "\n".join(lines) + "\n")
    _emit(args, summary, "\n".join(lines) + f"\nbundle written to {out}")
    return EXIT_OK if decays and open_loop else EXIT_REJECTED


# --------------------------------------------------------------------------

def _positive_int(v):
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def _grid(v):
    n = int(v)
    if n < 8:
        raise argparse.ArgumentTypeError("grid needs at least 8 cells")
    return n


def _positive(v):
    x = float(v)
    if not x > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return x


def _common(mode_default: str = STRICT) -> argparse.ArgumentParser:
    # a fresh parent per subcommand: argparse shares parent actions, so a
    # per-command default would otherwise leak into every command
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", type=_grid, default=None, help="number of grid cells N_x")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output path")
    common.add_argument("--mode", choices=(STRICT, RELAXED), default=mode_default, help="interior test")
    common.add_argument("--json", action="store_true", help="machine-readable summary on stdout")
    return common


def build_parser() -> argparse.ArgumentParser:

    system = argparse.ArgumentParser(add_help=False)
    system.add_argument("system", help="system JSON file or built-in name (" + ", ".join(catalog.BUILTINS) + ")")
    system.add_argument("--weights", help="weights JSON file")
    system.add_argument("--cg", type=float, default=None, help="override the Lipschitz constant C_g")

    simflags = argparse.ArgumentParser(add_help=False)
    simflags.add_argument("--u0", action="append", help="initial expression in x (repeat per component)")
    simflags.add_argument("--T", type=_positive, default=30.0, help="horizon")
    simflags.add_argument("--cfl", type=float, default=None)
    simflags.add_argument("--outputs", type=_positive_int, default=500, help="number of output samples")
    simflags.add_argument("--disturbances", help="disturbance JSON file")
    simflags.add_argument("--d1", action="append", help="interior disturbance in (t, x), per component")
    simflags.add_argument("--d2", action="append", help="boundary disturbance in t, per component")

    p = argparse.ArgumentParser(prog="hyperstab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check", parents=[_common(), system], help="check a Lyapunov certificate")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("synth", parents=[_common(), system], help="search for certifying weights")
    s.add_argument("--multistarts", type=_positive_int, default=16)
    s.add_argument("--iterations", type=_positive_int, default=12)
    s.add_argument("--trace", help="write the search trace CSV here")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", parents=[_common(), system, simflags], help="simulate and write a CSV trace")
    s.add_argument("--svg", help="write a log-norm plot")
    s.add_argument("--snapshot", type=float, action="append", help="record the state at this time")
    s.add_argument("--snapshot-out", help="CSV file for snapshots")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("iss", parents=[_common(), system, simflags], help="ISS gains and envelope check")
    s.add_argument("--trajectory", help="write the disturbed trajectory CSV here")
    s.add_argument("--cert-grid", type=_grid, default=512)
    s.set_defaults(func=cmd_iss, snapshot=None)

    s = sub.add_parser("sweep", parents=[_common(), system, simflags], help="ISS check over disturbance amplitudes")
    s.add_argument("--factors", type=lambda v: [float(f) for f in v.split(",")], default=[1.0, 2.0, 4.0])
    s.add_argument("--target", choices=("both", "d1", "d2"), default="d2")
    s.set_defaults(func=cmd_sweep, snapshot=None)

    s = sub.add_parser("reproduce-example", parents=[_common(RELAXED)], help="rebuild the exchange example bundle")
    s.add_argument("--T", type=_positive, default=30.0)
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, SpecError, ExpressionError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
