"""Command line front end: ``smgark {check,integrate,experiment,compose,list}``.

Every option can also come from a flat ``key = value`` config file passed
with ``--config``; flags given on the command line win.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import conditions as cond
from .composition import compose_chain, compose_tableau, weights_for
from .diagnostics import (SWEEP_OMEGAS, ReferenceError, _ref_settings, convergence_order, energy_study,
                          reference_solution, stability_sweep, sweep_slopes, sweep_to_csv)
from .integrators import SolverConfig, StepError, integrate, make_stepper, steps_for
from .systems import PROBLEMS, FpuParams, PhaseState, make_problem, standard_initial_state
from .tableau import SCHEMES, TableauParseError, build_scheme, dumps, load

EXPERIMENTS = ("energy", "convergence", "sweep")
FAMILIES = ("tj", "sf", "ac", "ac*")


class CliError(Exception):
    pass


# ---------------------------------------------------------------- config handling

def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        if not eq:
            raise CliError(f"{path}:{lineno}: expected key = value")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace, argv) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    given = {a.split("=", 1)[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, val in read_config(args.config).items():
        if key in given:
            continue
        if not hasattr(args, key):
            raise CliError(f"unknown config key {key!r}")
        cur = getattr(args, key)
        if isinstance(cur, bool):
            setattr(args, key, val.lower() in ("1", "true", "yes", "on"))
        elif isinstance(cur, int):
            setattr(args, key, int(val))
        elif isinstance(cur, float):
            setattr(args, key, float(val))
        else:
            setattr(args, key, val)
    return args


def _vector(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.replace(",", " ").split()])


def _solver(args) -> SolverConfig:
    return SolverConfig(newton_rel_tol=args.newton_rel_tol, newton_abs_tol=args.newton_abs_tol,
                        max_iters=args.max_iters, jacobian_mode=args.jacobian)


def _problem(args):
    if args.problem not in PROBLEMS:
        raise CliError(f"unknown problem {args.problem!r}; available: {', '.join(PROBLEMS)}")
    sys_ = make_problem(args.problem, args.m, args.omega)
    if args.p0 or args.q0:
        p, q = _vector(args.p0 or ""), _vector(args.q0 or "")
        if p.size != sys_.dim or q.size != sys_.dim:
            raise CliError(f"initial vectors need {sys_.dim} entries each")
        y0 = PhaseState(p, q)
    elif args.problem == "fpu":
        y0 = standard_initial_state(FpuParams(args.m, args.omega))
    else:
        y0 = PhaseState(np.zeros(sys_.dim), np.ones(sys_.dim))
    return sys_, y0


def _stepper(args, scheme=None, M=None):
    scheme = scheme or args.scheme
    M = args.M if M is None else M
    if scheme not in SCHEMES:
        raise CliError(f"unknown scheme {scheme!r}; available: {', '.join(SCHEMES)}")
    t = build_scheme(scheme, M)
    rep = cond.order_report(t, 2).merge(cond.is_symplectic(t)).merge(cond.is_symmetric(t))
    if not rep.passed:
        raise CliError(f"scheme {scheme} failed its checks: {', '.join(e.condition_id for e in rep.failing())}")
    st = make_stepper(scheme, M, _solver(args))
    if args.compose:
        st = compose_chain(st, weights_for(args.compose, args.order))
    return st


# ---------------------------------------------------------------- subcommands

def cmd_check(args, out) -> int:
    target = args.tableau
    try:
        if target in SCHEMES:
            t = build_scheme(target, args.M)
        elif Path(target).exists():
            t = load(target)
        else:
            raise CliError(f"no builtin scheme or file named {target!r}; schemes: {', '.join(SCHEMES)}")
    except TableauParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    flat = args.flat or not cond.uniform_micro_steps(t)
    if flat and not args.flat:
        print("micro-steps have unequal weights; order rows use the flattened tableau", file=out)
    order_fn = cond.order_report_flat if flat else cond.order_report
    rep = order_fn(t, 3, args.tol)
    requested = order_fn(t, args.p, args.tol).merge(cond.is_symplectic(t, args.tol)).merge(
        cond.is_symmetric(t, args.tol))
    rep = rep.merge(cond.is_symplectic(t, args.tol)).merge(cond.is_symmetric(t, args.tol))
    props = {
        "explicit": cond.is_explicit(t),
        "decoupled": cond.is_decoupled(t),
        "positive_weights": cond.positive_weights(t),
    }
    for name, ok in props.items():
        rep.add(f"property.{name}", float(ok), 1.0)
    if args.report:
        with open(args.report, "w", newline="") as fh:
            rep.to_csv(fh)
    failures = [e.condition_id for e in requested.failing()]
    for name in ("explicit", "decoupled", "positive_weights"):
        if getattr(args, name) and not props[name]:
            failures.append(f"property.{name}")
    print(f"{target}: M = {t.M}, max residual (order <= {args.p}, symplectic, symmetric) = "
          f"{requested.max_residual:.3e}", file=out)
    for name, ok in props.items():
        print(f"  {name}: {'yes' if ok else 'no'}", file=out)
    if failures:
        for cid in failures:
            print(f"FAIL {cid}", file=out)
        return 1
    print("all requested checks passed", file=out)
    return 0


def cmd_integrate(args, out) -> int:
    sys_, y0 = _problem(args)
    st = _stepper(args)
    n = steps_for(args.t_end, args.H)
    micro_rows = []

    def micro(t, p, q):
        micro_rows.append((t, *p, *q))

    try:
        traj = integrate(st, sys_, y0, args.H, n, fuse_kicks=args.fuse_kicks,
                         micro_observer=micro if args.micro_output else None)
    except StepError as exc:
        print(f"error: solver failed at step {exc.step} (t = {exc.t:.6g}): {exc.cause}", file=sys.stderr)
        return 3
    text = traj.to_csv()
    _emit(text, args.output, out)
    if args.micro_output:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = y0.dim
        w.writerow(["t"] + [f"p{i}" for i in range(d)] + [f"q{i}" for i in range(d)])
        w.writerow([f"{x:.17g}" for x in (0.0, *y0.p, *y0.q)])
        for row in micro_rows:
            w.writerow([f"{x:.17g}" for x in row])
        Path(args.micro_output).write_text(buf.getvalue())
    return 0


def _emit(text: str, path, out) -> None:
    if path and path != "-":
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        out.write(text)


def cmd_experiment(args, out) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.name == "energy":
        sys_, y0 = _problem(args)
        st = _stepper(args)
        es = energy_study(st, sys_, y0, args.H, args.t_end, every=args.every)
        path = outdir / "energy.csv"
        path.write_text(es.to_csv())
        status = "failed at t = %.6g" % es.failed_at if es.failed_at is not None else "completed"
        print(f"{path}: {status}; drift slope {es.drift_slope:.3e}, max |H - H0| {es.max_deviation:.3e}", file=out)
        return 0
    if args.name == "convergence":
        sys_, y0 = _problem(args)
        st = _stepper(args)
        H_list = [2.0 ** -k for k in range(args.kmin, args.kmax + 1)]
        h, order = _ref_settings(args.omega)
        try:
            ref = reference_solution(sys_, y0, args.t_end, h=h, order=order)
        except ReferenceError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
        res = convergence_order(st, sys_, y0, args.t_end, H_list, ref)
        path = outdir / "convergence.csv"
        path.write_text(res.to_csv())
        print(f"{path}: slope {res.slope:.3f}", file=out)
        return 0
    if args.name == "sweep":
        omegas = [float(w) for w in args.omegas.split(",")] if args.omegas else []
        schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
        H_list = [2.0 ** -k for k in range(args.kmin, args.kmax + 1)]
        cells = stability_sweep(schemes, omegas, H_list, args.t_end, args.m, workers=args.workers)
        path = outdir / "sweep.csv"
        path.write_text(sweep_to_csv(cells))
        for (s, w), slope in sweep_slopes(cells).items():
            print(f"{s:>14s}  omega = {w:<8g} slope {slope:.3f}", file=out)
        print(f"{path}: {len(cells)} cells", file=out)
        return 0
    raise CliError(f"unknown experiment {args.name!r}; available: {', '.join(EXPERIMENTS)}")


def cmd_compose(args, out) -> int:
    if args.scheme not in SCHEMES:
        raise CliError(f"unknown scheme {args.scheme!r}; available: {', '.join(SCHEMES)}")
    t = build_scheme(args.scheme, args.M)
    for w in weights_for(args.family, args.order):
        t = compose_tableau(t, w)
    _emit(dumps(t), args.output, out)
    return 0


def cmd_list(args, out) -> int:
    print("schemes:     " + ", ".join(SCHEMES), file=out)
    print("problems:    " + ", ".join(PROBLEMS), file=out)
    print("composition: " + ", ".join(FAMILIES), file=out)
    print("experiments: " + ", ".join(EXPERIMENTS), file=out)
    return 0


# ---------------------------------------------------------------- parser

def _common_run(p: argparse.ArgumentParser, scheme="mr-imex2", M=1, H=0.1, t_end=1.0):
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--scheme", default=scheme)
    p.add_argument("--M", type=int, default=M, help="multirate factor")
    p.add_argument("--compose", default="", help="composition family: tj, sf, ac, ac*")
    p.add_argument("--order", type=int, default=4, help="target order of the composition")
    p.add_argument("--problem", default="fpu")
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--omega", type=float, default=50.0)
    p.add_argument("--p0", default="", help="explicit initial momenta (comma separated)")
    p.add_argument("--q0", default="", help="explicit initial positions (comma separated)")
    p.add_argument("--H", type=float, default=H, help="macro-step size")
    p.add_argument("--t-end", dest="t_end", type=float, default=t_end)
    p.add_argument("--newton-rel-tol", type=float, default=1e-12)
    p.add_argument("--newton-abs-tol", type=float, default=1e-14)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--jacobian", choices=("analytic", "fd"), default="analytic")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smgark", description="Symplectic multirate GARK toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="verify order, symplecticity and symmetry of a tableau")
    p.add_argument("tableau", help="builtin scheme name or tableau file")
    p.add_argument("--M", type=int, default=2)
    p.add_argument("--p", type=int, default=2, choices=(1, 2, 3), help="highest order to require")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--flat", action="store_true", help="evaluate order rows on the flattened tableau")
    p.add_argument("--explicit", action="store_true", help="also require explicitness")
    p.add_argument("--decoupled", action="store_true", help="also require decoupled tiers")
    p.add_argument("--positive-weights", dest="positive_weights", action="store_true")
    p.add_argument("--report", help="write every condition row to this CSV")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("integrate", help="integrate a problem and write the macro-grid trajectory")
    _common_run(p)
    p.add_argument("--fuse-kicks", dest="fuse_kicks", action="store_true")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--micro-output", default="", help="also write the state after every micro-step")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("experiment", help="run one of the FPU experiments")
    p.add_argument("name", help="energy, convergence or sweep")
    _common_run(p, M=50, H=0.1, t_end=220.0)
    p.add_argument("--outdir", default=".")
    p.add_argument("--every", type=int, default=1, help="energy: sample every n macro-steps")
    p.add_argument("--kmin", type=int, default=5)
    p.add_argument("--kmax", type=int, default=9)
    p.add_argument("--omegas", default=",".join(f"{w:g}" for w in SWEEP_OMEGAS))
    p.add_argument("--schemes", default="mr-imex2,mr-imim2,mr-imex2+tj,mr-imim2+tj")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("compose", help="write the tableau of a composed scheme")
    p.add_argument("scheme")
    p.add_argument("--M", type=int, default=2)
    p.add_argument("--family", default="tj")
    p.add_argument("--order", type=int, default=4)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("list", help="list schemes, problems and experiments")
    p.set_defaults(func=cmd_list)
    return ap


_EXPERIMENT_DEFAULTS = {
    # convergence and sweep follow the stiffness study; energy keeps H = 0.1, t in [0, 220]
    "convergence": {"M": 1, "t_end": 3.0},
    "sweep": {"t_end": 3.0, "kmax": 13},
}


def main(argv=None, out=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = sys.stdout if out is None else out
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "experiment":
            given = {a.split("=", 1)[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
            for k, v in _EXPERIMENT_DEFAULTS.get(args.name, {}).items():
                if k not in given:
                    setattr(args, k, v)
        args = _apply_config(parser, args, argv)
        return args.func(args, out)
    except (CliError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
