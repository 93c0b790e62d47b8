"""Command-line runner: ``python -m lpjacobi <command> [options]``.

Each subcommand wraps one library operation, writes its rows to ``--out``
(atomically) or stdout, and prints one ``PASS``/``FAIL`` line per check with
its margin.  Settings may also come from an ini file (``--config``), read from
the ``[common]`` section and the section named after the subcommand; flags
given on the command line win.

Exit status: 0 all checks pass, 1 a check failed, 2 usage error, 3 numerical failure.
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
import tempfile
from pathlib import Path

import numpy as np

from .badset import DEFAULT_BOUNDARY_TOL, DEFAULT_SEED_M, bad_set_measure, check_lemma_2_5, \
    check_theorem_3_2
from .errors import (AliasingError, NumericalError, PreconditionError, WindowOverflowError,
                     WindowTooSmallError)
from .floquet import FIBER_DUMP_COLUMNS, ThetaGrid, fiber_dump_rows
from .operator_core import (LimitPeriodicFamily, PeriodicJacobi, WindowedState, build_ec_family,
                            family_from_json, family_to_json)
from .spectral import band_curves, discriminant_with_derivative, last_constant
from .transport.dynamics import spectral_hull, transport_exponents
from .transport.schedule import make_schedule
from .transport.velocity import (ballistic_witness, estimate_I_II_check, kernel_check,
                                 q_convergence_experiment)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# formatting and output


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def short(x: float) -> str:
    """Shortest round-trip form, without a trailing ``.0``."""
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def render(columns, rows, form: str) -> str:
    buf = io.StringIO()
    if form == "csv":
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    else:
        for r in rows:
            rec = {}
            for c, v in zip(columns, r):
                if isinstance(v, (float, np.floating)):
                    v = float(v)
                    v = v if math.isfinite(v) else fmt(v)
                elif isinstance(v, np.integer):
                    v = int(v)
                rec[c] = v
            buf.write(json.dumps(rec) + "\n")
    return buf.getvalue()


def write_atomic(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Checks:
    def __init__(self):
        self.failed = 0

    def report(self, name: str, ok: bool, margin: float, detail: str = "") -> None:
        self.failed += not ok
        extra = f" {detail}" if detail else ""
        print(f"{'PASS' if ok else 'FAIL'} {name} margin={fmt(float(margin))}{extra}")


# ---------------------------------------------------------------------------
# argument helpers


def float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="ini file with [common] and per-command sections")
    p.add_argument("--grid", type=positive_int, help="theta grid size M")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json-lines"), default="csv")


def add_operator_source(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("operator source (pick one)")
    g.add_argument("--free", type=int, metavar="Q", help="free operator of period Q")
    g.add_argument("--a", type=float_list, help="hoppings a_0..a_{q-1}")
    g.add_argument("--b", type=float_list, help="potentials b_0..b_{q-1}")
    g.add_argument("--family", help="family file written by ec-build")
    g.add_argument("--stage", type=int, default=-1, help="stage index in --family (default last)")
    g.add_argument("--random", type=int, metavar="Q", help="seeded random operator of period Q")
    g.add_argument("--R", type=float, default=2.0, help="coefficient bound R")


def load_family(path: str) -> LimitPeriodicFamily:
    try:
        return family_from_json(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"family file not found: {path}") from exc
    except (ValueError, KeyError) as exc:
        raise UsageError(f"cannot parse family file {path}: {exc}") from exc


def operator_from(args) -> tuple[PeriodicJacobi, LimitPeriodicFamily | None]:
    given = [x is not None for x in (args.free, args.a, args.family, args.random)]
    if sum(given) != 1:
        raise UsageError("give exactly one of --free, --a/--b, --family, --random")
    if args.free is not None:
        return PeriodicJacobi.free(args.free), None
    if args.a is not None:
        if args.b is None or len(args.a) != len(args.b):
            raise UsageError("--a and --b must have the same length")
        return PeriodicJacobi(np.array(args.a), np.array(args.b)), None
    if args.random is not None:
        fam = build_ec_family(1.0, (args.random,), R=args.R, seed=args.seed)
        return fam.stages[0], fam
    fam = load_family(args.family)
    try:
        return fam.stages[args.stage], fam
    except IndexError as exc:
        raise UsageError(f"--stage {args.stage} out of range for {len(fam.stages)} stages") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_bands(args, checks: Checks) -> None:
    J, _ = operator_from(args)
    grid = ThetaGrid(args.grid or 1024, punctured=True)
    if args.lam_samples:
        lo, hi = args.lam_min, args.lam_max
        if lo is None or hi is None:
            e_lo, e_hi = spectral_hull(J)
            pad = 0.25 * (e_hi - e_lo)
            lo, hi = e_lo - pad if lo is None else lo, e_hi + pad if hi is None else hi
        lam = np.linspace(lo, hi, args.lam_samples)
        d, dp = discriminant_with_derivative(J, lam)
        rows = list(zip(lam, d, dp))
        write_atomic(args.out, render(("lambda", "discriminant", "derivative"), rows, args.format))
    else:
        write_atomic(args.out, render(FIBER_DUMP_COLUMNS, fiber_dump_rows(J, grid), args.format))
    bands = band_curves(J, grid)
    audit = bands.audit()
    total = sum(audit.values())
    checks.report("band-audit", total == 0, -total,
                  " ".join(f"{k}={v}" for k, v in audit.items()))
    c1 = last_constant(J, grid)
    viol = c1.audit(bands)
    checks.report("last-bound", viol == 0, -viol, f"c1_emp={fmt(c1.c1_emp)}")


def cmd_badset(args, checks: Checks) -> None:
    J, fam = operator_from(args)
    m = args.grid or DEFAULT_SEED_M
    rows = []
    n = args.stage % len(fam.stages) if fam is not None else 0
    for eps in args.eps:
        est = bad_set_measure(J, eps, m=m, tol=args.tol)
        for a, b in est.intervals:
            rows.append((eps, a, b))
        lem = check_lemma_2_5(J, eps, m=m)
        checks.report(f"lemma-bound eps={fmt(eps)}", lem.ok, lem.margin,
                      f"measure={fmt(lem.measured)} bound={fmt(lem.bound)}")
        if fam is not None and n >= 1 and fam.gamma(n) < eps:
            thm = check_theorem_3_2(fam, n, eps, m=m)
            checks.report(f"stage-bound eps={fmt(eps)}", thm.ok, thm.margin,
                          f"bound={fmt(thm.bound)} containment_violations={thm.containment_violations}")
    write_atomic(args.out, render(("epsilon", "interval_lo", "interval_hi"), rows, args.format))


def cmd_transport(args, checks: Checks) -> None:
    J, _ = operator_from(args)
    phi = WindowedState.delta(0, 2)
    times = np.geomspace(args.tmin, args.tmax, args.points)
    series = transport_exponents(J, phi, args.p, times, method=args.method)
    wit = ballistic_witness(LimitPeriodicFamily((J,), eta=1.0), phi, times, m=args.grid, method=args.method)
    rows = list(zip(times, series.values, series.running_beta, wit.residuals))
    write_atomic(args.out, render(("t", "moment_p", "running_beta", "residual"), rows, args.format))
    print(f"INFO running_beta_final={fmt(series.last_running_beta)} "
          f"fit_beta={fmt(series.fit_beta)}")
    if args.expect_beta is not None:
        dev = abs(series.fit_beta - args.expect_beta)
        checks.report("fit-beta", dev <= args.beta_tol, args.beta_tol - dev)
    for k in wit.kernel:
        checks.report(f"kernel q={k.q_n}", k.ok, k.norm - k.lower)


def _family_for_q(args) -> LimitPeriodicFamily:
    if args.family:
        return load_family(args.family)
    return build_ec_family(args.eta, args.q, R=args.R, seed=args.seed)


def cmd_qcheck(args, checks: Checks) -> None:
    fam = _family_for_q(args)
    phi = WindowedState.delta(0, 2)
    m = args.grid or 8192
    c1 = max(last_constant(s).c1_emp for s in fam.stages)
    sched = make_schedule(c1, fam.eta, fam.periods)
    conv = q_convergence_experiment(fam, phi, sched, m=m)
    kern = kernel_check(fam, phi)
    rows = []
    for k in kern:
        c = next((r for r in conv if r.n == k.n), None)
        diff, bound = (c.diff_norm, c.paper_bound) if c else (math.nan, math.nan)
        rows.append((k.n, k.q_n, diff, bound, k.norm, k.lower))
    write_atomic(args.out, render(("n", "q_n", "diff_norm", "paper_bound", "kernel_lhs",
                                   "kernel_rhs"), rows, args.format))
    print(f"INFO c1={fmt(c1)} eta={fmt(fam.eta)} eta0={fmt(sched.eta0)}")
    for r in conv:
        if r.eligible:
            checks.report(f"q-convergence n={r.n}", r.ok, r.paper_bound - r.diff_norm,
                          f"ratio={fmt(r.ratio)}")
    for k in kern:
        checks.report(f"kernel n={k.n}", k.ok, k.norm - k.lower)
    if args.estimates:
        for st in sched.stages:
            coarse = next(s for s in fam.stages if s.q == st.q_n)
            fine = next(s for s in fam.stages if s.q == st.q_next)
            e1 = estimate_I_II_check(coarse, None, st.t, st.eps, "I", c1=c1, R=fam.R,
                                     normalization=args.normalization, m=m)
            e2 = estimate_I_II_check(fine, coarse, st.t, st.eps_tilde, "II", eta=fam.eta, c1=c1,
                                     R=fam.R, normalization=args.normalization, m=m)
            for e in (e1, e2):
                checks.report(f"estimate-{e.variant} n={st.n} nu={args.normalization}", e.ok,
                              e.margin, f"lhs={fmt(e.lhs)} rhs={fmt(e.rhs)}")


def cmd_schedule(args, checks: Checks) -> None:
    sched = make_schedule(args.c1, args.eta, args.q, eta0=args.eta0)
    lo, hi = sched.window
    print(f"window ({short(lo)}, {short(hi)}) eta0={short(sched.eta0)}")
    rows = [(s.n, s.q_n, s.q_next, s.t, s.eps, s.eps_tilde, s.gamma_next) for s in sched.stages]
    write_atomic(args.out, render(("n", "q_n", "q_next", "t", "eps", "eps_tilde", "gamma_next"),
                                  rows, args.format))
    for s in sched.stages:
        checks.report(f"gamma-check n={s.n}", s.log_gamma_next < s.log_eps_tilde,
                      s.log_eps_tilde - s.log_gamma_next, "(log scale)")


def cmd_ec_build(args, checks: Checks) -> None:
    fam = build_ec_family(args.eta, args.q, R=args.R, seed=args.seed, decay_coeff=args.decay)
    write_atomic(args.out, family_to_json(fam) + "\n")
    for n, cert in enumerate(fam.ec_certificates(), start=1):
        checks.report(f"ec-certificate n={n}", cert <= fam.decay_coeff, fam.decay_coeff - cert)


# ---------------------------------------------------------------------------
# parser and config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpjacobi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bands", help="fiber eigenvalues, slopes and gaps; discriminant trace")
    add_common(p)
    add_operator_source(p)
    p.add_argument("--lam-min", type=float)
    p.add_argument("--lam-max", type=float)
    p.add_argument("--lam-samples", type=int, default=0,
                   help="sample the discriminant at this many lambdas instead of dumping bands")
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("badset", help="bad-set intervals and measure bounds")
    add_common(p)
    add_operator_source(p)
    p.add_argument("--eps", type=float_list, default=[1e-2], help="comma-separated epsilons")
    p.add_argument("--tol", type=float, default=DEFAULT_BOUNDARY_TOL)
    p.set_defaults(func=cmd_badset)

    p = sub.add_parser("transport", help="moments, running exponents and ballistic residuals")
    add_common(p)
    add_operator_source(p)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--tmin", type=float, default=1.5)
    p.add_argument("--tmax", type=float, default=50.0)
    p.add_argument("--points", type=positive_int, default=40)
    p.add_argument("--method", choices=("fiber", "truncated"), default="fiber")
    p.add_argument("--expect-beta", type=float)
    p.add_argument("--beta-tol", type=float, default=0.03)
    p.set_defaults(func=cmd_transport)

    for name, func, helptext in (("qcheck", cmd_qcheck, "Q convergence and kernel checks"),
                                 ("ec-build", cmd_ec_build, "build and save an EC family")):
        p = sub.add_parser(name, help=helptext)
        add_common(p)
        p.add_argument("--eta", type=float, default=2.0)
        p.add_argument("--q", type=int_list, default=[4, 8])
        p.add_argument("--R", type=float, default=2.0)
        if name == "qcheck":
            p.add_argument("--family")
            p.add_argument("--estimates", action="store_true",
                           help="also check Estimates I/II at the scheduled times")
            p.add_argument("--normalization", choices=("paper", "velocity"), default="paper")
        else:
            p.add_argument("--decay", type=float, default=0.5)
        p.set_defaults(func=func)

    p = sub.add_parser("schedule", help="eta0 window and per-stage t, eps, eps~")
    add_common(p)
    p.add_argument("--c1", type=float, required=False)
    p.add_argument("--eta", type=float, required=False)
    p.add_argument("--eta0", type=float)
    p.add_argument("--q", type=int_list, default=[4, 8])
    p.set_defaults(func=cmd_schedule)
    return parser


def _config_line(path: str, key: str) -> int:
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.split("=", 1)[0].strip().replace("-", "_") == key:
            return i
    return 0


def apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    path = args.config
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise UsageError(f"config {path}: {exc}") from exc
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for section in ("common", args.command):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in actions or dest in ("config", "help"):
                raise UsageError(f"config {path} line {_config_line(path, dest)}: "
                                 f"unknown field {key!r} for {args.command}")
            act = actions[dest]
            try:
                if isinstance(act, argparse._StoreTrueAction):
                    value = cp.getboolean(section, key)
                else:
                    value = act.type(raw) if act.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config {path} line {_config_line(path, dest)}: "
                                 f"field {key!r}: {exc}") from exc
            defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = apply_config(parser, argv)
        if args.command == "schedule" and (args.c1 is None or args.eta is None):
            raise UsageError("schedule needs --c1 and --eta")
        checks = Checks()
        args.func(args, checks)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PreconditionError as exc:
        print(f"FAIL precondition: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (NumericalError, WindowOverflowError, WindowTooSmallError, AliasingError,
            OverflowError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_FAIL if checks.failed else EXIT_OK
