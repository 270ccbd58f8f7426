"""``cisjac`` command line.

Exit codes: 0 success, 1 validation or tolerance failure, 2 parse/usage
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import cistools
from .canonical import check_lift_identities, tangent_lift
from .dsl import (
    Coord,
    DomainError,
    ParseError,
    SystemDef,
    compile_exprs,
    parse_system,
    simplify,
    symbol_names,
)
from .flow import (
    IntegrationError,
    IntegratorConfig,
    SeparabilityError,
    integrate,
    rhs_base,
    rhs_tangent,
)
from .modelzoo import builtin

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_NUMERIC = 0, 1, 2, 3

SYSTEM_HELP = """system file (.cis) or builtin shorthand:
  osc:m=2,w=1,1   uncoupled oscillators (m modes, frequencies w)
  kepler:mu=1     planar Kepler problem
  quartic         p^2/2 + q^4/4"""


class UsageError(Exception):
    pass


def load_system(spec: str) -> tuple[SystemDef, tuple]:
    """Return the system and its sampling exclusions (empty for files)."""
    path = Path(spec)
    if path.is_file():
        return parse_system(path.read_text(encoding="utf-8")), ()
    try:
        b = builtin(spec)
    except ValueError as exc:
        raise UsageError(f"{spec!r} is neither a readable file nor a builtin: {exc}") from None
    return b.system, b.exclusions


def parse_vector(text: str, n: int, what: str) -> np.ndarray:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what}: expected {n} values, got {len(vals)}")
    return np.array(vals)


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("CISJAC_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"CISJAC_SEED must be an integer, got {env!r}") from None
    return 0


def fmt(x: float) -> str:
    return repr(float(x))


@contextmanager
def output(path: str | None):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def write_csv(fh, header: list[str], rows) -> None:
    fh.write(",".join(header) + "\n")
    for row in rows:
        fh.write(",".join(fmt(v) for v in row) + "\n")


def integrator_config(args, steps: int) -> IntegratorConfig:
    return IntegratorConfig(args.integrator, args.h, steps, args.fp_tol, args.fp_max_iter)


def steps_for(T: float, h: float) -> int:
    n = int(round(T / h))
    if n < 1:
        raise UsageError("T must cover at least one step")
    return n


# ---------------------------------------------------------------------------
# commands


def cmd_check(args) -> int:
    system, exclusions = load_system(args.system)
    seed = resolve_seed(args.seed)
    rep = cistools.validate_cis(system, args.samples, seed, args.box, exclusions)
    out = sys.stdout
    out.write(f"samples            {rep.n_samples} (seed {rep.seed}, skipped {rep.n_skipped})\n")
    out.write(f"max |{{H,F_k}}|      {rep.max_h_bracket:.3e}\n")
    out.write(f"max |{{F_k,F_r}}|    {rep.max_f_bracket:.3e}\n")
    out.write(f"min sigma ratio    {rep.min_independence:.3e}\n")
    failures = rep.failures(args.bracket_tol, args.ratio_tol)
    for f in failures:
        out.write(f"FAIL: {f}\n")
    out.write("PASS\n" if not failures else "")
    return EXIT_OK if not failures else EXIT_FAIL


def _trajectory_columns(system: SystemDef, tangent: bool):
    m = system.m
    cols = ["t"] + symbol_names(system.tangent_kinds if tangent else system.kinds, m)
    cols += [f"F{k}" for k in range(1, m + 1)]
    if tangent:
        cols += [f"TF{k}" for k in range(1, m + 1)]
    return cols


def _trajectory_rows(system: SystemDef, states: np.ndarray, h: float, every: int, tangent: bool):
    m = system.m
    F = compile_exprs(system.F, symbol_names(system.kinds, m), system.params)
    TF = None
    if tangent:
        TF = compile_exprs([simplify(tangent_lift(f, m, system.kinds)) for f in system.F],
                           symbol_names(system.tangent_kinds, m), system.params)
    for i in range(0, len(states), every):
        x = states[i]
        row = [i * h, *x, *F(x[: 2 * m])]
        if TF is not None:
            row += TF(x)
        yield row


def _simulate(args, tangent: bool) -> int:
    system, _ = load_system(args.system)
    m = system.m
    x0 = parse_vector(args.x0, 2 * m, "--x0")
    if tangent:
        x0 = np.concatenate([x0, parse_vector(args.v0, 2 * m, "--v0")])
    if args.record_every < 1:
        raise UsageError("--record-every must be at least 1")
    if args.steps < 0:
        raise UsageError("--steps must be non-negative")
    field = rhs_tangent(system) if tangent else rhs_base(system)
    status = EXIT_OK
    if args.steps == 0:
        states = x0[None, :]
    else:
        try:
            states = integrate(field, x0, integrator_config(args, args.steps)).states
        except IntegrationError as exc:
            states = exc.trajectory.states
            sys.stderr.write(f"integration failed at row {exc.index}: {exc}\n")
            status = EXIT_NUMERIC
    with output(args.out) as fh:
        write_csv(fh, _trajectory_columns(system, tangent),
                  _trajectory_rows(system, states, args.h, args.record_every, tangent))
    return status


def cmd_simulate(args) -> int:
    return _simulate(args, tangent=False)


def cmd_tangent(args) -> int:
    return _simulate(args, tangent=True)


def cmd_brackets(args) -> int:
    system, exclusions = load_system(args.system)
    if system.chart != "darboux":
        raise UsageError("brackets needs a Darboux-chart system")
    m = system.m
    seed = resolve_seed(args.seed)
    points = cistools.random_tangent_points(m, args.samples, seed, args.box, exclusions)
    funcs = [("H", system.H)] + [(f"F{k}", f) for k, f in enumerate(system.F, start=1)]
    funcs += [(c, Coord(c[0], int(c[1:]))) for c in symbol_names(system.kinds, m)]
    worst = [0.0, 0.0, 0.0]
    out = sys.stdout
    out.write(f"{args.samples} tangent points, seed {seed}\n")
    out.write("pair            {f,g}(x_0)     pullback   mixed      lifted\n")
    for (nf, f), (ng, g) in itertools.combinations(funcs, 2):
        r = check_lift_identities(f, g, points, m, system.params)
        worst = [max(w, v) for w, v in zip(worst, r[:3])]
        out.write(f"{nf + ',' + ng:<14}  {r.bracket:+.6e}  {r.pullback:.3e}  {r.mixed:.3e}  {r.lifted:.3e}\n")
    names = ("{f,g}_T = 0", "{lift f,g}_T = {f,lift g}_T = {f,g}", "{lift f,lift g}_T = lift {f,g}")
    for name, w in zip(names, worst):
        out.write(f"worst {name}: {w:.3e}\n")
    ok = max(worst) < args.tol
    out.write("PASS\n" if ok else f"FAIL: worst residual {max(worst):.3e} >= {args.tol:g}\n")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_reconstruct(args) -> int:
    system, _ = load_system(args.system)
    m = system.m
    x0 = parse_vector(args.x0, 2 * m, "--x0")
    x0p = parse_vector(args.x0p, 2 * m, "--x0p")
    cfg = integrator_config(args, steps_for(args.T, args.h))
    try:
        rec = cistools.reconstruct_jacobi(system, x0, x0p, args.rank_tol)
    except cistools.RankDeficiencyError as exc:
        sys.stderr.write(f"FAIL: {exc}\n")
        return EXIT_FAIL
    res = cistools.verify_persistence(system, x0, x0p, rec.v0, cfg)
    ok = res.persistence_residual < args.tol
    report = [
        f"v0               {' '.join(fmt(v) for v in rec.v0)}",
        f"delta F          {' '.join(fmt(v) for v in rec.delta_f)}",
        f"sigma ratio      {rec.sigma_ratio:.6e}",
        f"initial residual {rec.initial_residual:.3e}",
        f"R(T={args.T:g})        {res.persistence_residual:.3e}",
        f"lifted drift     {' '.join(f'{v:.3e}' for v in res.lifted_drift)}",
        f"offset drift     {' '.join(f'{v:.3e}' for v in res.offset_drift)}",
        "PASS" if ok else f"FAIL: R(T) >= {args.tol:g}",
    ]
    header = ["t"] + [f"R{k}" for k in range(1, m + 1)]
    rows = ([t, *r] for t, r in list(zip(res.times, res.residuals))[:: args.record_every])
    if args.format == "csv" and args.out is None:
        sys.stderr.write("\n".join(report) + "\n")
        write_csv(sys.stdout, header, rows)
    else:
        sys.stdout.write("\n".join(report) + "\n")
        if args.out is not None:
            with output(args.out) as fh:
                write_csv(fh, header, rows)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_diverge(args) -> int:
    system, _ = load_system(args.system)
    m = system.m
    x0 = parse_vector(args.x0, 2 * m, "--x0")
    if args.direction is None:
        direction = np.zeros(2 * m)
        direction[0] = 1.0
    else:
        direction = parse_vector(args.direction, 2 * m, "--direction")
    cfg = integrator_config(args, steps_for(args.T, args.h))
    try:
        res = cistools.divergence_experiment(system, x0, args.eps, direction, cfg)
    except cistools.RankDeficiencyError as exc:
        sys.stderr.write(f"FAIL: {exc}\n")
        return EXIT_FAIL
    rows = ([t, d, r] for t, d, r in list(zip(res.times, res.D, res.R))[:: args.record_every])
    ok = res.max_residual < args.tol
    summary = f"growth factor {res.growth_factor:.6e}  max R {res.max_residual:.3e}"
    with output(args.out) as fh:
        write_csv(fh, ["t", "D", "R"], rows)
    (sys.stderr if args.out is None else sys.stdout).write(summary + "\n")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing


def _add_system(p):
    p.add_argument("--system", required=True, help=SYSTEM_HELP)


def _add_integrator(p, h=0.01, scheme="midpoint"):
    p.add_argument("--integrator", choices=("midpoint", "verlet", "rk4"), default=scheme)
    p.add_argument("--h", type=float, default=h, help="step size (default %(default)s)")
    p.add_argument("--fp-tol", type=float, default=1e-13, help="midpoint fixed-point tolerance")
    p.add_argument("--fp-max-iter", type=int, default=50, help="midpoint fixed-point iteration cap")
    p.add_argument("--record-every", type=int, default=1, metavar="N", help="keep every N-th row")
    p.add_argument("--out", help="write CSV here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cisjac",
        description="Tangent lifts and Jacobi fields of completely integrable Hamiltonian systems.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=SYSTEM_HELP + "\n\nSeeds default to $CISJAC_SEED, then 0.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    raw = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("check", help="involution and independence of the first integrals", formatter_class=raw)
    _add_system(p)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--box", type=float, default=2.0, help="sample in [-box, box]^2m")
    p.add_argument("--bracket-tol", type=float, default=1e-8)
    p.add_argument("--ratio-tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_check)

    for name, func, helptext in (("simulate", cmd_simulate, "integrate the base Hamilton equations"),
                                 ("tangent", cmd_tangent, "integrate base and Jacobi field together")):
        p = sub.add_parser(name, help=helptext, formatter_class=raw)
        _add_system(p)
        p.add_argument("--x0", required=True, help="q1,..,qm,p1,..,pm")
        if name == "tangent":
            p.add_argument("--v0", required=True, help="dq1,..,dqm,dp1,..,dpm")
        p.add_argument("--steps", type=int, default=1000)
        _add_integrator(p)
        p.set_defaults(func=func)

    p = sub.add_parser("brackets", help="check the lift/bracket identities at random tangent points",
                       formatter_class=raw)
    _add_system(p)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--box", type=float, default=2.0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_brackets)

    p = sub.add_parser("reconstruct", help="Jacobi field reproducing integral offsets, and its persistence",
                       formatter_class=raw)
    _add_system(p)
    p.add_argument("--x0", required=True)
    p.add_argument("--x0p", required=True, help="initial state of the neighbouring solution")
    p.add_argument("--T", type=float, default=100.0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--rank-tol", type=float, default=1e-8)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    _add_integrator(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("diverge", help="distance of s' from s + v versus the offset residual",
                       formatter_class=raw)
    _add_system(p)
    p.add_argument("--x0", required=True)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--direction", help="perturbation direction (default: first coordinate)")
    p.add_argument("--T", type=float, default=200.0)
    p.add_argument("--tol", type=float, default=1e-5, help="fail when max R reaches this")
    _add_integrator(p)
    p.set_defaults(func=cmd_diverge)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        sys.stderr.write(f"parse error: {exc}\n")
        return EXIT_PARSE
    except SeparabilityError as exc:
        sys.stderr.write(f"FAIL: {exc}\n")
        return EXIT_FAIL
    except (UsageError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    except (DomainError, IntegrationError, ArithmeticError) as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
