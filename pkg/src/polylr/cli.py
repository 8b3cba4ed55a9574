"""Command-line front end.

Every subcommand writes machine-readable files into ``--out`` and a short
summary to stdout. Exit codes: 0 optimal or passed, 2 infeasible, 1 usage,
data or numerical error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import SimulationConfig, simulate_sampling_distribution
from .density_bajd import (
    SCALINGS,
    BajdParams,
    ParameterError,
    bajd_conditional_moments,
    expand_density,
    mc_moment_check,
    mc_transition_oracle,
    write_plot_csv,
)
from .moments import AssumptionError, Explicit, InvalidWeightError, MomentVector, StdGaussian
from .plr import ConstraintSpec, InfeasibleError, PLRModel, SolverError, build_problem, fit
from .polybasis import DegreeError, Polynomial, build_basis
from .pricing_kernel import (
    DOMAINS,
    ConsistencyError,
    PanelError,
    ReturnsPanel,
    build_hj_problem,
    solve_kernel,
)
from .solver import ConicProblem, Solution, Status
from .sos_cones import RealLine, UnsupportedDegreeError, certificate_check, domain_from_json

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2
CERT_TOL = 1e-8


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# -- output ------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}" if math.isfinite(v) else "null"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    return json.dumps(str(obj))


def _write_json(path: Path, obj) -> None:
    path.write_text(dumps(obj) + "\n")


def _outdir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_json(path: str, what: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {what} file {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: "
                         f"{exc.msg}") from None


def _write_model(out: Path, model: PLRModel) -> None:
    _write_json(out / "model.json", model.to_json())
    p = build_problem(model.H, model.constraints, model.domain)
    _write_json(out / "problem.json", p.to_json())
    _write_json(out / "solution.json", model.solution.to_json())


# -- subcommands -------------------------------------------------------------


def run_tilt(args) -> int:
    out = _outdir(args.out)
    b = build_basis(1, 2)
    cons = ConstraintSpec(((Polynomial.constant(b), 1.0),
                           (Polynomial.from_terms(b, {1: 1.0}), args.mu)))
    try:
        model = fit(StdGaussian(), cons, 2, RealLine())
    except InfeasibleError:
        print(f"infeasible: a non-negative quadratic tilt of the standard Gaussian has "
              f"mean in [-1, 1], got mu = {args.mu}")
        return EXIT_INFEASIBLE
    _write_model(out, model)
    t = np.linspace(-5, 5, 401)
    dens = model.xi(t) * StdGaussian().density(t)
    with open(out / "density.csv", "w") as fh:
        fh.write("t,xi,density\n")
        for row in zip(t, model.xi(t), dens):
            fh.write(",".join(_fmt(float(v)) for v in row) + "\n")
    x = model.xi.coeffs
    print(f"status Optimal  xi(t) = {x[0]:.12g} + {x[1]:.12g} t + {x[2]:.12g} t^2")
    print(f"gap {model.solution.gap:.3e}  correction norm {model.correction_norm:.6g}")
    return EXIT_OK


def run_fit(args) -> int:
    out = _outdir(args.out)
    try:
        mom = MomentVector.from_json(_load_json(args.moments, "moments"))
        cons = ConstraintSpec.from_json(_load_json(args.constraints, "constraints"))
        dom = domain_from_json(_load_json(args.domain, "domain"))
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"schema error: {exc}") from None
    try:
        model = fit(Explicit(mom), cons, args.degree, dom)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    _write_model(out, model)
    print(f"status Optimal  degree {args.degree}  objective {model.solution.objective:.12g}")
    print(f"gap {model.solution.gap:.3e}  correction norm {model.correction_norm:.6g}")
    print("coefficients " + " ".join(f"{v:.12g}" for v in model.xi.coeffs))
    return EXIT_OK


def run_bajd(args) -> int:
    try:
        p = BajdParams(args.kappa, args.theta, args.sigma, args.lam, args.nu, args.y0)
    except ParameterError as exc:
        raise UsageError(f"invalid parameters: {exc}") from None
    out = _outdir(args.out)
    try:
        exp = expand_density(p, args.delta, args.m, args.n, scaling=args.scaling)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    samples = mc_transition_oracle(p, args.delta, args.paths, seed=args.seed)
    write_plot_csv(out / "density.csv", exp, samples, upper=args.upper)
    mc = mc_moment_check(samples, bajd_conditional_moments(p, args.delta, args.m))
    summary = {
        "params": p.to_json(), "delta": args.delta, "m": args.m, "n": args.n,
        "scaling": args.scaling, "scale": exp.scale, "q": exp.q,
        "fms_grid_min": exp.grid_min("fms", args.upper),
        "plr_grid_min": exp.grid_min("plr", args.upper),
        "plr_grid_min_full": exp.grid_min("plr"),
        "moment_residuals": exp.moment_residuals().tolist(),
        "plr_mass": exp.total_mass(),
        "plr_norm": exp.plr_norm, "fms_norm": exp.fms_norm,
        "correction_norm": exp.plr.correction_norm,
        "gap": exp.plr.solution.gap,
        "moments": exp.moments.values.tolist(),
        "mc": {"paths": args.paths, "seed": args.seed, "moments": mc},
    }
    _write_json(out / "summary.json", summary)
    _write_json(out / "model.json", exp.plr.to_json())
    print(f"delta {args.delta:.6g}  q {exp.q:.6g}  scale {exp.scale:.6g}")
    print(f"fms grid min {summary['fms_grid_min']:.6g}  plr grid min {summary['plr_grid_min']:.3e}")
    print(f"correction norm {summary['correction_norm']:.6g}  mass {summary['plr_mass']:.10g}")
    return EXIT_OK


def run_kernel(args) -> int:
    out = _outdir(args.out)
    try:
        panel = ReturnsPanel.from_csv(args.returns)
    except OSError as exc:
        raise UsageError(f"cannot read {args.returns}: {exc.strerror}") from None
    try:
        hj = build_hj_problem(panel, args.degree, args.domain)
    except AssumptionError as exc:
        raise UsageError(f"Assumption 1 fails ({exc})") from None
    try:
        res = solve_kernel(hj)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    _write_json(out / "kernel.json", res.to_json())
    print(f"assets {panel.d}  periods {panel.k}  degree {args.degree}")
    print(f"hj bound linear {res.hj_bound_linear:.12g}  plr {res.hj_bound_plr:.12g}")
    print(f"max pricing residual {np.abs(res.pricing_residuals).max():.3e}")
    return EXIT_OK


def run_asym(args) -> int:
    try:
        cfg = SimulationConfig(args.mu, args.k, args.reps, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _outdir(args.out)
    res = simulate_sampling_distribution(cfg)
    res.write(out / "errors.csv", out / "summary.json")
    s = res.summary()
    print(f"mu {cfg.mu}  k {cfg.k}  reps {cfg.reps}  optimal {s['n_optimal']}  "
          f"infeasible {s['n_infeasible']}")
    for name, st in s["coefficients"].items():
        print(f"{name}: mean {st['mean']:+.4e}  sd {st['sd']:.4e}  skew {st['skewness']:+.3f}")
    return EXIT_OK


def certify(problem: ConicProblem, sol: Solution, tol: float = CERT_TOL) -> dict:
    """Named checks of a stored solution against its problem."""
    checks = {}
    if sol.x.size != problem.size:
        return {"shape": (False, f"x has {sol.x.size} entries, problem has {problem.size}")}
    Hx = problem.H @ sol.x
    eq = float(np.max(np.abs(problem.S @ Hx - problem.c), initial=0.0))
    checks["primal_eq"] = (eq <= tol * (1 + np.abs(problem.c).max(initial=0)), eq)
    ineq = float(np.max(problem.U @ Hx - problem.d, initial=0.0))
    checks["primal_ineq"] = (ineq <= tol * (1 + np.abs(problem.d).max(initial=0)), ineq)
    if problem.maps is not None:
        try:
            rep = certificate_check(sol.x, sol.grams, problem.maps, psd_tol=1e-9, match_tol=tol)
        except ValueError as exc:
            checks["grams"] = (False, str(exc))
        else:
            checks["cone_match"] = (rep.match_ok, rep.match_residual)
            checks["gram_psd"] = (rep.psd_ok, rep.min_eigenvalue)
    elif problem.support is not None:
        vmin = float((problem.support @ sol.x).min())
        checks["support_nonneg"] = (vmin >= -tol, vmin)
    return checks


def run_certify(args) -> int:
    try:
        problem = ConicProblem.from_json(_load_json(args.problem, "problem"))
        sol = Solution.from_json(_load_json(args.solution, "solution"))
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"schema error: {exc}") from None
    checks = certify(problem, sol)
    ok = all(c[0] for c in checks.values())
    for name, (passed, value) in checks.items():
        shown = f"{value:.3e}" if isinstance(value, float) else value
        print(f"{'pass' if passed else 'FAIL'}  {name}  {shown}")
    print("certificate valid" if ok else "certificate invalid")
    return EXIT_OK if ok else EXIT_ERROR


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="plr", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("tilt", help="quadratic tilt of the standard Gaussian to mean mu")
    t.add_argument("--mu", type=float, required=True, help="target mean")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=run_tilt)

    f = sub.add_parser("fit", help="general PLR fit from moment, constraint and domain files")
    f.add_argument("--moments", required=True, help="weight moments JSON {d, order, values}")
    f.add_argument("--constraints", required=True,
                   help="constraints JSON {equalities: [{f, c}], inequalities: [{g, d}]}")
    f.add_argument("--domain", required=True, help="domain JSON {type, a, b, d}")
    f.add_argument("--degree", type=int, required=True, help="polynomial degree n")
    f.add_argument("--out", required=True, help="output directory")
    f.set_defaults(func=run_fit)

    b = sub.add_parser("bajd", help="PLR and FMS expansions of the BAJD transition density")
    d = BajdParams()
    b.add_argument("--kappa", type=float, default=d.kappa, help="mean-reversion rate")
    b.add_argument("--theta", type=float, default=d.theta, help="long-run mean")
    b.add_argument("--sigma", type=float, default=d.sigma, help="diffusion volatility")
    b.add_argument("--lambda", dest="lam", type=float, default=d.lam, help="jump intensity")
    b.add_argument("--nu", type=float, default=d.nu, help="mean jump size")
    b.add_argument("--y0", type=float, default=d.y0, help="initial state")
    b.add_argument("--delta", type=float, default=0.25, help="time step (years)")
    b.add_argument("--m", type=int, default=5, help="number of matched moments beyond mass")
    b.add_argument("--n", type=int, default=8, help="polynomial degree")
    b.add_argument("--scaling", choices=SCALINGS, default="matched",
                   help="variable scaling for the Gamma weight")
    b.add_argument("--paths", type=int, default=200_000, help="Monte Carlo paths")
    b.add_argument("--seed", type=int, default=0, help="Monte Carlo seed")
    b.add_argument("--upper", type=float, default=0.3, help="upper end of the plot grid")
    b.add_argument("--out", required=True, help="output directory")
    b.set_defaults(func=run_bajd)

    k = sub.add_parser("kernel", help="non-negative pricing kernel from excess returns")
    k.add_argument("--returns", required=True, help="CSV with a header of asset names")
    k.add_argument("--degree", type=int, default=2, help="polynomial degree n")
    k.add_argument("--domain", choices=DOMAINS, default="support",
                   help="where the kernel must be non-negative")
    k.add_argument("--out", required=True, help="output directory")
    k.set_defaults(func=run_kernel)

    a = sub.add_parser("asym", help="sampling distribution of sample-moment tilt fits")
    a.add_argument("--mu", type=float, default=0.6, help="target mean")
    a.add_argument("--k", type=int, default=100, help="sample size per replication")
    a.add_argument("--reps", type=int, default=10_000, help="replications")
    a.add_argument("--seed", type=int, default=0, help="seed")
    a.add_argument("--out", required=True, help="output directory")
    a.set_defaults(func=run_asym)

    c = sub.add_parser("certify", help="check a stored solution against its problem")
    c.add_argument("--solution", required=True, help="solution JSON")
    c.add_argument("--problem", required=True, help="problem JSON")
    c.set_defaults(func=run_certify)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits on --help and on usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (AssumptionError, PanelError, ParameterError, InvalidWeightError, DegreeError,
            UnsupportedDegreeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (SolverError, ConsistencyError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
