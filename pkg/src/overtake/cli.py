"""``overtake`` command-line driver.

Exit codes: 0 success, 1 input error, 2 numerical or validation failure,
3 verdict ``refuted``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .adjoint import RegressionBasis, adjoint_diagnostics, resolve_solver, solve_adjoint
from .certify import HorizonSweep, run_certification
from .config import RunConfig, load_config, parse_number, parse_policy
from .errors import InputError, ModelError, NumericalError, PreconditionError
from .io import render_summary, write_adjoint, write_ensemble, write_gamma_series, write_report
from .model import check_concavity, validate_model
from .paths import TimeGrid, make_lattice, needle, simulate_forward
from .scenarios import build_example1, build_example2, default_challengers

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_REFUTED = 0, 1, 2, 3

log = logging.getLogger("overtake")


@dataclass
class Problem:
    config: RunConfig
    model: object
    candidate: object
    challengers: dict
    oracle: object


def build_problem(cfg):
    params = cfg.scenario_param_object()
    if cfg.scenario == "example1":
        model, default_cand, oracle = build_example1(params)
    else:
        model, default_cand, oracle = build_example2(params, t_max=max(cfg.horizons))
    if cfg.candidate == "default":
        candidate = default_cand
    else:
        candidate = parse_policy(cfg.candidate, default_cand)
    specs = list(cfg.challengers) or default_challengers(cfg.scenario, model, candidate)
    challengers = {spec: parse_policy(spec, candidate) for spec in specs}
    for spec in cfg.needles:
        t0, width, height = (parse_number(v, spec) for v in spec.split(":"))
        label = f"needle:{spec}"
        challengers[label] = needle(candidate, t0, width, height, label=label)
    return Problem(cfg, model, candidate, challengers, oracle)


def _config_from_args(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {
        "scenario": args.scenario,
        "seed": args.seed,
        "candidate": args.candidate,
        "workers": args.workers,
        "n_paths": args.n_paths,
        "solver": args.solver,
        "basis_degree": args.basis_degree,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.dt is not None:
        cfg.dt = parse_number(args.dt, "--dt")
    if args.horizons is not None:
        cfg.horizons = tuple(parse_number(h, "--horizons") for h in args.horizons.split(","))
    if args.challengers is not None:
        cfg.challengers = tuple(s.strip() for s in args.challengers.split(";") if s.strip())
    if args.out is not None:
        cfg.output_dir = args.out
    if args.scenario is not None and args.config is None:
        cfg.scenario_params = {}
    cfg.validate()
    if cfg.input_lines:
        # the echo records what actually ran: file lines, with flag overrides swapped in
        changed = _overridden(args)
        kept = tuple(line for line in cfg.input_lines if line.split(" = ", 1)[0] not in changed)
        cfg.input_lines = kept + tuple(_override_lines(cfg, changed))
    return cfg


def _overridden(args):
    names = {"scenario": args.scenario, "seed": args.seed, "candidate": args.candidate, "workers": args.workers,
             "n_paths": args.n_paths, "solver": args.solver, "basis_degree": args.basis_degree, "dt": args.dt,
             "horizons": args.horizons, "challengers": args.challengers, "output_dir": args.out}
    return {k for k, v in names.items() if v is not None}


def _override_lines(cfg, keys):
    echo = {line.split(" = ", 1)[0]: line for line in cfg.echo()}
    for key in sorted(keys):
        if key in echo:
            yield echo[key]
        elif key == "output_dir":
            yield f"output_dir = {cfg.output_dir}"


def _lattice(cfg, t_max=None):
    grid = TimeGrid.from_dt(cfg.dt, t_max or max(cfg.horizons))
    return make_lattice(cfg.seed, cfg.n_paths, grid, workers=cfg.workers)


def _checks(problem):
    cfg = problem.config
    val = validate_model(problem.model, sample_budget=cfg.validation_samples, rtol=cfg.tol_fd,
                         raise_on_failure=False)
    con = check_concavity(problem.model, sample_budget=cfg.concavity_samples, tol=cfg.tol_concavity)
    return val, con


def _print_checks(val, con):
    for line in val.summary_lines():
        print(line)
    for name, pts in sorted(val.failures.items()):
        print(f"  declared {name} disagrees with finite differences, e.g. at {pts}")
    for name, msg in sorted(val.linear_violations.items()):
        print(f"  {name} declared affine but {msg}")
    print(f"concavity over {con.n_samples} samples: {'pass' if con.passed else 'FAIL'} "
          f"(worst eigenvalue {con.worst_eigenvalue:.3e})")
    if not con.passed:
        print(f"  offending sample: {con.worst_sample}")
    print(f"  {con.note}")


# ---------------------------------------------------------------- commands


def cmd_validate(args):
    problem = build_problem(_config_from_args(args))
    val, con = _checks(problem)
    _print_checks(val, con)
    if not val.passed:
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_simulate(args):
    cfg = _config_from_args(args)
    problem = build_problem(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lattice = _lattice(cfg)
    ext = ".csv" if args.format == "csv" else ".ovtk"
    policies = {"candidate": problem.candidate}
    if args.all:
        policies.update(problem.challengers)
    for i, (name, policy) in enumerate(policies.items()):
        traj = simulate_forward(problem.model, policy, lattice, workers=cfg.workers)
        stem = "candidate" if name == "candidate" else f"challenger{i}"
        write_ensemble(traj.x, out / f"{stem}_x{ext}")
        write_ensemble(traj.u, out / f"{stem}_u{ext}")
        for ename, ens in traj.exo.items():
            write_ensemble(ens, out / f"{stem}_{ename}{ext}")
        print(f"{stem} ({policy.label}): {traj.n_paths} paths x {traj.grid.n_steps} steps, "
              f"clamped {traj.clamped}")
    return EXIT_OK


def cmd_adjoint(args):
    cfg = _config_from_args(args)
    problem = build_problem(cfg)
    out = Path(cfg.output_dir)
    lattice = _lattice(cfg)
    cand = simulate_forward(problem.model, problem.candidate, lattice, workers=cfg.workers)
    kind = resolve_solver(cfg.solver, problem.model, cand.x, cand.u, cand.exo)
    basis = RegressionBasis(cfg.basis_degree)
    horizons = [parse_number(args.horizon, "--horizon")] if args.horizon else list(cfg.horizons)
    status = EXIT_OK
    for T in horizons:
        # left quadrature keeps the saved adjoint consistent with the certificate pipeline
        sol = solve_adjoint(problem.model, cand.x, cand.u, lattice, T, kind, basis, cand.exo, quadrature="left")
        diag = adjoint_diagnostics(sol, lattice)
        path = write_adjoint(sol, diag, out)
        print(f"T={T:g} solver={sol.solver} p0_mean={sol.p.values[:, 0].mean():.6g} "
              f"flagged_steps={len(diag.flagged_steps)} -> {path}")
        if not diag.passed:
            status = EXIT_NUMERICAL
    return status


def _certify(cfg):
    problem = build_problem(cfg)
    val, con = _checks(problem)
    if not val.passed:
        _print_checks(val, con)
        return None, EXIT_NUMERICAL
    lattice = _lattice(cfg)
    report = run_certification(
        problem.model,
        problem.candidate,
        problem.challengers,
        HorizonSweep(cfg.horizons, cfg.dt),
        lattice,
        cfg.solver,
        RegressionBasis(cfg.basis_degree),
        workers=cfg.workers,
        validation=val,
        concavity=con,
    )
    return report, None


def cmd_certify(args):
    cfg = _config_from_args(args)
    report, code = _certify(cfg)
    if report is None:
        return code
    print(write_report(report, cfg.output_dir, config=cfg), end="")
    if report.verdict == "refuted":
        return EXIT_REFUTED
    return EXIT_NUMERICAL if report.failures else EXIT_OK


def cmd_sweep(args):
    cfg = _config_from_args(args)
    report, code = _certify(cfg)
    if report is None:
        return code
    path = write_gamma_series(report, cfg.output_dir)
    print(path.read_text(encoding="utf-8"), end="")
    return EXIT_NUMERICAL if report.failures else EXIT_OK


def cmd_report(args):
    src = args.from_dir or args.out
    if not src:
        raise InputError("report needs --from DIR")
    text = render_summary(src)
    if args.write:
        (Path(src) / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "validate": (cmd_validate, "check declared partials and concavity of the Hamiltonian"),
    "simulate": (cmd_simulate, "simulate forward paths and write ensembles"),
    "adjoint": (cmd_adjoint, "solve the adjoint equation along the candidate"),
    "certify": (cmd_certify, "run the full certificate and write a report"),
    "sweep": (cmd_sweep, "write only the gamma series over the horizon sweep"),
    "report": (cmd_report, "re-render a saved report"),
}


def _add_run_options(p):
    p.add_argument("--config", help="plain-text key = value run config")
    p.add_argument("--scenario", help="example1 or example2")
    p.add_argument("--seed", type=int)
    p.add_argument("--candidate", help="candidate control spec, e.g. const:0")
    p.add_argument("--challengers", help="';'-separated challenger specs")
    p.add_argument("--workers", type=int)
    p.add_argument("--n-paths", dest="n_paths", type=int)
    p.add_argument("--dt", help="time step, fractions allowed (1/64)")
    p.add_argument("--horizons", help="comma-separated horizons")
    p.add_argument("--solver", choices=("auto", "lsmc", "explicit"))
    p.add_argument("--basis-degree", dest="basis_degree", type=int)
    p.add_argument("--out", help="output directory")


def make_parser():
    parser = argparse.ArgumentParser(prog="overtake", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        if name == "report":
            p.add_argument("--from", dest="from_dir", help="report directory")
            p.add_argument("--out", help=argparse.SUPPRESS)
            p.add_argument("--write", action="store_true", help="overwrite summary.txt")
            continue
        _add_run_options(p)
        if name == "simulate":
            p.add_argument("--format", choices=("bin", "csv"), default="bin")
            p.add_argument("--all", action="store_true", help="also simulate the challengers")
        if name == "adjoint":
            p.add_argument("--horizon", help="single horizon instead of the sweep")
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command][0](args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, ModelError, PreconditionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MemoryError:
        print("numerical failure: out of memory; reduce n_paths or the horizon", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
