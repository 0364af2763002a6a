"""Command line: run, compare, sweep, loops, calibrate, verify.

Exit codes: 0 success, 1 usage error, 2 parse or validation error,
3 aborted simulation, 4 acceptance failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .analysis import DEFAULT_EPS, DEFAULT_THETA, AnalysisError, SweepAbort, compare_runs, sensitivity_sweep
from .calibration import CalibrationError, calibrate, load_calibration_config
from .engine import EULER, RK4, SimSpec, simulate
from .loops import find_feedback_loops
from .model import ModelError, OverrideSet, apply_overrides, check_model, compose
from .parser import ParseError, parse_model, parse_override_set
from .report import comparison_text, run_to_csv, svg_plot, to_csv

OK, USAGE, INVALID, ABORTED, VERIFY_FAILED = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: error: {message}", USAGE)


class _Help(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for required flags and unset optional paths."""

    def _get_help_string(self, action):
        if action.required or action.default in (None, ""):
            return action.help
        return super()._get_help_string(action)


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", USAGE) from exc


def load_model(path):
    try:
        model = parse_model(_read(path))
    except ParseError as exc:
        raise CliError(f"{path}:{exc.line}:{exc.column}: {exc.message}", INVALID) from exc
    try:
        check_model(model)
    except ModelError as exc:
        lines = [f"{path}: {d}" for d in exc.diagnostics] or [f"{path}: {exc}"]
        raise CliError("\n".join(lines), INVALID) from exc
    return model


def _resolve(name, model_path):
    """Override paths are taken relative to the working directory, falling back to the model's folder."""
    path = Path(name)
    if not path.exists() and not path.is_absolute() and model_path is not None:
        alt = Path(model_path).parent / name
        if alt.exists():
            return alt
    return path


def load_overrides(spec, model, model_path=None) -> OverrideSet:
    """Comma-separated override files, composed left to right."""
    sets = []
    for name in [p for p in (spec or "").split(",") if p.strip()]:
        path = _resolve(name.strip(), model_path)
        try:
            sets.append(parse_override_set(_read(path)))
        except ParseError as exc:
            raise CliError(f"{path}:{exc.line}:{exc.column}: {exc.message}", INVALID) from exc
    overrides = compose(*sets)
    try:
        apply_overrides(model, overrides)
    except ModelError as exc:
        raise CliError(f"{spec}: {exc}", INVALID) from exc
    return overrides


def _sim_spec(args) -> SimSpec:
    try:
        return SimSpec(args.t_from, args.t_to, args.dt, args.method, args.stride)
    except ValueError as exc:
        raise CliError(f"invalid time settings: {exc}", USAGE) from exc


def _write(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _check_vars(model, names):
    unknown = [n for n in names if n not in model.variables]
    if unknown:
        raise CliError(f"unknown variable(s): {', '.join(unknown)}", USAGE)


def _abort_message(status):
    where = f" in {status.variable}" if status.variable else ""
    return f"simulation aborted at t={status.time:g}{where}: {status.reason}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args):
    model = load_model(args.model)
    overrides = load_overrides(args.overrides, model, args.model)
    variables = [v for v in (args.vars or "").split(",") if v] or sorted(model.variables)
    _check_vars(model, variables)
    run = simulate(model, _sim_spec(args), overrides)
    _write(run_to_csv(run, variables), args.out)
    if args.svg:
        Path(args.svg).write_text(svg_plot(run.times, [(v, run[v]) for v in variables], model.name))
    if not run.completed:
        raise CliError(_abort_message(run.status), ABORTED)
    return OK


def cmd_compare(args):
    model = load_model(args.model)
    spec = _sim_spec(args)
    _check_vars(model, [args.var])
    runs = []
    for label in (args.a, args.b):
        run = simulate(model, spec, load_overrides(label, model, args.model))
        if not run.completed:
            raise CliError(_abort_message(run.status), ABORTED)
        runs.append(run)
    try:
        report = compare_runs(runs[0], runs[1], args.var, args.theta, args.eps)
    except AnalysisError as exc:
        raise CliError(str(exc), INVALID) from exc
    sys.stdout.write(comparison_text(report, args.a, args.b))
    if args.out:
        gaps = [float("nan") if g is None else g for g in report.gap_pct]
        Path(args.out).write_text(to_csv(report.times, [("a", report.values_a), ("b", report.values_b), ("gap_pct", gaps)]))
    if args.svg:
        Path(args.svg).write_text(svg_plot(report.times, [("a", report.values_a), ("b", report.values_b)], args.var))
    return OK


def _factors(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(f"--factors: {exc}", USAGE) from exc


def cmd_sweep(args):
    model = load_model(args.model)
    overrides = load_overrides(args.overrides, model, args.model)
    _check_vars(model, [args.var])
    try:
        report = sensitivity_sweep(model, _sim_spec(args), overrides, args.param, _factors(args.factors), [args.var])
    except SweepAbort as exc:
        raise CliError(str(exc), ABORTED) from exc
    except (AnalysisError, ModelError) as exc:
        raise CliError(str(exc), USAGE) from exc
    columns = [(f"{args.var}@x{f:g}", run[args.var]) for f, run in zip(report.factors, report.runs)]
    times = report.runs[0].times
    _write(to_csv(times, columns), args.out)
    if args.out:
        sys.stdout.write(f"{args.var}: {report.verdicts[args.var]}\n")
    if args.svg:
        Path(args.svg).write_text(svg_plot(times, columns, f"{args.param} sweep"))
    return OK


def cmd_loops(args):
    model = load_model(args.model)
    loops = find_feedback_loops(model)
    for loop in loops:
        print(loop.describe())
    if not loops:
        print("no feedback loops")
    return OK


def cmd_calibrate(args):
    from .acceptance import calibrated_text

    try:
        problem = load_calibration_config(args.config)
    except ParseError as exc:
        raise CliError(f"{args.config}: line {exc.line}:{exc.column}: {exc.message}", INVALID) from exc
    except (CalibrationError, ModelError, ValueError, OSError) as exc:
        raise CliError(f"{args.config}: {exc}", INVALID) from exc
    fit = calibrate(problem)
    _write(calibrated_text(fit, problem.model.name), args.out)
    return OK


def cmd_verify(args):
    from .acceptance import run_all
    from .reference import ReferenceError, load_reference

    try:
        bundle = load_reference(args.reference)
    except (ReferenceError, ParseError, ModelError) as exc:
        raise CliError(f"{args.reference or 'models/reference'}: {exc}", INVALID) from exc
    results, files = run_all(bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
    for r in results:
        print(r.line())
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return VERIFY_FAILED if failed else OK


# ---------------------------------------------------------------------------


def _time_flags(p):
    p.add_argument("--from", dest="t_from", metavar="T", type=float, default=1.0, help="start time")
    p.add_argument("--to", dest="t_to", metavar="T", type=float, default=60.0, help="stop time")
    p.add_argument("--dt", type=float, default=1.0, help="time step")
    p.add_argument("--method", choices=(EULER, RK4), default=EULER, help="integrator")
    p.add_argument("--stride", metavar="K", type=int, default=1, help="record every k-th step")


def build_parser() -> argparse.ArgumentParser:
    fmt = _Help
    parser = _Parser(prog="stockflow", description="Stock-flow model simulation and analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate a model and write CSV", formatter_class=fmt)
    p.add_argument("model")
    p.add_argument("--overrides", default="", help="comma-separated override files, applied left to right")
    _time_flags(p)
    p.add_argument("--vars", default="", help="comma-separated variables to output (default: all)")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--svg", default=None, help="also write an SVG plot")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare two override sets on one variable", formatter_class=fmt)
    p.add_argument("model")
    p.add_argument("--a", required=True, help="override files of run a")
    p.add_argument("--b", required=True, help="override files of run b (the baseline)")
    p.add_argument("--var", required=True, help="variable to compare")
    p.add_argument("--theta", type=float, default=DEFAULT_THETA, help="relative divergence threshold")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help="floor of the divergence denominator")
    _time_flags(p)
    p.add_argument("--out", default=None, help="per-time CSV of a, b and gap")
    p.add_argument("--svg", default=None, help="also write an SVG plot")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="scale one constant by several factors", formatter_class=fmt)
    p.add_argument("model")
    p.add_argument("--overrides", default="", help="comma-separated override files, applied left to right")
    p.add_argument("--param", required=True, help="constant to scale")
    p.add_argument("--factors", default="1,2,4", help="ascending comma-separated factors")
    p.add_argument("--var", required=True, help="tracked variable")
    _time_flags(p)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--svg", default=None, help="also write an SVG plot")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("loops", help="list feedback loops with polarity", formatter_class=fmt)
    p.add_argument("model")
    p.set_defaults(func=cmd_loops)

    p = sub.add_parser("calibrate", help="fit free parameters from a config file", formatter_class=fmt)
    p.add_argument("config")
    p.add_argument("--out", default=None, help="override file to write (default: stdout)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("verify", help="run the acceptance suite", formatter_class=fmt)
    p.add_argument("--reference", default=None, help="reference model directory (default: models/reference)")
    p.add_argument("--out", default="verify-artifacts", help="directory for CSV artifacts")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
