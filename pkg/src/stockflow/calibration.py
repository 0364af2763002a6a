"""Fit model constants to reference trajectories.

The optimizer is a deterministic Nelder-Mead simplex run in unit-box
coordinates (each free parameter mapped onto [0, 1] by its bounds, with
every trial point clipped back into the box). A brute-force grid search
is provided as an independent oracle for small problems.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import CompiledModel, SimSpec, _index_of_time, _run
from .model import CONST, Model, ModelError, OverrideSet, Scale, Set, apply_overrides, check_model, compose

LOG = "log"
LINEAR = "linear"
LOG_FLOOR = 1e-6

MAX_ITER = 2000
SPREAD_TOL = 1e-10
INITIAL_STEP = 0.05
RESTART_STEP = 0.01


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class FreeParameter:
    name: str
    lower: float
    upper: float
    guess: float


@dataclass(frozen=True)
class Sample:
    t: float
    value: float
    weight: float = 1.0


@dataclass(frozen=True)
class Target:
    variable: str
    samples: tuple
    condition: OverrideSet = field(default_factory=OverrideSet)


@dataclass(frozen=True)
class CalibrationProblem:
    model: Model
    spec: SimSpec
    free: tuple
    targets: tuple
    loss_scale: str = LOG

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(self.free))
        object.__setattr__(self, "targets", tuple(self.targets))
        check_model(self.model)
        if self.loss_scale not in (LOG, LINEAR):
            raise CalibrationError(f"unknown loss scale {self.loss_scale!r}")
        names = [p.name for p in self.free]
        if len(set(names)) != len(names):
            raise CalibrationError("free parameters must be distinct")
        for p in self.free:
            var = self.model.variables.get(p.name)
            if var is None or var.kind != CONST:
                raise CalibrationError(f"free parameter {p.name} is not a constant")
            if not (math.isfinite(p.lower) and math.isfinite(p.upper) and p.lower < p.upper):
                raise CalibrationError(f"{p.name}: bounds must be finite with lower < upper")
            if not p.lower <= p.guess <= p.upper:
                raise CalibrationError(f"{p.name}: guess {p.guess} outside [{p.lower}, {p.upper}]")
        times = self.spec.output_times()
        for target in self.targets:
            if target.variable not in self.model.variables:
                raise CalibrationError(f"target variable {target.variable} not in model")
            apply_overrides(self.model, target.condition)
            for s in target.samples:
                try:
                    _index_of_time(times, s.t)
                except KeyError:
                    raise CalibrationError(f"target time {s.t} is not on the output grid") from None
                if s.weight < 0:
                    raise CalibrationError("sample weights must be non-negative")

    @property
    def names(self):
        return [p.name for p in self.free]

    @property
    def guess(self) -> dict:
        return {p.name: p.guess for p in self.free}


@dataclass
class FittedParams:
    values: dict
    loss: float
    evaluations: int
    converged: bool

    def as_overrides(self) -> OverrideSet:
        return OverrideSet({k: Set(v) for k, v in self.values.items()})


class LossFunction:
    """Callable loss for one problem; compiles the model once."""

    def __init__(self, problem: CalibrationProblem):
        self.problem = problem
        self.compiled = CompiledModel(problem.model)
        self.evaluations = 0
        times = problem.spec.output_times()
        # targets sharing a condition share one simulation
        groups = {}
        for target in problem.targets:
            key = target.condition.key()
            if key not in groups:
                groups[key] = (target.condition, [])
            rows = [(_index_of_time(times, s.t), s.value, s.weight) for s in target.samples]
            groups[key][1].append((target.variable, rows))
        self.groups = [groups[k] for k in sorted(groups)]

    def __call__(self, candidate: dict) -> float:
        problem = self.problem
        for p in problem.free:
            v = candidate[p.name]
            if not p.lower <= v <= p.upper:
                raise CalibrationError(f"candidate {p.name}={v} outside bounds")
        self.evaluations += 1
        fitted = OverrideSet({k: Set(float(candidate[k])) for k in problem.names})
        log = problem.loss_scale == LOG
        total = 0.0
        for condition, targets in self.groups:
            constants = self.compiled.constants_for(compose(fitted, condition))
            run = _run(self.compiled, problem.spec, constants)
            if not run.completed:
                return math.inf
            for variable, rows in targets:
                series = run.series[variable]
                for i, obs, w in rows:
                    sim = series[i]
                    if log:
                        diff = math.log(max(sim, LOG_FLOOR)) - math.log(max(obs, LOG_FLOOR))
                    else:
                        diff = sim - obs
                    total += w * diff * diff
        return total if math.isfinite(total) else math.inf


def evaluate_loss(problem: CalibrationProblem, candidate: dict) -> float:
    """Weighted squared trajectory error of ``candidate``; inf if any run aborts."""
    return LossFunction(problem)(candidate)


def _to_values(problem, u):
    return {p.name: p.lower + float(ui) * (p.upper - p.lower) for p, ui in zip(problem.free, u)}


def _nelder_mead(f, x0, step, max_iter=MAX_ITER, tol=SPREAD_TOL):
    """Box-projected Nelder-Mead on [0, 1]^n. Returns (best_x, best_f, converged)."""
    n = len(x0)
    clip = lambda v: np.clip(v, 0.0, 1.0)  # noqa: E731
    simplex = [clip(np.asarray(x0, dtype=float))]
    for i in range(n):
        v = simplex[0].copy()
        v[i] = v[i] + step if v[i] + step <= 1.0 else v[i] - step
        simplex.append(clip(v))
    fvals = [f(v) for v in simplex]
    converged = False
    for _ in range(max_iter):
        order = sorted(range(n + 1), key=lambda k: fvals[k])
        simplex = [simplex[k] for k in order]
        fvals = [fvals[k] for k in order]
        if fvals[-1] - fvals[0] < tol:
            converged = True
            break
        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        xr = clip(centroid + (centroid - worst))
        fr = f(xr)
        if fr < fvals[0]:
            xe = clip(centroid + 2.0 * (xr - centroid))
            fe = f(xe)
            simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = clip(centroid + 0.5 * (xr - centroid))
            fc = f(xc)
            accept = fc <= fr
        else:
            xc = clip(centroid + 0.5 * (worst - centroid))
            fc = f(xc)
            accept = fc < fvals[-1]
        if accept:
            simplex[-1], fvals[-1] = xc, fc
            continue
        best = simplex[0]
        for k in range(1, n + 1):
            simplex[k] = best + 0.5 * (simplex[k] - best)
            fvals[k] = f(simplex[k])
    k = min(range(n + 1), key=lambda k: fvals[k])
    return simplex[k], fvals[k], converged


def calibrate(problem: CalibrationProblem) -> FittedParams:
    """Nelder-Mead fit from the guess, then one restart from the best point.

    Deterministic: the starting simplex is the guess plus a 5%-of-range step
    along each axis (stepping down when that would leave the box).
    """
    loss = LossFunction(problem)
    guess = problem.guess
    best_values, best_loss = dict(guess), loss(guess)
    if not problem.free:
        return FittedParams(best_values, best_loss, loss.evaluations, True)

    def f(u):
        nonlocal best_values, best_loss
        values = _to_values(problem, u)
        value = loss(values)
        if value < best_loss:
            best_values, best_loss = values, value
        return value

    u0 = [(p.guess - p.lower) / (p.upper - p.lower) for p in problem.free]
    u1, _, _ = _nelder_mead(f, u0, INITIAL_STEP)
    _, _, converged = _nelder_mead(f, u1, RESTART_STEP)
    return FittedParams(best_values, best_loss, loss.evaluations, converged)


def grid_search_oracle(problem: CalibrationProblem, resolution: int) -> FittedParams:
    """Exhaustive search on a uniform grid that includes both bounds of every axis."""
    if len(problem.free) > 3:
        raise CalibrationError("grid oracle supports at most 3 free parameters")
    if resolution < 2:
        raise CalibrationError("resolution must be at least 2")
    loss = LossFunction(problem)
    axes = [np.linspace(p.lower, p.upper, resolution) for p in problem.free]
    best_values, best_loss = None, math.inf
    for point in itertools.product(*axes):
        values = {p.name: float(v) for p, v in zip(problem.free, point)}
        value = loss(values)
        if best_values is None or value < best_loss:
            best_values, best_loss = values, value
    return FittedParams(best_values, best_loss, loss.evaluations, True)


# ---------------------------------------------------------------------------
# synthetic problems with known answers

SYNTHETIC_MODEL = """\
MODEL synthetic_growth
STOCK A INIT 0
FLOW f INTO A = drive * (a0 + A)
CONST drive = 0.1
CONST a0 = 0.0001
"""

# (drive, a0, loss scale) triples used as the shipped two-parameter suite
SYNTHETIC_SUITE = (
    (0.15, 3e-4, LOG),
    (0.12, 5e-4, LOG),
    (0.18, 2e-4, LINEAR),
)


def growth_recurrence(drive, a0, months=60):
    """A <- A + drive * (a0 + A), starting from A = 0 at month 1."""
    out = [0.0]
    for _ in range(months - 1):
        out.append(out[-1] + drive * (a0 + out[-1]))
    return out


def synthetic_problem(drive=0.15, a0=3e-4, loss_scale=LOG) -> CalibrationProblem:
    from .parser import parse_model

    data = growth_recurrence(drive, a0)
    samples = tuple(Sample(float(m), v, 1.0) for m, v in zip(range(2, 61), data[1:]))
    return CalibrationProblem(
        parse_model(SYNTHETIC_MODEL),
        SimSpec(1.0, 60.0, 1.0),
        (FreeParameter("drive", 0.05, 0.25, 0.1), FreeParameter("a0", 1e-5, 1e-3, 1e-4)),
        (Target("A", samples),),
        loss_scale,
    )


# ---------------------------------------------------------------------------
# config files


def read_samples(path) -> tuple:
    """Read a ``t,value[,weight]`` CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "value"} <= set(reader.fieldnames):
            raise CalibrationError(f"{path}: expected header t,value[,weight]")
        return tuple(
            Sample(float(row["t"]), float(row["value"]), float(row.get("weight") or 1.0))
            for row in reader
        )


def write_samples(path, samples) -> None:
    from .parser import format_number

    with open(path, "w", newline="") as fh:
        fh.write("t,value,weight\n")
        for s in samples:
            fh.write(f"{format_number(s.t)},{format_number(s.value)},{format_number(s.weight)}\n")


def load_calibration_config(path) -> CalibrationProblem:
    """Build a problem from a ``key = value`` config file.

    Recognised keys: model, t_start, t_stop, dt, method, loss, free (repeatable:
    ``name lower upper guess``) and target (repeatable: ``variable samples.csv
    [override.ovr,...]``). Relative paths resolve against the config file's
    directory.
    """
    from .parser import parse_model, parse_override_set

    path = Path(path)
    base = path.parent
    settings = {}
    free = []
    targets = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CalibrationError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        parts = value.split()
        try:
            if key == "free":
                name, lo, hi, guess = parts
                free.append(FreeParameter(name, float(lo), float(hi), float(guess)))
            elif key == "target":
                if len(parts) not in (2, 3):
                    raise ValueError("target needs: variable samples.csv [overrides]")
                condition = OverrideSet()
                if len(parts) == 3:
                    condition = compose(*(
                        parse_override_set((base / p).read_text()) for p in parts[2].split(",")
                    ))
                targets.append(Target(parts[0], read_samples(base / parts[1]), condition))
            elif key in ("model", "t_start", "t_stop", "dt", "method", "loss"):
                settings[key] = value
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, OSError) as exc:
            raise CalibrationError(f"{path}:{lineno}: {exc}") from exc
    if "model" not in settings:
        raise CalibrationError(f"{path}: missing model")
    model = parse_model((base / settings["model"]).read_text())
    spec = SimSpec(
        float(settings.get("t_start", 1)), float(settings.get("t_stop", 60)),
        float(settings.get("dt", 1)), settings.get("method", "euler"),
    )
    return CalibrationProblem(model, spec, tuple(free), tuple(targets), settings.get("loss", LOG).lower())


__all__ = [
    "CalibrationError", "CalibrationProblem", "FittedParams", "FreeParameter", "Sample", "Target",
    "LossFunction", "evaluate_loss", "calibrate", "grid_search_oracle", "synthetic_problem",
    "SYNTHETIC_SUITE", "growth_recurrence", "load_calibration_config", "read_samples", "write_samples",
    "Scale", "ModelError",
]
