"""Fixed-step simulation of stock-flow models.

Each step evaluates auxiliaries and flows in evaluation order from the
stock values at the start of the step, then integrates stocks (and the
hidden state of every SMOOTH call) with Euler or classic RK4. Equations
are compiled to a single Python function per model so that calibration
can afford thousands of runs.
"""
from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field

from .expr import BinOp, Lookup, Neg, Num, Ref, fold_constant
from .model import Model, ModelError, OverrideSet, apply_overrides, evaluation_order

EULER = "euler"
RK4 = "rk4"
STEP_TOL = 1e-9


class EvaluationError(ArithmeticError):
    """Division by zero or a non-finite value while evaluating a variable."""

    def __init__(self, message, time=None, variable=None):
        super().__init__(message)
        self.reason = message
        self.time = time
        self.variable = variable

    def __str__(self):
        where = []
        if self.variable is not None:
            where.append(f"variable {self.variable}")
        if self.time is not None:
            where.append(f"t={self.time:g}")
        return self.reason + (f" ({', '.join(where)})" if where else "")


@dataclass(frozen=True)
class SimSpec:
    t_start: float = 1.0
    t_stop: float = 60.0
    dt: float = 1.0
    method: str = EULER
    output_stride: int = 1

    def __post_init__(self):
        method = self.method.lower()
        object.__setattr__(self, "method", method)
        if method not in (EULER, RK4):
            raise ValueError(f"unknown integration method {self.method!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not self.t_stop > self.t_start:
            raise ValueError("t_stop must exceed t_start")
        if int(self.output_stride) != self.output_stride or self.output_stride < 1:
            raise ValueError("output_stride must be a positive integer")
        steps = (self.t_stop - self.t_start) / self.dt
        if abs(steps - round(steps)) > STEP_TOL:
            raise ValueError("(t_stop - t_start) / dt must be a whole number of steps")

    @property
    def n_steps(self) -> int:
        return round((self.t_stop - self.t_start) / self.dt)

    def time(self, step: int) -> float:
        return self.t_start + step * self.dt

    def recorded_steps(self) -> list:
        steps = list(range(0, self.n_steps + 1, self.output_stride))
        if steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return steps

    def output_times(self) -> list:
        return [self.time(i) for i in self.recorded_steps()]


REFERENCE_SPEC = SimSpec(1.0, 60.0, 1.0, EULER, 1)


@dataclass(frozen=True)
class Aborted:
    reason: str
    time: float
    variable: str | None = None


@dataclass
class RunResult:
    times: list
    series: dict
    status: object = "completed"  # "completed" or an Aborted
    spec: SimSpec | None = field(default=None, compare=False)

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def __getitem__(self, name):
        return self.series[name]

    def final(self, name) -> float:
        return self.series[name][-1]

    def at(self, name, t) -> float:
        i = _index_of_time(self.times, t)
        return self.series[name][i]


def _index_of_time(times, t, tol=STEP_TOL):
    i = bisect.bisect_left(times, t - tol)
    if i < len(times) and abs(times[i] - t) <= tol:
        return i
    raise KeyError(f"time {t} is not on the output grid")


# ---------------------------------------------------------------------------
# builtin semantics shared by the interpreter and compiled code


def lookup_interpolate(table, x: float) -> float:
    """Piecewise-linear interpolation, clamped to the end values outside the table."""
    xs = [p[0] for p in table]
    if x <= xs[0]:
        return float(table[0][1])
    if x >= xs[-1]:
        return float(table[-1][1])
    i = bisect.bisect_right(xs, x)
    (x0, y0), (x1, y1) = table[i - 1], table[i]
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


def _step(height, start, t):
    return 0.0 if t < start else height


def _ramp(slope, start, t):
    return 0.0 if t < start else slope * (t - start)


def _clamp(x, lo, hi):
    return min(max(x, lo), hi)


def _div(a, b):
    if b == 0:
        raise ZeroDivisionError("division by zero")
    return a / b


def _pow(a, b):
    try:
        out = a ** b
    except ZeroDivisionError:
        raise ZeroDivisionError("zero raised to a negative power") from None
    if isinstance(out, complex):
        raise ValueError("negative base with fractional exponent")
    return out


_BINARY = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "^": _pow,
}


def eval_expression(expr, env, t, tables=None, variable=None, stateful=None):
    """Evaluate an expression tree against ``env`` (name -> value) at time ``t``.

    Outside a simulation run SMOOTH and DELAY_FIXED have no history, so by
    default they return their input (their value at the first time point).
    ``stateful(call, input_value)`` can supply run state instead.
    """
    try:
        value = _interp(expr, env, t, tables or {}, stateful)
    except (ZeroDivisionError, OverflowError, ValueError) as exc:
        raise EvaluationError(str(exc), t, variable) from None
    if not math.isfinite(value):
        raise EvaluationError("non-finite result", t, variable)
    return value


def _interp(expr, env, t, tables, stateful):
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Ref):
        return env[expr.name]
    if isinstance(expr, Neg):
        return -_interp(expr.operand, env, t, tables, stateful)
    if isinstance(expr, BinOp):
        a = _interp(expr.left, env, t, tables, stateful)
        b = _interp(expr.right, env, t, tables, stateful)
        return _BINARY[expr.op](a, b)
    if isinstance(expr, Lookup):
        return lookup_interpolate(tables[expr.table], _interp(expr.arg, env, t, tables, stateful))
    name = expr.name
    if name == "IF_POSITIVE":
        # only the selected branch is evaluated, as in compiled code
        branch = expr.args[1] if _interp(expr.args[0], env, t, tables, stateful) > 0 else expr.args[2]
        return _interp(branch, env, t, tables, stateful)
    args = [_interp(a, env, t, tables, stateful) for a in expr.args]
    if name == "MIN":
        return min(args)
    if name == "MAX":
        return max(args)
    if name == "CLAMP":
        return _clamp(*args)
    if name == "STEP":
        return _step(args[0], args[1], t)
    if name == "RAMP":
        return _ramp(args[0], args[1], t)
    if stateful is not None:
        return stateful(expr, args[0])
    return args[0]


# ---------------------------------------------------------------------------
# compilation


class _Runtime:
    """Per-run state for SMOOTH and DELAY_FIXED calls."""

    def __init__(self, n_smooth, delay_lengths):
        self.smooth = [None] * n_smooth  # current smoothed values (integrated state)
        self.ready = [False] * n_smooth  # state is carried in the integration vector
        self.smooth_in = [0.0] * n_smooth
        self.delays = [None] * len(delay_lengths)
        self.delay_lengths = delay_lengths
        self.delay_in = [0.0] * len(delay_lengths)

    def smooth_value(self, k, x):
        self.smooth_in[k] = x
        if self.smooth[k] is None:
            self.smooth[k] = x
        return self.smooth[k]

    def delay_value(self, k, x):
        self.delay_in[k] = x
        if self.delays[k] is None:
            self.delays[k] = deque([x] * self.delay_lengths[k])
        return self.delays[k][0]

    def push_delays(self, inputs):
        for k, buf in enumerate(self.delays):
            if buf is not None:
                buf.append(inputs[k])
                buf.popleft()


class CompiledModel:
    """A model's equations turned into one Python function.

    Constant values are passed in at run time, so one compiled model serves
    every override of the same structure.
    """

    def __init__(self, model: Model):
        self.model = model
        self.order = evaluation_order(model)
        self.stocks = model.stocks
        self.constant_names = list(model.constants)
        self.smooth_tau = []  # delay-time expressions, folded per run
        self.delay_tau = []
        self._tables = {}
        self._source = self._generate()
        namespace = {
            "_div": _div, "_pow": _pow, "_clamp": _clamp, "_step": _step, "_ramp": _ramp,
            "_lookup": lookup_interpolate, "_isfinite": math.isfinite, "_tables": self._tables,
            "EvaluationError": EvaluationError,
        }
        exec(compile(self._source, f"<model {model.name}>", "exec"), namespace)
        self._fn = namespace["_evaluate"]
        self.inflows = {s: model.inflows(s) for s in self.stocks}
        self.outflows = {s: model.outflows(s) for s in self.stocks}

    def _generate(self):
        local = {}
        for i, name in enumerate(self.stocks):
            local[name] = f"s_{i}"
        for i, name in enumerate(self.constant_names):
            local[name] = f"c_{i}"
        for i, name in enumerate(self.order):
            local[name] = f"v_{i}"
        self._local = local

        lines = ["def _evaluate(t, state, rt, consts):"]
        if self.stocks:
            lines.append(f"    ({''.join(local[s] + ', ' for s in self.stocks)}) = state")
        if self.constant_names:
            lines.append(f"    ({''.join(local[c] + ', ' for c in self.constant_names)}) = consts")
        lines.append("    _var = None")
        lines.append("    try:")
        for name in self.order:
            code = self._emit(self.model.variables[name].equation)
            lines.append(f"        _var = {name!r}")
            lines.append(f"        {local[name]} = {code}")
            lines.append(f"        if not _isfinite({local[name]}):")
            lines.append(f"            raise EvaluationError('non-finite result', t, {name!r})")
        lines.append("        pass")
        lines.append("    except (ZeroDivisionError, OverflowError, ValueError) as exc:")
        lines.append("        raise EvaluationError(str(exc), t, _var) from None")
        lines.append("    return (" + "".join(f"{local[n]}, " for n in self.order) + ")")
        return "\n".join(lines) + "\n"

    def _emit(self, expr):
        if isinstance(expr, Num):
            return repr(expr.value)
        if isinstance(expr, Ref):
            return self._local[expr.name]
        if isinstance(expr, Neg):
            return f"(-{self._emit(expr.operand)})"
        if isinstance(expr, BinOp):
            a, b = self._emit(expr.left), self._emit(expr.right)
            if expr.op == "/":
                return f"_div({a}, {b})"
            if expr.op == "^":
                return f"_pow({a}, {b})"
            return f"({a} {expr.op} {b})"
        if isinstance(expr, Lookup):
            self._tables[expr.table] = self.model.tables[expr.table]
            return f"_lookup(_tables[{expr.table!r}], {self._emit(expr.arg)})"
        args = [self._emit(a) for a in expr.args]
        name = expr.name
        if name in ("MIN", "MAX"):
            return f"{name.lower()}({args[0]}, {args[1]})"
        if name == "CLAMP":
            return f"_clamp({', '.join(args)})"
        if name == "IF_POSITIVE":
            return f"({args[1]} if {args[0]} > 0 else {args[2]})"
        if name == "STEP":
            return f"_step({args[0]}, {args[1]}, t)"
        if name == "RAMP":
            return f"_ramp({args[0]}, {args[1]}, t)"
        if name == "SMOOTH":
            self.smooth_tau.append(expr.args[1])
            return f"rt.smooth_value({len(self.smooth_tau) - 1}, {args[0]})"
        self.delay_tau.append(expr.args[1])
        return f"rt.delay_value({len(self.delay_tau) - 1}, {args[0]})"

    def constants_for(self, overrides: OverrideSet | None = None) -> dict:
        return apply_overrides(self.model, overrides).constants

    def runtime(self, constants: dict, dt: float) -> "_Runtime":
        lengths = []
        for tau_expr in self.delay_tau:
            tau = fold_constant(tau_expr, constants)
            length = tau / dt
            if abs(length - round(length)) > STEP_TOL or round(length) < 1:
                raise ModelError(f"DELAY_FIXED delay time {tau:g} is not a whole number of steps of {dt:g}")
            lengths.append(round(length))
        return _Runtime(len(self.smooth_tau), lengths)

    def run(self, spec: SimSpec, overrides: OverrideSet | None = None) -> RunResult:
        return _run(self, spec, self.constants_for(overrides))


Simulator = CompiledModel


def _derivatives(cm: CompiledModel, values: dict):
    out = []
    for s in cm.stocks:
        rate = 0.0
        for f in cm.inflows[s]:
            rate += values[f]
        for f in cm.outflows[s]:
            rate -= values[f]
        out.append(rate)
    return out


def simulate(model: Model, spec: SimSpec = REFERENCE_SPEC, overrides: OverrideSet | None = None) -> RunResult:
    """Run ``model`` over ``spec``; evaluation failures abort with partial series."""
    return CompiledModel(model).run(spec, overrides)


def _run(cm: CompiledModel, spec: SimSpec, constants: dict) -> RunResult:
    model = cm.model
    order = cm.order
    stocks = cm.stocks
    consts = tuple(constants[c] for c in cm.constant_names)
    n_stock = len(stocks)
    n_smooth = len(cm.smooth_tau)
    taus = [fold_constant(e, constants) for e in cm.smooth_tau]
    fn = cm._fn
    dt = spec.dt

    state = [fold_constant(model.variables[s].initial, constants) for s in stocks]
    rt = cm.runtime(constants, dt)
    record = set(spec.recorded_steps())
    series = {n: [] for n in sorted(model.variables)}
    times = []

    def values_at(t, x):
        vals = fn(t, x[:n_stock], rt, consts)
        out = dict(zip(order, vals))
        return out

    def deriv(t, x):
        """Derivative of [stocks..., smooth states...]; sets smooth state from x first.

        A SMOOTH that has not been evaluated yet (e.g. in an untaken
        IF_POSITIVE branch) starts at its input when first reached.
        """
        for k in range(n_smooth):
            if rt.ready[k]:
                rt.smooth[k] = x[n_stock + k]
        vals = values_at(t, x)
        d = _derivatives(cm, vals)
        for k in range(n_smooth):
            d.append((rt.smooth_in[k] - rt.smooth[k]) / taus[k] if rt.ready[k] else 0.0)
        return d, vals

    def check(t, x):
        for i, v in enumerate(x[:n_stock]):
            if not math.isfinite(v):
                raise EvaluationError("non-finite stock value", t, stocks[i])

    status = "completed"
    x = list(state) + [0.0] * n_smooth
    for step in range(spec.n_steps + 1):
        t = spec.time(step)
        try:
            check(t, x)
            d, vals = deriv(t, x)
            for k in range(n_smooth):
                if not rt.ready[k] and rt.smooth[k] is not None:
                    rt.ready[k] = True
                    x[n_stock + k] = rt.smooth[k]
            pending = list(rt.delay_in)
            if step in record:
                times.append(t)
                for n, v in vals.items():
                    series[n].append(v)
                for i, n in enumerate(stocks):
                    series[n].append(x[i])
                for n in cm.constant_names:
                    series[n].append(constants[n])
            if step == spec.n_steps:
                break
            if spec.method == EULER:
                x = [xi + dt * di for xi, di in zip(x, d)]
            else:
                k1 = d
                k2, _ = deriv(t + dt / 2, [xi + dt / 2 * ki for xi, ki in zip(x, k1)])
                k3, _ = deriv(t + dt / 2, [xi + dt / 2 * ki for xi, ki in zip(x, k2)])
                k4, _ = deriv(t + dt, [xi + dt * ki for xi, ki in zip(x, k3)])
                x = [xi + dt / 6 * (a + 2 * b + 2 * c + e) for xi, a, b, c, e in zip(x, k1, k2, k3, k4)]
            # delay history holds step-start inputs only, never RK4 sub-stage values
            rt.push_delays(pending)
        except EvaluationError as exc:
            status = Aborted(exc.reason, t if exc.time is None else exc.time, exc.variable)
            break
    return RunResult(times, series, status, spec)
