"""The shipped BI-acceptance model, its strategy and scenario overrides, and
the published monthly acceptance table used as calibration data."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .calibration import CalibrationProblem, FreeParameter, Sample, Target
from .engine import REFERENCE_SPEC
from .model import Model, OverrideSet, apply_overrides, check_model, compose
from .parser import parse_model, parse_override_set

MODEL_FILE = "bi_acceptance.sdm"
STRATEGIES = ("selfservice", "traditional")
SCENARIOS = ("scenario1", "scenario2", "scenario3")
FIXTURE_FILE = "table8.csv"
CALIBRATED_FILE = "calibrated.ovr"
CALIBRATION_CONFIG = "calibration.cfg"

STOCK = "acceptance"
FEAR = "fear_of_losing_position"

# published month-60 improvements of each scenario over the traditional baseline
SCENARIO_IMPROVEMENT = {"scenario1": 0.11, "scenario2": 0.19, "scenario3": 0.17}

FREE_PARAMETERS = (
    FreeParameter("a0", 1e-5, 1e-3, 2.85e-4),
    FreeParameter("w_0", 0.0, 0.3, 0.1402),
    FreeParameter("w_t", 0.0, 0.05, 0.0137),
    FreeParameter("w_d", 0.0, 0.05, 0.0153),
    FreeParameter("w_c", 0.0, 0.05, 0.0039),
    FreeParameter("w_f", 0.0, 0.05, 0.0054),
)

# self-service months 40-41 straddle an unexplained one-month jump in the table
ANOMALOUS = {"selfservice": (40, 41)}
SMALL_VALUE = 0.001
SMALL_WEIGHT = 0.25
TERMINAL_WEIGHT = 100.0
SCENARIO_WEIGHT = 100.0


class ReferenceError(RuntimeError):
    pass


def default_directory() -> Path:
    """models/reference of the source checkout, else of the working directory."""
    here = Path(__file__).resolve().parents[2] / "models" / "reference"
    if (here / MODEL_FILE).exists():
        return here
    return Path.cwd() / "models" / "reference"


@dataclass(frozen=True)
class ReferenceBundle:
    directory: Path
    model: Model
    strategies: dict
    scenarios: dict
    fixture: dict  # month, selfservice, traditional -> lists
    calibrated: OverrideSet | None

    def overrides(self, *names) -> OverrideSet:
        """Compose named override sets left to right, e.g. ('traditional', 'calibrated')."""
        sets = []
        for name in names:
            if name == "calibrated":
                if self.calibrated is None:
                    raise ReferenceError(f"{CALIBRATED_FILE} is missing")
                sets.append(self.calibrated)
            elif name in self.strategies:
                sets.append(self.strategies[name])
            elif name in self.scenarios:
                sets.append(self.scenarios[name])
            else:
                raise KeyError(name)
        return compose(*sets)


def read_fixture(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["month", "selfservice", "traditional"]:
            raise ReferenceError(f"{path}: header must be month,selfservice,traditional")
        out = {"month": [], "selfservice": [], "traditional": []}
        for row in reader:
            out["month"].append(int(row["month"]))
            out["selfservice"].append(float(row["selfservice"]))
            out["traditional"].append(float(row["traditional"]))
    if out["month"] != list(range(1, 61)):
        raise ReferenceError(f"{path}: expected months 1..60")
    return out


def load_reference(directory=None) -> ReferenceBundle:
    directory = Path(directory) if directory is not None else default_directory()
    try:
        model = parse_model((directory / MODEL_FILE).read_text())
        strategies = {n: parse_override_set((directory / f"{n}.ovr").read_text()) for n in STRATEGIES}
        scenarios = {n: parse_override_set((directory / f"{n}.ovr").read_text()) for n in SCENARIOS}
        fixture = read_fixture(directory / FIXTURE_FILE)
        calibrated_path = directory / CALIBRATED_FILE
        calibrated = parse_override_set(calibrated_path.read_text()) if calibrated_path.exists() else None
    except OSError as exc:
        raise ReferenceError(f"cannot read reference bundle: {exc}") from exc
    check_model(model)
    for overrides in [*strategies.values(), *scenarios.values(), calibrated]:
        apply_overrides(model, overrides)
    return ReferenceBundle(directory, model, strategies, scenarios, fixture, calibrated)


def strategy_samples(fixture, strategy, terminal_weight=TERMINAL_WEIGHT) -> tuple:
    """Month 1 is the fixed initial condition and is left out."""
    samples = []
    for month, value in zip(fixture["month"][1:], fixture[strategy][1:]):
        if month in ANOMALOUS.get(strategy, ()):
            weight = 0.0
        elif month == fixture["month"][-1]:
            weight = terminal_weight
        elif value < SMALL_VALUE:
            weight = SMALL_WEIGHT
        else:
            weight = 1.0
        samples.append(Sample(float(month), value, weight))
    return tuple(samples)


def scenario_samples(fixture, scenario, weight=SCENARIO_WEIGHT) -> tuple:
    month = fixture["month"][-1]
    value = (1 + SCENARIO_IMPROVEMENT[scenario]) * fixture["traditional"][-1]
    return (Sample(float(month), round(value, 10), weight),)


def reference_targets(bundle: ReferenceBundle, terminal_weight=TERMINAL_WEIGHT, scenario_weight=SCENARIO_WEIGHT):
    targets = [
        Target(STOCK, strategy_samples(bundle.fixture, s, terminal_weight), bundle.strategies[s])
        for s in STRATEGIES
    ]
    for sc in SCENARIOS:
        condition = compose(bundle.strategies["traditional"], bundle.scenarios[sc])
        targets.append(Target(STOCK, scenario_samples(bundle.fixture, sc, scenario_weight), condition))
    return tuple(targets)


def reference_problem(bundle: ReferenceBundle | None = None, **weights) -> CalibrationProblem:
    bundle = bundle or load_reference()
    return CalibrationProblem(bundle.model, REFERENCE_SPEC, FREE_PARAMETERS, reference_targets(bundle, **weights))


def write_calibration_inputs(bundle: ReferenceBundle, directory=None) -> Path:
    """Write the target CSVs and calibration.cfg that reproduce ``reference_problem``."""
    from .calibration import write_samples
    from .parser import format_number

    directory = Path(directory) if directory is not None else bundle.directory
    (directory / "calibration").mkdir(parents=True, exist_ok=True)
    lines = [
        "# reference calibration: both strategies plus the three scenario end points",
        f"model = {MODEL_FILE}",
        "t_start = 1",
        "t_stop = 60",
        "dt = 1",
        "loss = log",
    ]
    for p in FREE_PARAMETERS:
        lines.append(f"free = {p.name} {format_number(p.lower)} {format_number(p.upper)} {format_number(p.guess)}")
    for s in STRATEGIES:
        write_samples(directory / "calibration" / f"{s}.csv", strategy_samples(bundle.fixture, s))
        lines.append(f"target = {STOCK} calibration/{s}.csv {s}.ovr")
    for sc in SCENARIOS:
        write_samples(directory / "calibration" / f"{sc}.csv", scenario_samples(bundle.fixture, sc))
        lines.append(f"target = {STOCK} calibration/{sc}.csv traditional.ovr,{sc}.ovr")
    path = directory / CALIBRATION_CONFIG
    path.write_text("\n".join(lines) + "\n")
    return path
