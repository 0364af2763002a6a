import pytest

from stockflow.loops import BALANCING, REINFORCING, UNDETERMINED, find_feedback_loops, link_sign
from stockflow.parser import parse_model


def loops_of(text):
    return [(l.cycle, l.polarity) for l in find_feedback_loops(parse_model(text))]


def test_positive_loop():
    assert loops_of("MODEL m\nSTOCK A INIT 1\nFLOW f INTO A = 0.1*A\n") == [(("A", "f"), REINFORCING)]


def test_negative_loop():
    assert loops_of("MODEL m\nSTOCK A INIT 1\nFLOW g OUTOF A = 0.1*A\n") == [(("A", "g"), BALANCING)]


def test_acyclic_model_has_no_loops():
    assert loops_of("MODEL m\nSTOCK A INIT 1\nFLOW f INTO A = 2\n") == []


def test_reference_loop_is_reinforcing(bundle):
    loops = find_feedback_loops(bundle.model)
    assert [(l.cycle, l.polarity) for l in loops] == [(("acceptance", "adoption"), REINFORCING)]
    assert loops[0].describe() == "R Reinforcing: acceptance -> adoption -> acceptance"


def test_two_stock_loop_polarity_flips_with_one_sign():
    base = "MODEL m\nSTOCK A INIT 1\nSTOCK B INIT 1\nFLOW f INTO B = 0.1 * A\nFLOW g INTO A = {} B\n"
    assert loops_of(base.format("0.2 *")) == [(("A", "f", "B", "g"), REINFORCING)]
    assert loops_of(base.format("1 -")) == [(("A", "f", "B", "g"), BALANCING)]


def test_goal_seeking_loop_through_auxiliary():
    text = "MODEL m\nSTOCK S INIT 0\nAUX gap = goal - S\nFLOW adjust INTO S = gap / 4\nCONST goal = 10\n"
    assert loops_of(text) == [(("S", "gap", "adjust"), BALANCING)]


@pytest.mark.parametrize("equation, sign", [
    ("x + 1", 1),
    ("1 - x", -1),
    ("-x", -1),
    ("2 * x", 1),
    ("k * x", 1),
    ("n * x", 0),
    ("1 / x", -1),
    ("x / 2", 1),
    ("x - x", 0),
    ("MAX(0, x)", 1),
    ("MIN(x, 3)", 1),
    ("SMOOTH(x, 2)", 1),
    ("STEP(x, 3)", 0),
    ("LOOKUP(tab, x)", 0),
    ("x ^ 2", 0),
    ("MAX(0, k) * x", 1),
    ("pos * x", 1),
])
def test_link_signs(equation, sign):
    text = (
        "MODEL m\nSTOCK x INIT 1\nFLOW f INTO x = 0\nAUX y = {}\nCONST k = 0.5\nCONST n = -0.5\n"
        "AUX pos = MAX(0, n)\nTABLE tab = (0, 0) (1, 1)\n"
    ).format(equation)
    assert link_sign(parse_model(text), "x", "y") == sign


def test_undetermined_loop():
    text = "MODEL m\nSTOCK A INIT 1\nFLOW f INTO A = LOOKUP(t, A)\nTABLE t = (0, 0) (1, 1)\n"
    assert loops_of(text) == [(("A", "f"), UNDETERMINED)]


def test_flow_both_ways_is_undetermined():
    assert loops_of("MODEL m\nSTOCK A INIT 1\nFLOW f INTO A OUTOF A = A\n") == [(("A", "f"), UNDETERMINED)]
