import random

import pytest
from hypothesis import given, settings, strategies as st

from stockflow.expr import BinOp, Call, Neg, Num, Ref
from stockflow.generate import random_expression, random_model
from stockflow.model import Scale, Set
from stockflow.parser import (
    ParseError, format_expression, is_identifier, parse_expression, parse_model, parse_override_set,
    serialize_model, serialize_override_set,
)

MINIMAL = "MODEL m\nSTOCK A INIT 0\nFLOW f INTO A = 0.1"


def test_minimal_program():
    model = parse_model(MINIMAL)
    assert model.stocks == ["A"] and model.flows == ["f"]
    assert model.variables["f"].into == "A" and model.variables["f"].outof is None


def test_missing_expression_reports_line_2():
    with pytest.raises(ParseError) as info:
        parse_model("MODEL m\nCONST x = ")
    assert info.value.line == 2


def test_shipped_model_counts(bundle):
    text = (bundle.directory / "bi_acceptance.sdm").read_text()
    assert parse_model(text).counts() == {"stock": 1, "flow": 1, "aux": 3, "const": 10}


def test_round_trip_minimal():
    model = parse_model(MINIMAL)
    assert parse_model(serialize_model(model)) == model


def test_round_trip_shipped_model(bundle):
    text = (bundle.directory / "bi_acceptance.sdm").read_text()
    canonical = serialize_model(parse_model(text))
    assert parse_model(canonical) == parse_model(text)
    assert serialize_model(parse_model(canonical)) == canonical


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_round_trip_generated_models(rng):
    model = random_model(rng)
    assert parse_model(serialize_model(model)) == model


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_round_trip_expressions(rng):
    expr = random_expression(rng, ["a", "b", "c"], ("tab",), depth=5)
    assert parse_expression(format_expression(expr)) == expr


@pytest.mark.parametrize("text, tree", [
    ("2 + 3*4", BinOp("+", Num(2.0), BinOp("*", Num(3.0), Num(4.0)))),
    ("-2^2", Neg(BinOp("^", Num(2.0), Num(2.0)))),
    ("2^3^2", BinOp("^", Num(2.0), BinOp("^", Num(3.0), Num(2.0)))),
    ("2^-1", BinOp("^", Num(2.0), Neg(Num(1.0)))),
    ("a - b - c", BinOp("-", BinOp("-", Ref("a"), Ref("b")), Ref("c"))),
    ("a / (b * c)", BinOp("/", Ref("a"), BinOp("*", Ref("b"), Ref("c")))),
    ("MAX(0, x)", Call("MAX", (Num(0.0), Ref("x")))),
])
def test_precedence(text, tree):
    assert parse_expression(text) == tree


@pytest.mark.parametrize("text, canonical", [
    ("(a + b) + c", "a + b + c"),
    ("a + (b + c)", "a + (b + c)"),
    ("(-a)^2", "(-a)^2.0"),
    ("(-2)^2", "(-2.0)^2.0"),
    ("(2^3)^2", "(2.0^3.0)^2.0"),
    ("a * -b", "a * -b"),
    ("1e-3", "0.001"),
])
def test_canonical_formatting(text, canonical):
    assert format_expression(parse_expression(text)) == canonical


@pytest.mark.parametrize("text", [
    "MODEL m\nSTOCK A INIT 0\nFLOW f INTO A = 0.1\nFLOW f INTO A = 0.2",
    "MODEL m\nCONST k = x",
    "MODEL m\nTABLE t = (1, 0) (0, 1)",
    "MODEL m\nTABLE t = (1, 0)",
    "MODEL m\nSTOCK A INIT 0\nFLOW f = 1",
    "MODEL m\nAUX a = MIN(1)",
    "MODEL m\nAUX a = FOO(1)",
    "MODEL m\nAUX MAX = 1",
    "MODEL m\nAUX a = 1 +",
    "STOCK A INIT 0",
    "",
    "MODEL m\nAUX a = (1",
    "MODEL m\nAUX a = 1 $ 2",
])
def test_syntax_errors(text):
    with pytest.raises(ParseError):
        parse_model(text)


def test_deep_nesting_is_an_error_not_a_crash():
    with pytest.raises(ParseError):
        parse_expression("(" * 1000 + "1" + ")" * 1000)
    with pytest.raises(ParseError):
        parse_expression("-" * 5000 + "1")
    with pytest.raises(ParseError):
        parse_expression("2^" * 5000 + "1")
    with pytest.raises(ParseError):
        parse_expression("MAX(1, " * 1000 + "1" + ")" * 1000)
    assert parse_expression("(" * 50 + "1" + ")" * 50) == Num(1.0)


def _statement_lines(text):
    return [i for i, line in enumerate(text.splitlines(), start=1) if line and not line.startswith("MODEL")]


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False), st.sampled_from(["@", "= =", ")", "(", ",,", "INIT", "1 2"]))
def test_error_location_injection(rng, junk):
    text = serialize_model(random_model(rng))
    lines = text.splitlines()
    target = rng.choice(_statement_lines(text))
    lines[target - 1] = lines[target - 1] + " " + junk
    with pytest.raises(ParseError) as info:
        parse_model("\n".join(lines) + "\n")
    assert info.value.line == target


_ALPHABET = "MODEL STOCK FLOW AUX CONST TABLE INIT INTO OUTOF a b 0 1.5 e ( ) , + - * / ^ = \n # MAX LOOKUP".split(" ")


@settings(max_examples=500, deadline=None)
@given(st.lists(st.sampled_from(_ALPHABET + [" ", "\n"]), max_size=60))
def test_parser_is_total(tokens):
    text = " ".join(tokens)
    try:
        parse_model(text)
    except ParseError as exc:
        assert exc.line >= 1 and exc.column >= 1


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=80))
def test_parser_is_total_on_arbitrary_text(text):
    try:
        parse_model(text)
    except ParseError:
        pass


def test_override_parsing():
    assert parse_override_set("fear_of_losing_position *= 4").entries == {"fear_of_losing_position": Scale(4.0)}
    traditional = parse_override_set(
        "tech_knowledge = 1.0\ndomain_knowledge = 0.6\ncomm_strength = 0.4\nfear_of_losing_position = 0.8"
    )
    assert len(traditional) == 4 and all(isinstance(e, Set) for e in traditional.entries.values())
    assert len(parse_override_set("")) == 0


def test_override_errors():
    with pytest.raises(ParseError):
        parse_override_set("k = 1\nk = 2")
    with pytest.raises(ParseError) as info:
        parse_override_set("k = 1\nj += 2")
    assert info.value.line == 2


def test_override_round_trip():
    overrides = parse_override_set("a = -0.5\nb *= 1.2\n# note\nc = 1e-07\n")
    assert parse_override_set(serialize_override_set(overrides, "header")) == overrides


def test_identifiers():
    assert is_identifier("acceptance") and is_identifier("_x1")
    assert not is_identifier("1x") and not is_identifier("MAX") and not is_identifier("INIT")


def test_random_model_is_seeded():
    assert serialize_model(random_model(random.Random(3))) == serialize_model(random_model(random.Random(3)))
