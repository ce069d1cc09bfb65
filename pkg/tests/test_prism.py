from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmmc import benchmarks
from llmmc.prism import (
    ModelError,
    ParseError,
    parse_model,
    print_model,
    resolve_constants,
    validate_model,
)
from llmmc.prism.expr import Binary, Ident, Num, evaluate, format_number, to_text

SMALL = """
mdp
const int N = 3;
module m
  x : [0..N] init 0;
  b : bool init false;
  [go] x<N -> 1/2 : (x'=x+1) + 1/2 : (x'=x);
  [stop] x=N -> (b'=true);
endmodule
label "done" = x=N;
"""


def test_parse_small_program():
    m = parse_model(SMALL)
    assert m.module_name == "m"
    assert m.variable_names == ("x", "b")
    assert m.actions == ("go", "stop")
    assert m.label_names == ("done",)
    go = m.commands[0]
    assert [b.prob for b in go.branches] == [Binary("/", Num(1), Num(2))] * 2
    stop = m.commands[1]
    assert stop.branches[0].prob == Num(1)
    assert m.variables[1].is_bool


@pytest.mark.parametrize("name", benchmarks.names())
def test_round_trip_fixtures(name):
    text = benchmarks.fixture(name).model_path.read_text()
    m = parse_model(text)
    printed = print_model(m)
    again = parse_model(printed)
    assert again == m
    assert print_model(again) == printed


def test_round_trip_small():
    m = parse_model(SMALL)
    assert parse_model(print_model(m)) == m


def test_bytes_input_and_bad_utf8():
    assert parse_model(SMALL.encode()) == parse_model(SMALL)
    with pytest.raises(ParseError):
        parse_model(b"mdp \xff\xfe")


@pytest.mark.parametrize(
    "text, line",
    [
        ("mdp\nmodule m\n x : [0..2] init 0;\n [a] x<2 -> (x'=x+1)\nendmodule\n", 5),
        ("mdp\nmodule m\n x : [0..2] init 0;\n [a] x<2 -> (y'=1);\nendmodule\n", None),
        ("dtmc\nmodule m\n x : [0..2] init 0;\nendmodule\n", 1),
    ],
)
def test_errors_are_model_errors(text, line):
    with pytest.raises(ModelError) as info:
        parse_model(text)
    if line is not None:
        assert isinstance(info.value, ParseError)
        assert info.value.line == line
        assert info.value.column >= 1


def test_parse_error_lists_expected_tokens():
    with pytest.raises(ParseError) as info:
        parse_model("mdp\nmodule m\n x : [0..2] init 0;\n [a] x<2 -> 1 : (x'=x+1)\nendmodule\n")
    assert info.value.expected


@pytest.mark.parametrize(
    "snippet",
    [
        "[] x<2 -> (x'=1);",  # unlabelled
        "[a] x<2 -> 1:(x'=1)&(x'=0);",  # assigned twice
    ],
)
def test_rejected_constructs(snippet):
    with pytest.raises(ModelError):
        parse_model(f"mdp\nmodule m\n x : [0..2] init 0;\n {snippet}\nendmodule\n")


def test_duplicate_and_reserved_names():
    with pytest.raises(ModelError):
        parse_model("mdp\nconst int x = 1;\nmodule m\n x : [0..2] init 0;\n [a] true -> (x'=0);\nendmodule\n")
    with pytest.raises(ModelError):
        parse_model('mdp\nmodule m\n x : [0..2] init 0;\n [a] true -> (x\'=0);\nendmodule\nlabel "init" = x=0;\n')


def test_deep_nesting_is_an_error_not_a_crash():
    deep = "(" * 5000 + "1" + ")" * 5000
    with pytest.raises(ModelError):
        parse_model(f"mdp\nconst int c = {deep};\nmodule m\n x : [0..1] init 0;\n [a] true -> (x'=0);\nendmodule\n")


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=300))
def test_arbitrary_bytes_only_raise_model_errors(data):
    try:
        parse_model(data)
    except ModelError:
        pass


ALPHABET = list("mdpmoduleendmodule [0..3] init x ' = + - * / : ; -> & | ! ( ) 0 1 2 a b \n")


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(ALPHABET + ["mdp\n", "module m\n", "endmodule\n", "x : [0..3] init 0;\n"]), max_size=60))
def test_token_soup_only_raises_model_errors(parts):
    try:
        parse_model("".join(parts))
    except ModelError:
        pass


# -- expressions -----------------------------------------------------------


def test_division_is_exact():
    assert evaluate(Binary("/", Num(1), Num(3)), {}) == Fraction(1, 3)


def test_format_number_exact():
    assert format_number(Fraction(1, 4)) == "0.25"
    assert format_number(Fraction(1, 3)) == "(1/3)"
    assert format_number(7) == "7"


def test_to_text_minimal_parentheses():
    e = Binary("*", Binary("+", Ident("a"), Num(1)), Ident("b"))
    assert to_text(e) == "(a + 1) * b"
    assert parse_model(SMALL)  # sanity


# -- validation ------------------------------------------------------------


def _single(body: str, consts: str = "") -> str:
    return f"mdp\n{consts}module m\n x : [0..3] init 0;\n {body}\nendmodule\n"


def test_probabilities_that_sum_to_one():
    m = parse_model(_single("[a] true -> 0.33:(x'=0) + 0.33:(x'=1) + 0.34:(x'=2);"))
    assert validate_model(m) == []


def test_probability_sum_diagnostic():
    m = parse_model(_single("[up] true -> 0.33:(x'=0) + 0.6667:(x'=1);"))
    diags = validate_model(m)
    assert len(diags) == 1
    assert "0.9967" in diags[0].message and "[up]" in diags[0].message


def test_assignment_out_of_bounds():
    diags = validate_model(parse_model(_single("[a] true -> (x'=5);")))
    assert any("5" in d.message for d in diags)


def test_division_by_zero_constant():
    diags = validate_model(parse_model(_single("[a] true -> (x'=floor(3/Z));", "const int Z = 0;\n")))
    assert diags


def test_validation_is_pure():
    m = parse_model(SMALL)
    before = print_model(m)
    validate_model(m)
    validate_model(m)
    assert print_model(m) == before


def test_resolve_constants():
    m = parse_model(_single("[a] x<K -> (x'=x+1);", "const int K;\n"))
    assert m.undefined_constants() == ("K",) or list(m.undefined_constants()) == ["K"]
    with pytest.raises(ModelError):
        resolve_constants(m)
    with pytest.raises(ModelError):
        resolve_constants(m, {"K": 2, "Q": 1})
    r = resolve_constants(m, {"K": 2})
    assert r.constant_values()["K"] == 2
    assert resolve_constants(r) == r


def test_resolve_rejects_type_mismatch():
    m = parse_model(_single("[a] x<K -> (x'=x+1);", "const int K;\n"))
    with pytest.raises(ModelError):
        resolve_constants(m, {"K": Fraction(1, 2)})
