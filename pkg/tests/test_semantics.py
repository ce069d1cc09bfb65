from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmmc.prism import ModelError, parse_model, resolve_constants
from llmmc.semantics import (
    BoundError,
    NondeterminismError,
    compile_model,
    enabled_actions,
    initial_state,
    label_set,
    successor_distribution,
)

COUNTER = """
mdp
module c
  x : [0..3] init 1;
  [inc] x<3 -> 0.5 : (x'=x+1) + 0.5 : (x'=x);
  [dec] x>0 -> (x'=x-1);
endmodule
label "top" = x=3;
label "low" = x<=1;
"""


def test_initial_state_and_labels():
    m = parse_model(COUNTER)
    assert initial_state(m) == (1,)
    assert label_set(m, (1,)) == frozenset({"low"})
    assert label_set(m, (3,)) == frozenset({"top"})


def test_enabled_actions_in_declaration_order():
    m = parse_model(COUNTER)
    assert enabled_actions(m, (0,)) == ["inc"]
    assert enabled_actions(m, (1,)) == ["inc", "dec"]
    assert enabled_actions(m, (3,)) == ["dec"]


def test_successor_distribution_is_exact():
    m = parse_model(COUNTER)
    d = successor_distribution(m, (1,), "inc").as_dict()
    assert d == {(2,): Fraction(1, 2), (1,): Fraction(1, 2)}


def test_disabled_action_raises():
    with pytest.raises(ModelError):
        successor_distribution(parse_model(COUNTER), (0,), "dec")


def test_duplicate_targets_are_merged():
    m = parse_model("mdp\nmodule m\n x : [0..2] init 0;\n [a] true -> 0.5:(x'=1) + 0.5:(x'=1);\nendmodule\n")
    assert successor_distribution(m, (0,), "a").as_dict() == {(1,): Fraction(1)}


def test_overlapping_guards_are_nondeterminism():
    m = parse_model("mdp\nmodule m\n x : [0..2] init 0;\n [a] x<2 -> (x'=1);\n [a] x<1 -> (x'=2);\nendmodule\n")
    with pytest.raises(NondeterminismError):
        successor_distribution(m, (0,), "a")
    assert successor_distribution(m, (1,), "a").as_dict() == {(1,): 1}


def test_runtime_bound_violation():
    m = parse_model("mdp\nmodule m\n x : [0..2] init 0;\n [a] true -> (x'=x+1);\nendmodule\n")
    successor_distribution(m, (1,), "a")
    with pytest.raises(BoundError):
        successor_distribution(m, (2,), "a")


def test_render_and_as_dict():
    cm = compile_model(resolve_constants(parse_model(COUNTER)))
    assert cm.render((2,)) == "x=2"
    assert cm.as_dict((2,)) == {"x": 2}


RANDOM_WALK = """
mdp
const double p;
module w
  x : [0..5] init 2;
  y : [0..1] init 0;
  [l] x>0 -> p : (x'=x-1) + 1-p : (y'=1-y);
  [r] x<5 -> p : (x'=x+1)&(y'=0) + 1-p : (x'=x);
endmodule
"""


@settings(max_examples=50, deadline=None)
@given(
    st.fractions(min_value=0, max_value=1, max_denominator=50),
    st.integers(0, 5),
    st.integers(0, 1),
)
def test_distributions_sum_to_one_and_stay_in_bounds(p, x, y):
    m = compile_model(resolve_constants(parse_model(RANDOM_WALK), {"p": p}))
    for a in m.enabled_actions((x, y)):
        dist = m.successor_distribution((x, y), a)
        assert sum(q for _, q in dist) == 1
        for (nx, ny), q in dist:
            assert 0 <= nx <= 5 and 0 <= ny <= 1 and q > 0
