from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmmc import benchmarks
from llmmc.dtmc import BuildLimits, InducedDtmc, StateLimitExceeded, build, export_explicit
from llmmc.oracle import OracleConfig, make_oracle
from llmmc.pctl import (
    Ap,
    Globally,
    Not,
    PropertyError,
    SolverOptions,
    check,
    eventually,
    format_formula,
    load_properties,
    parse_property,
    qualitative_sets,
    state_values,
)
from llmmc.prism import parse_model
from llmmc.semantics import compile_model
from oracles import gambler_rows, random_chain, read_explicit


def _scripted(model, rule):
    return make_oracle(model, OracleConfig(kind="scripted"), scripted=rule)


# -- building --------------------------------------------------------------


def test_terminal_initial_state():
    m = compile_model(parse_model("mdp\nmodule m\n x : [0..1] init 0;\n [a] x=1 -> (x'=0);\nendmodule\n"))
    dtmc = build(m, _scripted(m, lambda v: "a"))
    assert dtmc.num_states == 1
    assert dtmc.rows == [[(0, Fraction(1))]]
    assert dtmc.stats.terminal_self_loops == 1
    assert dtmc.stats.num_transitions_without_self_loops == 0


def test_export_format(tmp_path):
    m = compile_model(
        parse_model('mdp\nmodule m\n x : [0..1] init 0;\n [a] x=0 -> (x\'=1);\nendmodule\nlabel "done" = x=1;\n')
    )
    dtmc = build(m, _scripted(m, lambda v: "a"))
    export_explicit(dtmc, tmp_path / "t.tra", tmp_path / "t.lab")
    assert (tmp_path / "t.tra").read_text() == "dtmc\n0 1 1\n1 1 1\n"
    assert (tmp_path / "t.lab").read_text() == "#DECLARATION\ninit done\n#END\n0: init\n1: done\n"


def test_probabilities_are_written_exactly(tmp_path, frozen_lake):
    dtmc = build(frozen_lake, _scripted(frozen_lake, lambda v: "down"))
    export_explicit(dtmc, tmp_path / "l.tra", tmp_path / "l.lab")
    rows, _, _ = read_explicit(tmp_path / "l.tra", tmp_path / "l.lab")
    for built, read in zip(dtmc.rows, rows):
        assert [float(p) for _, p in built] == [p for _, p in read]


def test_scripted_table_matches_rule(stock_market):
    rule = benchmarks.scripted_policies("stock_market")["round_trip"]
    by_rule = build(stock_market, _scripted(stock_market, rule))
    table = benchmarks.policy_table(rule, [s for i, s in enumerate(by_rule.states) if not by_rule.is_terminal(i)],
                                    stock_market.names)
    by_table = build(stock_market, _scripted(stock_market, table))
    assert by_table.states == by_rule.states and by_table.rows == by_rule.rows


def test_prefetch_gives_same_chain(stock_market):
    rule = benchmarks.scripted_policies("stock_market")["round_trip"]
    plain = build(stock_market, _scripted(stock_market, rule))
    threaded = build(stock_market, _scripted(stock_market, rule), prefetch_workers=4)
    assert plain.states == threaded.states
    assert plain.rows == threaded.rows
    assert plain.chosen_action == threaded.chosen_action


def test_build_is_deterministic(frozen_lake):
    rule = benchmarks.scripted_policies("frozen_lake")["hole_avoiding"]
    a = build(frozen_lake, _scripted(frozen_lake, rule))
    b = build(frozen_lake, _scripted(frozen_lake, rule))
    assert (a.states, a.rows, a.labels) == (b.states, b.rows, b.labels)


def test_state_limit(stock_market):
    rule = benchmarks.scripted_policies("stock_market")["round_trip"]
    with pytest.raises(StateLimitExceeded):
        build(stock_market, _scripted(stock_market, rule), BuildLimits(max_states=10))


def test_rows_are_stochastic_and_policy_consistent(stock_market):
    rule = benchmarks.scripted_policies("stock_market")["round_trip"]
    dtmc = build(stock_market, _scripted(stock_market, rule))
    for i, s in enumerate(dtmc.states):
        assert sum(p for _, p in dtmc.rows[i]) == 1
        if not dtmc.is_terminal(i):
            assert dtmc.chosen_action[i] == rule(stock_market.as_dict(s))
            assert dtmc.chosen_action[i] in stock_market.enabled_actions(s)


# -- property parsing ------------------------------------------------------


@pytest.mark.parametrize(
    "text",
    [
        'P=? [ F "water" ]',
        'P<=0.1 [ G !"water" ]',
        'P>0.5 [ "a" U<=3 "b" ]',
        'P>=1 [ X ("a" & !"b") ]',
        '"safe": P<0.2 [ F<=7 "water" | "goal" ]',
    ],
)
def test_property_round_trip(text):
    f = parse_property(text)
    assert parse_property(format_formula(f)) == f


@pytest.mark.parametrize("text", ['R=? [ F "a" ]', 'Pmax=? [ F "a" ]', 'P<=1.5 [ F "a" ]', 'P=? [ F "a"', "P=? [ F a ]"])
def test_property_errors(text):
    with pytest.raises(PropertyError):
        parse_property(text)


def test_strict_bound_is_one_less():
    assert parse_property('P=? [ F<3 "a" ]') == parse_property('P=? [ F<=2 "a" ]')


def test_load_properties_skips_comments():
    assert load_properties('// c\nP=? [ F "a" ]\n\n  // d\nP=? [ G "b" ]\n') == ['P=? [ F "a" ]', 'P=? [ G "b" ]']


# -- checking --------------------------------------------------------------


def _gambler(n):
    return InducedDtmc.from_rows(gambler_rows(n), [("top",) if k == n else () for k in range(n + 1)])


def test_qualitative_sets_gambler():
    dtmc = _gambler(4)
    prob0, prob1 = qualitative_sets(dtmc, dtmc.states_with("top"))
    assert prob0 == {0} and prob1 == {4}


def test_even_split():
    dtmc = InducedDtmc.from_rows([[(1, 0.5), (2, 0.5)], [(1, 1.0)], [(2, 1.0)]], [(), ("a",), ()])
    r = check(dtmc, 'P=? [ F "a" ]')
    assert r.value == pytest.approx(0.5, abs=1e-12)


def test_threshold_verdicts_and_boundary():
    dtmc = InducedDtmc.from_rows([[(1, 0.5), (2, 0.5)], [(1, 1.0)], [(2, 1.0)]], [(), ("a",), ()])
    assert check(dtmc, 'P<0.6 [ F "a" ]').satisfied is True
    assert check(dtmc, 'P>0.6 [ F "a" ]').satisfied is False
    assert check(dtmc, 'P<=0.5 [ F "a" ]').boundary is True
    assert check(dtmc, '!"a"').satisfied is True


def test_unknown_label():
    with pytest.raises(PropertyError):
        check(_gambler(4), 'P=? [ F "nope" ]')


def test_direct_and_iterative_agree_on_lake(frozen_lake):
    rule = benchmarks.scripted_policies("frozen_lake")["hole_avoiding"]
    dtmc = build(frozen_lake, _scripted(frozen_lake, rule))
    r = check(dtmc, 'P=? [ F "water" ]')
    assert r.method == "direct_solve"
    assert r.cross_check_delta is not None and r.cross_check_delta <= 1e-8
    vi = check(dtmc, 'P=? [ F "water" ]', SolverOptions(method="value_iteration"))
    assert vi.method == "value_iteration"
    assert abs(vi.value - r.value) <= 1e-8


def test_next_operator():
    dtmc = InducedDtmc.from_rows([[(0, 0.25), (1, 0.75)], [(1, 1.0)]], [(), ("a",)])
    assert check(dtmc, 'P=? [ X "a" ]').value == pytest.approx(0.75)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 30))
def test_bounded_is_monotone_and_below_unbounded(seed, k):
    rows, labels = random_chain(np.random.default_rng(seed), n=12)
    dtmc = InducedDtmc.from_rows(rows, labels)
    a = state_values(dtmc, eventually(Ap("t"), k))
    b = state_values(dtmc, eventually(Ap("t"), k + 1))
    full = state_values(dtmc, eventually(Ap("t")))
    assert np.all(a <= b + 1e-12)
    assert np.all(b <= full + 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_globally_complements_eventually(seed):
    rows, labels = random_chain(np.random.default_rng(seed), n=12)
    dtmc = InducedDtmc.from_rows(rows, labels)
    g = state_values(dtmc, Globally(Ap("t")))
    f = state_values(dtmc, eventually(Not(Ap("t"))))
    assert np.allclose(g + f, 1.0, atol=1e-9)
    assert np.all((g >= 0) & (g <= 1))
