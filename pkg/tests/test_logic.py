import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agel.agent import foundation_text
from agel.logic import (
    Clause,
    Literal,
    LogicError,
    ParseError,
    RangeRestrictionError,
    entails,
    is_var,
    parse_clause,
    parse_literal,
    parse_program,
    proof_path,
    render_program,
    unify,
)

from conftest import CONSTS, clauses, ground_literals, literals

L = parse_literal


def test_parse_rule_and_fact():
    c = parse_clause("causes_damage(X) :- is_harmful(X).")
    assert c.head == L("causes_damage(X)") and c.body == (L("is_harmful(X)"),)
    f = parse_clause("is_harmful(fire).")
    assert f.is_fact and f.head == Literal("is_harmful", ("fire",))


def test_range_restriction_rejected():
    with pytest.raises(RangeRestrictionError):
        parse_clause("p(X) :- q(Y).")


def test_syntax_error_has_position():
    with pytest.raises(ParseError) as ei:
        parse_program("p(a).\nq(b) :- .\n")
    assert (ei.value.line, ei.value.column) == (2, 9)


@pytest.mark.parametrize("bad", ["p(a)", "P(a).", "p(a,b,c,d).", "p(a) q(b).", "p(#)."])
def test_parse_errors(bad):
    with pytest.raises(LogicError):
        parse_clause(bad)


def test_comments_and_canonical_render():
    c = parse_clause("causes_damage( X ):-is_harmful(X) . % trailing")
    assert str(c) == "causes_damage(X) :- is_harmful(X)."


def test_foundation_round_trips():
    prog = parse_program(foundation_text())
    assert prog
    assert parse_program(render_program(prog)) == prog


@given(clauses())
def test_round_trip_property(c):
    assert parse_clause(str(c)) == c


def test_unify_examples():
    assert unify(L("is(fire, loc1)"), L("is(fire, loc1)")) == {}
    assert unify(L("causes_damage(X)"), L("causes_damage(fire)")) == {"X": "fire"}
    assert unify(L("is(fire, loc1)"), L("at(fire, loc1)")) is None
    assert unify(L("p(X, X)"), L("p(a, b)")) is None
    assert unify(L("p(X)"), L("p(a)"), {"X": "b"}) is None


def _ground_unifiers(a, b, consts):
    vs = sorted(a.variables() | b.variables())
    for combo in itertools.product(consts, repeat=len(vs)):
        g = dict(zip(vs, combo))
        if a.substitute(g) == b.substitute(g):
            yield g


@settings(max_examples=300)
@given(literals(max_arity=3), literals(max_arity=3))
def test_unify_sound_and_most_general(a, b):
    theta = unify(a, b)
    # a fresh constant stands for "anything else"; flat terms need no more
    consts = sorted(a.constants() | b.constants() | {"fresh"})
    grounds = list(_ground_unifiers(a, b, consts))
    if theta is None:
        assert not grounds
        return
    assert a.substitute(theta) == b.substitute(theta)
    # idempotent: no variable in the range is itself bound
    assert all(not (is_var(v) and v in theta) for v in theta.values())
    assert grounds
    for g in grounds:
        for v, t in g.items():
            assert Literal("x", (theta.get(v, v),)).substitute(g).args[0] == t


@given(literals(), literals(), st.dictionaries(st.sampled_from(["X", "Y"]), st.sampled_from(CONSTS), max_size=2))
def test_unify_extends_input(a, b, theta_in):
    theta = unify(a, b, theta_in)
    if theta is not None:
        for v, t in theta_in.items():
            assert theta.get(v, v) == t


def test_entails_examples(fire_kb):
    assert entails(fire_kb, L("causes_damage(fire)"), 3)
    assert not entails([], L("p(a)"), 3)
    assert not entails([parse_clause("p(a) :- p(a).")], L("p(a)"), 5)
    with pytest.raises(ValueError):
        entails(fire_kb, L("p(a)"), 0)


def test_entails_depth_is_proof_depth(fire_kb):
    assert not entails(fire_kb, L("causes_damage(fire)"), 1)
    assert entails(fire_kb, L("causes_damage(fire)"), 2)


def test_proof_path(fire_kb):
    path = proof_path(fire_kb, L("causes_damage(fire)"))
    assert [str(c) for c in path] == ["causes_damage(X) :- is_harmful(X).", "is_harmful(fire)."]
    assert proof_path(fire_kb, L("causes_damage(coin)")) is None


def _closure_levels(kb, depth):
    """Atoms provable with a proof tree of depth <= k, for k = 1..depth."""
    level = set()
    for _ in range(depth):
        level = {c.head for c in kb if all(b in level for b in c.body)}
    return level


@st.composite
def ground_kbs(draw):
    preds = ["p", "q", "r", "s"]
    atoms = ground_literals(preds, ["a", "b"], max_arity=1)
    n = draw(st.integers(0, 30))
    return [Clause(draw(atoms), tuple(draw(st.lists(atoms, max_size=2)))) for _ in range(n)]


@settings(max_examples=200)
@given(ground_kbs(), st.integers(1, 4))
def test_entails_matches_forward_closure(kb, depth):
    closure = _closure_levels(kb, depth)
    for pred, arg in itertools.product(["p", "q", "r", "s"], [(), ("a",), ("b",)]):
        goal = Literal(pred, arg)
        assert entails(kb, goal, depth) == (goal in closure)
