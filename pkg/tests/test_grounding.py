import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agel.cpg import CausalProgramGraph
from agel.grounding import (
    CHAIN2,
    IDENT,
    PROP,
    CausalHypothesis,
    InductionTask,
    PredictionError,
    append_induced_log,
    contrast_negatives,
    detect_prediction_error,
    ground,
    ground_verbose,
    induce,
    is_consistent,
    mcs,
)
from agel.logic import Literal, entails, parse_clause, parse_literal, parse_program
from agel.memory import Episode, EpisodicMemory, FeedbackPattern, FeedbackSignal
from agel.provers import DiscreteProver

L = parse_literal
C_FAIL = frozenset(map(L, ["at(agent, loc1)", "is(fire, loc1)", "is(coin, loc1)"]))
C_OK = C_FAIL - {L("is(fire, loc1)")}
FIRE_RULES = parse_program("causes_damage(X) :- is_harmful(X).\nis_harmful(fire).\n")


def ep(step, state, action="approach(fire)", hp=0, contacts=()):
    return Episode(frozenset(state), L(action), (FeedbackSignal("hp", hp),), step, "q", frozenset(contacts))


def test_detect_error_without_rules():
    err = detect_prediction_error(ep(1, C_FAIL, hp=-10), CausalProgramGraph(), DiscreteProver())
    assert err.kind == "unexpected_damage"
    assert err.expected == FeedbackPattern("hp", 0) and err.actual.content == -10


def test_detect_no_error_when_predicted():
    w = CausalProgramGraph(FIRE_RULES)
    assert detect_prediction_error(ep(1, C_FAIL, hp=-10), w, DiscreteProver()) is None
    assert detect_prediction_error(ep(1, C_FAIL, action="approach(coin)"), w, DiscreteProver()) is None


def test_detect_missing_damage():
    w = CausalProgramGraph(FIRE_RULES)
    err = detect_prediction_error(ep(1, C_FAIL, hp=0), w, DiscreteProver())
    assert err.kind == "missing_damage" and err.predicted == {"fire": 1.0}


def test_prediction_error_requires_mismatch():
    with pytest.raises(ValueError):
        PredictionError(ep(1, C_FAIL), FeedbackPattern("hp", 0), FeedbackSignal("hp", 0))


def _error(fail):
    return PredictionError(fail, FeedbackPattern("hp", 0), fail.feedback[0])


def test_mcs_fire_example():
    m = EpisodicMemory()
    ok, fail = ep(1, C_OK, "approach(coin)"), ep(2, C_FAIL, hp=-10)
    m.record([ok, fail])
    h = mcs(_error(fail), m)
    assert h.literal == L("causes_damage(fire)")
    assert h.antecedent == L("is(fire, loc1)") and h.provenance == (2, 1)


def test_mcs_two_literal_difference_is_skipped():
    m = EpisodicMemory()
    ok = ep(1, C_OK - {L("is(coin, loc1)")}, "approach(coin)")
    fail = ep(2, C_FAIL, hp=-10)
    m.record([ok, fail])
    assert mcs(_error(fail), m) is None


def test_mcs_no_pair():
    m = EpisodicMemory()
    fail = ep(2, C_FAIL, hp=-10)
    m.record([fail])
    assert mcs(_error(fail), m) is None


def hyp(lit="causes_damage(fire)"):
    return CausalHypothesis(L(lit), L("is(fire, loc1)"), (2, 1))


def test_induce_uses_existing_property():
    w = CausalProgramGraph(parse_program("is_harmful(fire)."))
    d = induce(hyp(), w, [L("causes_damage(coin)")])
    assert [str(c) for c in d.added] == ["causes_damage(X) :- is_harmful(X)."]


def test_induce_introduces_support_fact():
    d = induce(hyp(), CausalProgramGraph(), [L("causes_damage(coin)")])
    assert [str(c) for c in d.added] == ["causes_damage(X) :- is_harmful(X).", "is_harmful(fire)."]


def test_induce_rejects_candidates_hitting_negatives():
    w = CausalProgramGraph(parse_program("is_harmful(fire). is_harmful(coin). is_hot(fire)."))
    d = induce(hyp(), w, [L("causes_damage(coin)")])
    assert [str(c) for c in d.added] == ["causes_damage(X) :- is_hot(X)."]


def test_induce_existing_rule_adds_fact_only():
    w = CausalProgramGraph(parse_program("causes_damage(X) :- is_harmful(X).\nis_harmful(goblin)."))
    d = induce(hyp("causes_damage(sheep)"), w, [L("causes_damage(coin)")])
    assert [str(c) for c in d.added] == ["is_harmful(sheep)."]


def test_induce_refuses_entailed_or_negative_target():
    w = CausalProgramGraph(FIRE_RULES)
    assert induce(hyp(), w, []) is None
    assert induce(hyp(), CausalProgramGraph(), [L("causes_damage(fire)")]) is None


def test_induction_task_disjoint():
    with pytest.raises(ValueError):
        InductionTask((L("p(a)"),), (L("p(a)"),), ())


def test_metarule_shapes():
    assert str(IDENT.instantiate("p", ["q"])) == "p(X) :- q(X)."
    assert str(CHAIN2.instantiate("p", ["q", "r"])) == "p(X) :- q(X), r(X)."
    assert str(PROP.instantiate("p", ["q"])) == "p(X) :- q(X, Y)."


def test_contrast_negatives_skip_entailed():
    state = C_OK | {L("is(goblin, loc2)")}
    bg = parse_program("causes_damage(X) :- is_harmful(X).\nis_harmful(goblin).")
    assert contrast_negatives(hyp(), state, bg) == (L("causes_damage(coin)"),)


def fire_trace():
    m = EpisodicMemory()
    ok = ep(1, C_OK, "approach(coin)", contacts={"coin"})
    fail = ep(2, C_FAIL, hp=-50, contacts={"fire", "coin"})
    m.record([ok, fail])
    return m, [fail]


def test_ground_fire_trace():
    m, recent = fire_trace()
    res = ground_verbose(recent, m, CausalProgramGraph(), DiscreteProver())
    assert [str(c) for c in res.delta.added] == ["causes_damage(X) :- is_harmful(X).", "is_harmful(fire)."]
    assert res.negatives == (L("causes_damage(coin)"),) and res.metarule == "ident"
    assert res.skipped is None


def test_ground_skips():
    m, recent = fire_trace()
    assert ground([ep(3, C_OK, "approach(coin)")], m, CausalProgramGraph(), DiscreteProver()) is None
    m2 = EpisodicMemory()
    ok = ep(1, C_OK - {L("is(coin, loc1)")}, "approach(coin)")
    m2.record([ok, recent[0]])
    res = ground_verbose(recent, m2, CausalProgramGraph(), DiscreteProver())
    assert res.delta is None and res.skipped == "no singleton state difference"


def test_ground_never_proposes_existing_clause():
    m, recent = fire_trace()
    w = CausalProgramGraph(parse_program("causes_damage(X) :- is_harmful(X)."))
    d = ground(recent, m, w, DiscreteProver())
    assert [str(c) for c in d.added] == ["is_harmful(fire)."]


def test_induced_log(tmp_path):
    m, recent = fire_trace()
    res = ground_verbose(recent, m, CausalProgramGraph(), DiscreteProver())
    path = tmp_path / "induced.pl"
    append_induced_log(path, res, "t0")
    text = path.read_text()
    assert "%% induced at t0 from episodes 2 (fail) / 1 (success)" in text
    assert len(parse_program(text)) == 2


def minimal(bg, delta, pos, neg):
    for r in range(len(delta)):
        for sub in itertools.combinations(delta, r):
            if is_consistent(bg, sub, pos, neg):
                return False
    return True


PROPS = ["is_harmful", "is_hot", "is_wet", "is_sharp"]
ENTS = ["fire", "coin", "sheep", "key"]


@settings(max_examples=150, deadline=None)
@given(
    st.sets(st.tuples(st.sampled_from(PROPS), st.sampled_from(ENTS)), max_size=8),
    st.sampled_from(ENTS),
    st.sets(st.sampled_from(ENTS), max_size=3),
)
def test_induce_sound_minimal_deterministic(props, target, neg_ents):
    bg = [parse_clause(f"{p}({c}).") for p, c in sorted(props)]
    w = CausalProgramGraph(bg)
    h = hyp(f"causes_damage({target})")
    negs = [Literal("causes_damage", (c,)) for c in sorted(neg_ents - {target})]
    d = induce(h, w, negs)
    if d is None:
        return
    pos = [h.literal]
    assert all(entails([*bg, *d.added], p) for p in pos)
    assert not any(entails([*bg, *d.added], n) for n in negs)
    assert len(d.added) <= 3 and minimal(bg, d.added, pos, negs)
    assert induce(h, CausalProgramGraph(bg), negs).added == d.added
