import re

import pytest

from agel.agent import (
    MODES,
    AgentConfig,
    blame,
    foundation_text,
    learn_from_experience,
    make_agent,
    perceive_and_act,
    run_quest,
)
from agel.cpg import CausalProgramGraph
from agel.logic import Literal, parse_clause, parse_program
from agel.questworld import bundled, load_curriculum, reset

CURRICULUM = {q.id: q for q in load_curriculum(bundled("curriculum.json"))}
RETRACTION = load_curriculum(bundled("curriculum_retraction.json"))


def warmed(mode, upto="q4", seed=0):
    st = make_agent(AgentConfig(mode=mode), seed)
    for qid in ["q1", "q2", "q3"][: int(upto[1:]) - 1]:
        run_quest(st, CURRICULUM[qid], seed)
    return st


@pytest.fixture(scope="module")
def runs():
    out = {}
    for mode in MODES:
        st = make_agent(AgentConfig(mode=mode), 0)
        recs, sizes = [], []
        for q in CURRICULUM.values():
            recs.append(run_quest(st, q, 0))
            if st.embeddings is not None:
                sizes.append(set(st.w.nodes) - {s for s in st.w.nodes if s in st.embeddings})
        out[mode] = (st, recs, sizes)
    return out


# -- examples ----------------------------------------------------------------


def test_naive_plan_on_empty_model_fails_after_one_command():
    st = warmed("full")
    q = CURRICULUM["q4"]
    before = st.metrics["interactions"]
    res = perceive_and_act(st, q, reset(q, 0))
    assert len(res.episodes) == 1
    assert res.commands == 1
    assert st.metrics["interactions"] == before + 1
    assert res.episodes[0].action == Literal("approach", ("fire",))
    assert res.episodes[0].hp_delta == -50


def test_detour_after_learning():
    st = warmed("full")
    q = CURRICULUM["q4"]
    res = perceive_and_act(st, q, reset(q, 0))
    st.memory.record(res.episodes)
    delta = learn_from_experience(st, res.episodes)
    assert [str(c) for c in delta.added] == ["causes_damage(X) :- is_harmful(X).", "is_harmful(fire)."]
    res2 = perceive_and_act(st, q, reset(q, 0), attempt=1)
    assert "fire" in res2.selected.avoid
    assert all(ep.hp_delta == 0 for ep in res2.episodes)
    assert res2.ws.agent_hp == 100
    verify = st.log.of("verify")[-1]
    assert verify["rejections"][0][:2] == [0, "fire"]


def test_no_ilp_repeats_the_failing_plan():
    st = warmed("no_ilp")
    q = CURRICULUM["q4"]
    plans = []
    for attempt in range(3):
        res = perceive_and_act(st, q, reset(q, 0), attempt)
        st.memory.record(res.episodes)
        assert learn_from_experience(st, res.episodes) is None
        plans.append(res.selected.describe())
        assert res.episodes[-1].hp_delta < 0
    assert len(set(plans)) == 1


def test_run_quest_on_fire_scenario():
    st = warmed("full")
    rec = run_quest(st, CURRICULUM["q4"], 0)
    assert rec.success and not rec.first_try
    assert rec.adaptation_trials == 1
    assert rec.rules_added == 2
    assert rec.iterations == 2
    assert rec.hp_lost == 50


def test_trivial_quest_first_try_and_baseline_fails_hard_ones(runs):
    for mode in MODES:
        assert runs[mode][1][0].first_try
    recs = {r.quest_id: r for r in runs["baseline"][1]}
    assert not recs["q9"].success and not recs["q10"].success


def test_rule_contradicted_twice_is_retracted():
    st = make_agent(AgentConfig(mode="full"), 0)
    recs = [run_quest(st, q, 0) for q in RETRACTION]
    contra = st.log.of("contradiction")
    retracted = st.log.of("retract")
    assert [c["count"] for c in contra] == [1, 2]
    assert len(retracted) == 1 and retracted[0]["clause"] == "is_harmful(fire)."
    assert sum(r.rules_retracted for r in recs) == 1
    assert parse_clause("is_harmful(fire).") not in st.w
    assert all(r.success for r in recs)


def test_threshold_one_retracts_immediately():
    st = make_agent(AgentConfig(mode="full", retraction_threshold=1), 0)
    for q in RETRACTION[:3]:
        run_quest(st, q, 0)
    assert len(st.log.of("retract")) == 1
    assert len(st.log.of("contradiction")) == 1


def test_blame_points_at_ground_fact():
    st = warmed("full")
    st.w.add_rule(parse_clause("causes_damage(X) :- is_harmful(X)."))
    st.w.add_rule(parse_clause("is_harmful(fire)."))
    assert str(blame(st, "fire")) == "is_harmful(fire)."


def test_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(mode="nope")
    with pytest.raises(ValueError):
        AgentConfig(retraction_threshold=0)


# -- invariants --------------------------------------------------------------

TOKENS = {
    "quest_start": "B", "observe": "O", "plan": "P", "verify": "V", "judge": "V", "command": "C", "signal": "S",
    "record": "R", "contradiction": "X", "retract": "T", "ground": "G", "learn": "L", "quest_status": "Q",
    "quest_end": "E",
}
ATTEMPT = r"O(?:PV)*P?(?:CS)*R(?:XT?)*(?:GL?)?Q"
GRAMMAR = re.compile(rf"(?:B(?:{ATTEMPT})+E)*")


def log_grammar_ok(events) -> bool:
    return GRAMMAR.fullmatch("".join(TOKENS[e["event"]] for e in events)) is not None


def test_grammar_checker_rejects_out_of_order():
    assert log_grammar_ok([{"event": k} for k in ["quest_start", "observe", "plan", "verify", "record", "quest_status", "quest_end"]])
    assert not log_grammar_ok([{"event": k} for k in ["quest_start", "observe", "command", "signal", "plan", "record", "quest_status", "quest_end"]])
    assert not log_grammar_ok([{"event": k} for k in ["quest_start", "observe", "plan", "learn", "record", "quest_status", "quest_end"]])


def test_log_grammar_in_every_mode(runs):
    for mode in MODES:
        assert log_grammar_ok(runs[mode][0].log.events), mode


def test_vocabulary_sync(runs):
    for mode in ("full", "no_ilp"):
        assert all(not missing for missing in runs[mode][2]), mode


def test_no_ilp_never_mutates_model():
    st = make_agent(AgentConfig(mode="no_ilp"), 0)
    before, rev = st.w.snapshot(), st.w.revision
    for q in list(CURRICULUM.values())[:6]:
        run_quest(st, q, 0)
    assert st.w.snapshot() == before and st.w.revision == rev


def test_no_ntp_never_verifies(monkeypatch):
    import agel.agent

    def boom(*a, **k):
        raise AssertionError("prover used for selection")

    monkeypatch.setattr(agel.agent, "verify_and_select", boom)
    st = make_agent(AgentConfig(mode="no_ntp"), 0)
    assert st.embeddings is None
    for q in list(CURRICULUM.values())[:6]:
        run_quest(st, q, 0)
    assert not st.log.of("verify")


class SealedGraph(CausalProgramGraph):
    def _sealed(self, *a, **k):
        raise AssertionError("world model read")

    __iter__ = __contains__ = __len__ = clauses_for = facts = copy = snapshot = _sealed

    @property
    def nodes(self):
        raise AssertionError("world model read")


def test_baseline_never_reads_model():
    st = make_agent(AgentConfig(mode="baseline"), 0)
    st.w = SealedGraph(parse_program(foundation_text()))
    for q in list(CURRICULUM.values())[:6]:
        run_quest(st, q, 0)
    with pytest.raises(AssertionError):
        list(st.w)


def failures_by_quest(events):
    """(quest, selected plan, damaging entities) for each attempt that took damage."""
    out, selected = [], None
    for ev in events:
        if ev["event"] in ("verify", "judge") and ev["selected"]:
            selected = ev["selected"]
        elif ev["event"] == "record":
            hurt = [ep for ep in ev["episodes"] if any(s["channel"] == "hp" and s["content"] < 0 for s in ep["feedback"])]
            if hurt:
                out.append((ev["quest"], selected, tuple(hurt[-1]["contacts"])))
    return out


@pytest.mark.parametrize("mode", ["full", "no_ntp"])
def test_same_failure_not_repeated(runs, mode):
    fails = failures_by_quest(runs[mode][0].log.events)
    assert fails
    assert len(fails) == len(set(fails))


def test_no_ilp_does_repeat_failures(runs):
    fails = failures_by_quest(runs["no_ilp"][0].log.events)
    assert len(fails) > len(set(fails))


def implicated_then_touched(events):
    """Non-forced attempts whose executed plan touched an entity the model had learned to be harmful."""
    implicated, forced, bad = set(), False, []
    for ev in events:
        kind = ev["event"]
        if kind == "learn":
            implicated |= {c[len("is_harmful("):-2] for c in ev["added"] if c.startswith("is_harmful(")}
        elif kind == "retract" and ev["clause"].startswith("is_harmful("):
            implicated.discard(ev["clause"][len("is_harmful("):-2])
        elif kind == "verify" and ev["selected"]:
            forced = ev["forced"]
        elif kind == "record" and not forced:
            touched = {c for ep in ev["episodes"] for c in ep["contacts"]}
            if touched & implicated:
                bad.append((ev["quest"], ev["attempt"], sorted(touched & implicated)))
    return bad


@pytest.mark.parametrize("quests", [list(CURRICULUM.values()), RETRACTION], ids=["main", "retraction"])
def test_full_mode_avoids_implicated_entities(quests):
    st = make_agent(AgentConfig(mode="full"), 0)
    for q in quests:
        run_quest(st, q, 0)
    assert st.log.of("learn")
    assert implicated_then_touched(st.log.events) == []
