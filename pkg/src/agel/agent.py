"""The agent loop: perceive, plan, verify, act, record, learn.

Four configurations share this loop:

* ``full``: verified planning over a growing world model, soft prover.
* ``no_ntp``: the model still grows, but plans run unverified and errors
  are detected with crisp entailment.
* ``no_ilp``: verified planning over the fixed foundational model.
* ``baseline``: no world model at all; only within-quest reflection.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import IO

from agel.cpg import CausalProgramGraph, CpgDelta
from agel.grounding import HARM_PREDICATE, HARM_PROPERTY, GroundingConfig, detect_prediction_error, ground_verbose
from agel.logic import Clause, Literal, derivable_atoms, parse_program
from agel.memory import Episode, EpisodicMemory, FeedbackSignal
from agel.ntp import EmbeddingTable, TrainConfig, fine_tune, train_bootstrap
from agel.planner import (
    PlannerBackend,
    Subgoal,
    VerifierPolicy,
    generate_subgoals,
    judge_select,
    surface_avoid,
    trace,
    verify_and_select,
)
from agel.provers import DiscreteProver, NtpProver
from agel.questworld import QuestSpec, WorldState, execute_one, observe, quest_status, reset

log = logging.getLogger(__name__)

MODES = ("full", "no_ntp", "no_ilp", "baseline")
STALL = Literal("stall")


def foundation_text() -> str:
    return (Path(__file__).parent / "data" / "foundation.pl").read_text()


@dataclass
class AgentConfig:
    mode: str = "full"
    policy: VerifierPolicy = field(default_factory=VerifierPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    grounding: GroundingConfig = field(default_factory=GroundingConfig)
    backend: PlannerBackend = field(default_factory=PlannerBackend)
    learn_every: int = 1
    retraction_threshold: int = 2
    attempt_budget: int = 20
    k: int = 3
    regen_rounds: int = 3
    memory_capacity: int = 256
    embedding_dim: int = 16

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.learn_every < 1 or self.retraction_threshold < 1 or self.attempt_budget < 1:
            raise ValueError("learn_every, retraction_threshold and attempt_budget must be >= 1")

    @property
    def learns(self) -> bool:
        return self.mode in ("full", "no_ntp")

    @property
    def verifies(self) -> bool:
        return self.mode in ("full", "no_ilp")

    @property
    def soft(self) -> bool:
        return self.mode in ("full", "no_ilp")


class EventLog:
    """JSONL event stream; events are kept in memory and optionally written."""

    def __init__(self, stream: IO[str] | None = None):
        self.events: list[dict] = []
        self.stream = stream

    def emit(self, kind: str, **fields) -> None:
        ev = {"seq": len(self.events), "event": kind, **fields}
        self.events.append(ev)
        if self.stream is not None:
            self.stream.write(json.dumps(ev, sort_keys=True) + "\n")

    def of(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["event"] == kind]


@dataclass
class AgentState:
    cfg: AgentConfig
    w: CausalProgramGraph
    embeddings: EmbeddingTable | None
    memory: EpisodicMemory
    log: EventLog = field(default_factory=EventLog)
    counters: dict[Clause, int] = field(default_factory=dict)
    metrics: dict[str, int] = field(default_factory=lambda: {"interactions": 0, "iterations": 0, "planner_calls": 0})
    reflection: frozenset[str] = frozenset()
    forced: bool = False
    steps: int = 0
    seed: int = 0

    @property
    def prover(self):
        depth = self.cfg.train.depth_max
        if self.cfg.soft:
            return NtpProver(depth, self.cfg.train.beam, self.cfg.train.sigma_floor)
        return DiscreteProver(depth)

    def next_step(self) -> int:
        self.steps += 1
        return self.steps


def bootstrap_embeddings(program: str, train: TrainConfig, dim: int, seed: int) -> EmbeddingTable:
    """Pre-trained embeddings for a foundational program (memoised per process)."""
    return _bootstrap(program, dataclasses.astuple(train), dim, seed).copy()


@lru_cache(maxsize=32)
def _bootstrap(program: str, train: tuple, dim: int, seed: int) -> EmbeddingTable:
    w = CausalProgramGraph(parse_program(program))
    cfg = dataclasses.replace(TrainConfig(*train), seed=seed)
    facts = sorted(derivable_atoms(w, cfg.depth_max), key=str)
    return train_bootstrap(w, facts, cfg, EmbeddingTable(dim, seed), reserved={HARM_PREDICATE: HARM_PROPERTY})


def make_agent(cfg: AgentConfig, seed: int = 0, foundation: str | None = None, stream=None) -> AgentState:
    text = foundation if foundation is not None else foundation_text()
    w = CausalProgramGraph(parse_program(text))
    emb = bootstrap_embeddings(text, cfg.train, cfg.embedding_dim, seed) if cfg.soft else None
    return AgentState(cfg, w, emb, EpisodicMemory(cfg.memory_capacity), EventLog(stream), seed=seed)


@dataclass
class AttemptResult:
    episodes: list[Episode]
    ws: WorldState
    commands: int = 0
    stalled: bool = False
    selected: Subgoal | None = None


def _visible_model(state: AgentState) -> CausalProgramGraph | None:
    return None if state.cfg.mode == "baseline" else state.w


def perceive_and_act(state: AgentState, quest: QuestSpec, ws: WorldState, attempt: int = 0) -> AttemptResult:
    cfg, lg = state.cfg, state.log
    percept = observe(ws)
    lg.emit("observe", quest=quest.id, attempt=attempt, percept=sorted(map(str, percept)))
    visible = _visible_model(state)
    # unverified modes pick plans by surface reading plus the last failure
    suspects = surface_avoid(visible) | state.reflection
    forced, state.forced = state.forced, False
    policy = dataclasses.replace(cfg.policy, reject_on_harm=False) if forced else cfg.policy
    avoid: frozenset[str] = frozenset()
    selected, fallback = None, None
    for _ in range(cfg.regen_rounds + 1):
        state.metrics["planner_calls"] += 1
        cands = generate_subgoals(quest.goal_text, quest.goal_atom, percept, visible, cfg.backend, cfg.k, avoid)
        lg.emit("plan", quest=quest.id, attempt=attempt, avoid=sorted(avoid), candidates=[c.describe() for c in cands])
        if not cands:
            break
        fallback = cands[0]
        if cfg.verifies:
            verdict = verify_and_select(cands, state.w, state.embeddings, policy, state.prover)
        else:
            verdict = judge_select(cands, suspects)
        lg.emit(
            "verify" if cfg.verifies else "judge",
            quest=quest.id,
            attempt=attempt,
            forced=forced,
            selected=verdict.selected.describe() if verdict.selected else None,
            sigma=round(verdict.proof.score, 6) if verdict.proof else None,
            rejections=[[i, ent, round(s, 6)] for i, ent, s in verdict.rejections],
        )
        if verdict.selected is not None:
            selected = verdict.selected
            break
        fresh = verdict.implicated() - avoid
        if not fresh:
            break
        avoid = avoid | fresh
    if selected is None and not cfg.verifies:
        # without a verifier nothing stops the generator from going ahead
        selected = fallback

    if selected is None:
        ep = Episode(percept, STALL, (FeedbackSignal("message", "stalled"),), state.next_step(), quest.id, attempt=attempt)
        state.forced = True
        return AttemptResult([ep], ws, stalled=True)

    episodes, n = [], 0
    halted = False
    for st in trace(selected.proposed_plan, percept, selected.avoid):
        if halted:
            break
        signals, contacts = [], set()
        for cmd in st.commands:
            if ws.step >= quest.step_budget or ws.agent_hp <= 0:
                halted = True
                break
            sig, touched = execute_one(ws, cmd)
            ws.step += 1
            n += 1
            signals.append(sig)
            contacts |= touched
            lg.emit("command", quest=quest.id, attempt=attempt, command=str(cmd))
            lg.emit("signal", quest=quest.id, attempt=attempt, signal=str(sig))
            if (sig.channel == "hp" and sig.content < 0) or ws.agent_hp <= 0:
                halted = True
                break
        ep = Episode(
            percept, st.action, tuple(signals), state.next_step(), quest.id, frozenset(contacts - {"agent"}), attempt
        )
        episodes.append(ep)
        if quest_status(ws, quest) == "succeeded":
            break
    state.metrics["interactions"] += n
    return AttemptResult(episodes, ws, n, selected=selected)


def blame(state: AgentState, entity: str) -> Clause | None:
    """Clause to hold responsible for a wrong harm prediction about ``entity``."""
    proof = state.prover(Literal(HARM_PREDICATE, (entity,)), state.w, state.embeddings)
    if not proof.path:
        return None
    for st in proof.path:
        if st.clause.is_fact and entity in st.clause.head.args and st.clause in state.w:
            return st.clause
    root = proof.path[0].clause
    return root if root in state.w else None


def learn_from_experience(state: AgentState, episodes: list[Episode]) -> CpgDelta | None:
    cfg = state.cfg
    if not cfg.learns:
        return None
    prover, e, sigma_min = state.prover, state.embeddings, cfg.policy.sigma_min
    delta = CpgDelta(reason="induced")

    # retraction bookkeeping: wrong damage predictions count against a clause
    for ep in episodes:
        if ep.action == STALL:
            continue
        err = detect_prediction_error(ep, state.w, prover, sigma_min, e)
        if err is not None and err.kind == "missing_damage":
            for ent in sorted(err.predicted):
                clause = blame(state, ent)
                if clause is None:
                    continue
                state.counters[clause] = state.counters.get(clause, 0) + 1
                state.log.emit("contradiction", clause=str(clause), entity=ent, count=state.counters[clause])
                if state.counters[clause] >= cfg.retraction_threshold:
                    out = state.w.retract_rule(clause)
                    state.counters.pop(clause, None)
                    delta = delta.merge(out)
                    state.log.emit("retract", clause=str(clause), revision=state.w.revision)
        elif err is None and ep.hp_delta < 0:
            # the prediction held: restart the count for whatever explained it
            for ent in sorted(ep.contacts):
                clause = blame(state, ent)
                if clause is not None and clause in state.counters:
                    state.counters[clause] = 0

    result = ground_verbose(episodes, state.memory, state.w, prover, cfg.grounding, e)
    if result.error is not None:
        state.log.emit(
            "ground",
            hypothesis=str(result.hypothesis.literal) if result.hypothesis else None,
            negatives=sorted(map(str, result.negatives)),
            skipped=result.skipped,
            metarule=result.metarule,
        )
    if result.delta:
        applied = state.w.apply(result.delta)
        delta = delta.merge(applied)
        state.log.emit("learn", added=[str(c) for c in applied.added], revision=state.w.revision)
        if cfg.mode == "full" and applied:
            state.embeddings = fine_tune(state.w, applied, dataclasses.replace(cfg.train, seed=state.seed), e)
    if state.embeddings is not None:
        state.embeddings.ensure(sorted(state.w.nodes))
    return delta if delta else None


@dataclass
class QuestRecord:
    quest_id: str
    difficulty: int
    mode: str
    seed: int
    success: bool
    first_try: bool
    iterations: int
    interactions: int
    adaptation_trials: int
    rules_added: int
    rules_retracted: int
    hp_lost: int = 0

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def run_quest(state: AgentState, quest: QuestSpec, seed: int = 0) -> QuestRecord:
    cfg = state.cfg
    state.reflection = frozenset()
    state.forced = False
    added0, retracted0 = state.w.rules_added, state.w.rules_retracted
    state.log.emit("quest_start", quest=quest.id, difficulty=quest.difficulty, goal=quest.goal_text)
    success, iterations, interactions, failures, hp_lost = False, 0, 0, 0, 0
    for attempt in range(cfg.attempt_budget):
        ws = reset(quest, seed)
        res = perceive_and_act(state, quest, ws, attempt)
        iterations += 1
        state.metrics["iterations"] += 1
        interactions += res.commands
        hp_lost += max(0, ws.hp_max - res.ws.agent_hp)
        state.memory.record(res.episodes)
        state.log.emit("record", quest=quest.id, attempt=attempt, episodes=[ep.to_json() for ep in res.episodes])
        if cfg.learns and (attempt + 1) % cfg.learn_every == 0:
            learn_from_experience(state, res.episodes)
        status = quest_status(res.ws, quest)
        if status != "succeeded" and res.ws.step < quest.step_budget and res.ws.agent_hp > 0:
            status = "failed"
        state.log.emit("quest_status", quest=quest.id, attempt=attempt, status=status, hp=res.ws.agent_hp)
        if status == "succeeded":
            success = True
            break
        failures += 1
        hurt = [ep for ep in res.episodes if ep.hp_delta < 0]
        if hurt and not cfg.verifies:
            state.reflection = frozenset(hurt[-1].contacts - {quest.goal_entity})
    record = QuestRecord(
        quest.id,
        quest.difficulty,
        cfg.mode,
        seed,
        success,
        success and failures == 0,
        iterations,
        interactions,
        failures,
        state.w.rules_added - added0,
        state.w.rules_retracted - retracted0,
        hp_lost,
    )
    state.log.emit("quest_end", record=record.to_json())
    return record
