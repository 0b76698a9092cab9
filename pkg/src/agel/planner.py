"""Candidate plan generation, prover-backed verification, and translation.

Abstract plans are lists of atoms such as ``approach(fire)`` or
``grab(coin)``. A plan may carry an avoid set: entity kinds whose
4-neighbourhood the expanded movement must stay out of.
"""

from __future__ import annotations

import json
import logging
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from agel.cpg import CausalProgramGraph
from agel.logic import Clause, Literal, LogicError, parse_literal
from agel.ntp import EmbeddingTable, ProofResult
from agel.questworld import GRID, Cell, Command, bfs_path, loc, manhattan, neighbours, parse_loc, step_verb

log = logging.getLogger(__name__)

FINAL_VERBS = {"has": "grab", "talked": "talk", "defeated": "attack"}
VERB_COMMANDS = {"grab": "pickup", "pickup": "pickup", "talk": "talk", "attack": "attack", "use_item": "use_item"}
# what executing a plan step would make true, for the reachability query
EFFECTS = {"grab": "picks", "pickup": "picks", "talk": "speaks", "attack": "strikes"}
SURFACE_PROPERTIES = ("is_harmful", "is_blocking")


class TranslationError(ValueError):
    pass


@dataclass(frozen=True)
class Subgoal:
    atom: Literal
    rationale_text: str
    proposed_plan: tuple[Literal, ...]
    avoid: frozenset[str] = frozenset()
    touches: frozenset[str] = frozenset()
    complete: bool = False

    def __post_init__(self):
        if not self.proposed_plan and not self.complete:
            raise ValueError("a subgoal needs a non-empty plan unless it is already complete")

    @property
    def effects(self) -> tuple[Clause, ...]:
        out = []
        for a in self.proposed_plan:
            if a.pred in EFFECTS and a.args:
                out.append(Clause(Literal(EFFECTS[a.pred], a.args[-1:])))
        return tuple(out)

    def describe(self) -> str:
        plan = ", ".join(map(str, self.proposed_plan)) or "(nothing to do)"
        return f"[{plan}]"


@dataclass(frozen=True)
class VerifierPolicy:
    sigma_min: float = 0.5
    harm_predicates: frozenset[str] = frozenset({"causes_damage"})
    reject_on_harm: bool = True

    def __post_init__(self):
        if not 0.0 < self.sigma_min < 1.0:
            raise ValueError("sigma_min must lie in (0, 1)")


@dataclass
class PlannerBackend:
    kind: str = "scripted"
    endpoint: str | None = None
    model: str = "default"
    template: str = "default"
    timeout: float = 30.0
    k: int = 3
    token_env: str = "AGEL_LLM_TOKEN"
    max_tokens: int = 512

    def __post_init__(self):
        if self.kind not in ("scripted", "external_llm"):
            raise ValueError(f"unknown planner backend {self.kind!r}")
        if self.kind == "external_llm" and not self.endpoint:
            raise ValueError("external_llm backend needs an endpoint")


# -- scene geometry from a percept -----------------------------------------


@dataclass
class Scene:
    agent: Cell
    entities: list[tuple[str, Cell]]
    walls: set[Cell]
    inventory: set[str]
    size: tuple[int, int] = GRID

    @classmethod
    def from_percept(cls, percept: Iterable[Literal], size: tuple[int, int] = GRID) -> "Scene":
        agent, ents, walls, inv = None, [], set(), set()
        for a in sorted(percept, key=str):
            if a.pred == "at" and a.args[0] == "agent":
                agent = parse_loc(a.args[1])
            elif a.pred == "is":
                ents.append((a.args[0], parse_loc(a.args[1])))
            elif a.pred == "wall":
                walls.add(parse_loc(a.args[0]))
            elif a.pred == "has" and a.args[0] == "agent":
                inv.add(a.args[1])
        if agent is None:
            raise TranslationError("percept has no at(agent, _) literal")
        return cls(agent, ents, walls, inv, size)

    def kinds(self) -> set[str]:
        return {k for k, _ in self.entities}

    def cells_of(self, kind: str) -> list[Cell]:
        return [c for k, c in self.entities if k == kind]

    def occupied(self) -> set[Cell]:
        return {c for _, c in self.entities} | self.walls

    def kinds_near(self, cell: Cell) -> set[str]:
        return {k for k, c in self.entities if manhattan(c, cell) <= 1}

    def zone(self, kinds: Iterable[str]) -> set[Cell]:
        out = set()
        for kind in kinds:
            for c in self.cells_of(kind):
                out.add(c)
                out.update(neighbours(c))
        return out

    def route(self, start: Cell, target: str, avoid: Iterable[str]) -> list[Cell] | None:
        cells = self.cells_of(target)
        if not cells:
            return None
        goals = {n for c in cells for n in neighbours(c)}
        blocked = self.occupied() | self.zone(set(avoid) - {target})
        return bfs_path(start, goals - blocked, blocked, self.size)

    def entered(self, path: Sequence[Cell], start: Cell) -> list[str]:
        """Kinds whose neighbourhood the path enters, in order of entry."""
        out, prev = [], self.kinds_near(start)
        for cell in path:
            near = self.kinds_near(cell)
            out += sorted(near - prev - set(out))
            prev = near
        return out


# -- translation -----------------------------------------------------------


@dataclass
class StepTrace:
    action: Literal
    commands: list[Command]
    cells: list[Cell]


def trace(plan: Sequence[Literal], percept, avoid: Iterable[str] = (), size=GRID) -> list[StepTrace]:
    scene = Scene.from_percept(percept, size)
    pos = scene.agent
    out = []
    for act in plan:
        if act.pred == "approach":
            target = act.args[0]
            if target not in scene.kinds():
                raise TranslationError(f"{act}: no {target} in the percept")
            path = scene.route(pos, target, avoid)
            if path is None:
                raise TranslationError(f"{act}: no route from {pos}")
            cmds, prev = [], pos
            for cell in path:
                cmds.append(Command(step_verb(prev, cell)))
                prev = cell
            out.append(StepTrace(act, cmds, path))
            pos = prev
        elif act.pred in VERB_COMMANDS:
            if len(act.args) != 1:
                raise TranslationError(f"{act}: expected one argument")
            target = act.args[0]
            if act.pred != "use_item" and target not in scene.kinds():
                raise TranslationError(f"{act}: no {target} in the percept")
            out.append(StepTrace(act, [Command(VERB_COMMANDS[act.pred], target)], []))
        else:
            raise TranslationError(f"{act}: unknown action")
    return out


def translate(plan: Sequence[Literal], percept, avoid: Iterable[str] = ()) -> list[Command]:
    return [c for st in trace(plan, percept, avoid) for c in st.commands]


def plan_touches(plan: Sequence[Literal], percept, avoid: Iterable[str] = ()) -> frozenset[str]:
    scene = Scene.from_percept(percept)
    out = set()
    for st in trace(plan, percept, avoid):
        for cell in st.cells:
            out |= scene.kinds_near(cell)
        if st.action.pred != "approach" and st.action.pred != "use_item":
            out.add(st.action.args[0])
    return frozenset(out - {"agent"})


# -- scripted generator ----------------------------------------------------


def surface_avoid(w: CausalProgramGraph | None) -> frozenset[str]:
    """Entities the model marks harmful or blocking with a plain fact."""
    if w is None:
        return frozenset()
    out = set()
    for c in w.facts():
        if c.head.pred in SURFACE_PROPERTIES and c.head.arity == 1:
            out.add(c.head.args[0])
    return frozenset(out)


def goal_satisfied(goal_atom: Literal, percept) -> bool:
    return goal_atom.pred == "has" and goal_atom in percept


def _final_action(goal_atom: Literal) -> Literal:
    verb = FINAL_VERBS.get(goal_atom.pred)
    if verb is None:
        raise TranslationError(f"no action achieves {goal_atom}")
    return Literal(verb, goal_atom.args[-1:])


def direct_plan(scene: Scene, goal_atom: Literal, avoid: frozenset[str]) -> tuple[Literal, ...] | None:
    """Shortest route to the goal, described by the landmarks it passes."""
    target = goal_atom.args[-1]
    final = _final_action(goal_atom)
    path = scene.route(scene.agent, target, avoid)
    if path is None:
        return None
    landmarks = [k for k in scene.entered(path, scene.agent) if k != target]
    plan = [Literal("approach", (k,)) for k in landmarks]
    percept = scene_percept(scene)
    try:
        end = scene.agent
        for st in trace(plan, percept, avoid):
            if st.cells:
                end = st.cells[-1]
        if not any(manhattan(end, c) == 1 for c in scene.cells_of(target)):
            plan.append(Literal("approach", (target,)))
        plan.append(final)
        trace(plan, percept, avoid)
    except TranslationError:
        plan = [Literal("approach", (target,)), final]
    return tuple(plan)


def scene_percept(scene: Scene) -> frozenset[Literal]:
    atoms = {Literal("at", ("agent", loc(scene.agent)))}
    atoms |= {Literal("is", (k, loc(c))) for k, c in scene.entities}
    atoms |= {Literal("wall", (loc(c),)) for c in scene.walls}
    atoms |= {Literal("has", ("agent", i)) for i in scene.inventory}
    return frozenset(atoms)


def _scripted(goal_atom, percept, avoid: frozenset[str], k: int) -> list[Subgoal]:
    scene = Scene.from_percept(percept)
    out: list[Subgoal] = []
    seen = set()

    def add(plan, av, why):
        if plan is None or (plan, av) in seen:
            return
        seen.add((plan, av))
        out.append(Subgoal(goal_atom, why, plan, av, plan_touches(plan, percept, av)))

    base = direct_plan(scene, goal_atom, avoid)
    if base is None and avoid:
        # nothing is reachable while steering clear of everything: offer the
        # unconstrained route and let verification decide
        avoid = frozenset()
        base = direct_plan(scene, goal_atom, avoid)
    if base is None:
        return []
    add(base, avoid, "direct route" + (f" avoiding {', '.join(sorted(avoid))}" if avoid else ""))
    for lm in [a.args[0] for a in base if a.pred == "approach" and a.args[0] != goal_atom.args[-1]]:
        av = avoid | {lm}
        add(direct_plan(scene, goal_atom, av), av, f"detour around {lm}")
    if "potion" in scene.inventory:
        add((Literal("use_item", ("potion",)), *base), avoid, "drink the potion first")
    if "key" in scene.inventory and "door" in scene.kinds():
        add((Literal("approach", ("door",)), Literal("use_item", ("key",)), *base), avoid, "open the door first")
    return out[:k]


def generate_subgoals(
    goal_text: str,
    goal_atom: Literal,
    percept,
    w: CausalProgramGraph | None,
    backend: PlannerBackend | None = None,
    k: int = 3,
    avoid: Iterable[str] = (),
    transport: Callable[[str, dict, dict, float], dict] | None = None,
) -> list[Subgoal]:
    if k < 1:
        raise ValueError("k must be >= 1")
    backend = backend or PlannerBackend()
    if goal_satisfied(goal_atom, percept):
        return [Subgoal(goal_atom, "goal already holds", (), complete=True)]
    avoid = frozenset(avoid)
    if backend.kind == "external_llm":
        try:
            cands = LlmClient(backend, transport).candidates(goal_text, goal_atom, percept, w, avoid, k)
        except LlmError as exc:
            log.warning("LLM backend failed (%s); using the scripted planner", exc)
            cands = []
        if cands:
            return cands[:k]
        log.warning("LLM backend gave no usable candidates; using the scripted planner")
    return _scripted(goal_atom, percept, avoid, k)


# -- verification ----------------------------------------------------------


@dataclass
class Verdict:
    selected: Subgoal | None
    proof: ProofResult | None
    # (candidate index, entity, sigma) for every harm rejection
    rejections: list[tuple[int, str, float]] = field(default_factory=list)
    reachable: list[float] = field(default_factory=list)

    @property
    def rejected_all(self) -> bool:
        return self.selected is None

    def implicated(self) -> set[str]:
        return {ent for _, ent, _ in self.rejections}


def verify_and_select(
    candidates: Sequence[Subgoal],
    w: CausalProgramGraph,
    embeddings: EmbeddingTable | None,
    policy: VerifierPolicy,
    prover,
) -> Verdict:
    if not candidates:
        raise ValueError("no candidates to verify")
    verdict = Verdict(None, None)
    admissible = []
    for i, cand in enumerate(candidates):
        if cand.complete:
            return Verdict(cand, ProofResult(1.0, []), verdict.rejections)
        harmed = False
        if policy.reject_on_harm:
            for ent in sorted(cand.touches):
                for hp in sorted(policy.harm_predicates):
                    sigma = prover(Literal(hp, (ent,)), w, embeddings).score
                    if sigma >= policy.sigma_min:
                        verdict.rejections.append((i, ent, sigma))
                        harmed = True
        if harmed:
            continue
        proof = prover(cand.atom, w, embeddings, cand.effects)
        verdict.reachable.append(proof.score)
        admissible.append((cand, proof))
        if proof.score >= policy.sigma_min:
            verdict.selected, verdict.proof = cand, proof
            return verdict
    if admissible:
        verdict.selected, verdict.proof = admissible[0]
    return verdict


def judge_select(candidates: Sequence[Subgoal], suspects: Iterable[str]) -> Verdict:
    """Selection without a prover: skip plans that touch a suspected entity.

    Stands in for an unverified generator's own judgment, which can only
    act on what it reads directly (plain facts, the last failure).
    """
    if not candidates:
        raise ValueError("no candidates to judge")
    suspects = set(suspects)
    verdict = Verdict(None, None)
    for i, cand in enumerate(candidates):
        bad = sorted(cand.touches & suspects)
        if not bad:
            verdict.selected = cand
            return verdict
        verdict.rejections += [(i, ent, 1.0) for ent in bad]
    return verdict


# -- external LLM backend --------------------------------------------------


class LlmError(RuntimeError):
    pass


PROMPTS = {
    "default": (
        "You control an agent in a grid world.\n"
        "Goal: {goal_text} ({goal_atom})\n"
        "Percept:\n{percept}\n"
        "Known rules:\n{rules}\n"
        "Keep away from: {avoid}\n"
        "Propose up to {k} candidate plans, one per line, in the form\n"
        "CANDIDATE <goal atom> :: <action>; <action>; ... :: <short reason>\n"
        "Actions: approach(E), grab(E), talk(E), attack(E), use_item(I).\n"
    ),
}

_CANDIDATE = re.compile(r"^\s*CANDIDATE\s+(.+?)\s*::\s*(.+?)\s*(?:::\s*(.*))?$")


def urllib_transport(url: str, body: dict, headers: dict, timeout: float) -> dict:
    req = urllib.request.Request(url, data=json.dumps(body).encode(), headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read().decode())
    except (urllib.error.URLError, TimeoutError, OSError, ValueError) as exc:
        raise LlmError(str(exc)) from exc


class LlmClient:
    def __init__(self, backend: PlannerBackend, transport=None):
        self.backend = backend
        self.transport = transport or urllib_transport

    def prompt(self, goal_text, goal_atom, percept, w, avoid, k) -> str:
        template = PROMPTS.get(self.backend.template)
        if template is None:
            raise LlmError(f"unknown prompt template {self.backend.template!r}")
        return template.format(
            goal_text=goal_text,
            goal_atom=goal_atom,
            percept="\n".join(sorted(map(str, percept))),
            rules="\n".join(map(str, w or [])) or "(none)",
            avoid=", ".join(sorted(avoid)) or "(nothing)",
            k=k,
        )

    def complete(self, prompt: str) -> str:
        token = os.environ.get(self.backend.token_env, "")
        headers = {"Content-Type": "application/json"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {"model": self.backend.model, "prompt": prompt, "max_tokens": self.backend.max_tokens}
        log.info("LLM request to %s: %s", self.backend.endpoint, json.dumps(body))
        reply = self.transport(self.backend.endpoint, body, headers, self.backend.timeout)
        log.info("LLM response: %s", json.dumps(reply))
        if isinstance(reply, dict):
            if isinstance(reply.get("text"), str):
                return reply["text"]
            choices = reply.get("choices")
            if choices and isinstance(choices[0], dict) and isinstance(choices[0].get("text"), str):
                return choices[0]["text"]
        raise LlmError("response has no text")

    def candidates(self, goal_text, goal_atom, percept, w, avoid, k) -> list[Subgoal]:
        text = self.complete(self.prompt(goal_text, goal_atom, percept, w, avoid, k))
        return parse_candidates(text, percept, avoid)


def parse_candidates(text: str, percept, avoid: frozenset[str] = frozenset()) -> list[Subgoal]:
    out = []
    for line in text.splitlines():
        m = _CANDIDATE.match(line)
        if not m:
            continue
        try:
            atom = parse_literal(m.group(1))
            plan = tuple(parse_literal(a) for a in m.group(2).split(";") if a.strip())
            if not plan:
                continue
            touches = plan_touches(plan, percept, avoid)
        except (LogicError, TranslationError):
            continue
        out.append(Subgoal(atom, (m.group(3) or "").strip(), plan, avoid, touches))
    return out
