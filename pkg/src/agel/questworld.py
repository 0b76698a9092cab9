"""Deterministic grid-world quest simulator.

Entities sit on cells of a 12x12 grid; entity and wall cells are not
walkable. An agent that steps into the 4-neighbourhood of a hazardous entity
takes that entity's (hidden) hp effect, and the remaining commands of the
plan are dropped. Percepts expose entity kinds and locations only, never the
hazard annotations.
"""

from __future__ import annotations

import copy
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from agel.logic import Literal, LogicError, parse_literal
from agel.memory import FeedbackSignal

GRID = (12, 12)
HP_MAX = 100
STEP_BUDGET = 50
FIRE_DAMAGE = -50

KINDS = ("agent", "fire", "coin", "goblin", "sheep", "pumpkin", "npc", "door", "key", "potion")
PICKABLE = frozenset({"coin", "key", "potion", "pumpkin"})
MOVES = {"move_up": (0, -1), "move_down": (0, 1), "move_left": (-1, 0), "move_right": (1, 0)}
TARGETED = ("approach", "pickup", "attack", "talk", "use_item")
VERBS = (*MOVES, *TARGETED)

Cell = tuple[int, int]


class QuestError(ValueError):
    pass


def loc(cell: Cell) -> str:
    return f"loc{cell[0]}_{cell[1]}"


def parse_loc(name: str) -> Cell:
    if not name.startswith("loc") or "_" not in name:
        raise ValueError(f"not a location: {name!r}")
    x, y = name[3:].split("_")
    return int(x), int(y)


def neighbours(cell: Cell) -> list[Cell]:
    # fixed order: right, down, left, up
    x, y = cell
    return [(x + 1, y), (x, y + 1), (x - 1, y), (x, y - 1)]


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def bfs_path(
    start: Cell,
    goals: set[Cell],
    blocked: set[Cell],
    size: tuple[int, int] = GRID,
) -> list[Cell] | None:
    """Shortest path (excluding start) to any goal cell, deterministic tie-break."""
    if start in goals:
        return []
    w, h = size
    prev: dict[Cell, Cell | None] = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for nxt in neighbours(cur):
            if nxt in prev or nxt in blocked or not (0 <= nxt[0] < w and 0 <= nxt[1] < h):
                continue
            prev[nxt] = cur
            if nxt in goals:
                path = [nxt]
                while prev[path[-1]] != start:
                    path.append(prev[path[-1]])
                return path[::-1]
            queue.append(nxt)
    return None


def step_verb(a: Cell, b: Cell) -> str:
    d = (b[0] - a[0], b[1] - a[1])
    for verb, delta in MOVES.items():
        if delta == d:
            return verb
    raise ValueError(f"cells {a} and {b} are not adjacent")


# -- data types ------------------------------------------------------------


@dataclass
class Entity:
    kind: str
    cell: Cell
    properties: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Command:
    verb: str
    target: str | None = None

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb!r}")
        if (self.verb in MOVES) != (self.target is None):
            raise ValueError(f"{self.verb} {'takes no' if self.verb in MOVES else 'needs a'} target")

    def __str__(self) -> str:
        return self.verb if self.target is None else f"{self.verb}({self.target})"


@dataclass(frozen=True)
class QuestSpec:
    id: str
    goal_text: str
    goal_atom: Literal
    difficulty: int
    agent: Cell
    entities: tuple[tuple[str, str, Cell], ...]  # (id, kind, cell)
    walls: tuple[Cell, ...] = ()
    hazards: tuple[tuple[str, int], ...] = ()  # hidden: (kind, hp effect)
    step_budget: int = STEP_BUDGET
    inventory: tuple[str, ...] = ()

    @property
    def goal_entity(self) -> str:
        return self.goal_atom.args[-1]


@dataclass
class WorldState:
    size: tuple[int, int]
    agent: Cell
    entities: dict[str, Entity]
    walls: set[Cell]
    hazards: dict[str, int]
    agent_hp: int = HP_MAX
    hp_max: int = HP_MAX
    inventory: list[str] = field(default_factory=list)
    talked: set[str] = field(default_factory=set)
    defeated: set[str] = field(default_factory=set)
    step: int = 0
    seed: int = 0

    def occupied(self) -> set[Cell]:
        return {e.cell for e in self.entities.values()} | set(self.walls)

    def kinds_near(self, cell: Cell) -> set[str]:
        return {e.kind for e in self.entities.values() if manhattan(e.cell, cell) <= 1}

    def find(self, target: str) -> Entity | None:
        if target in self.entities:
            return self.entities[target]
        matches = [e for _, e in sorted(self.entities.items()) if e.kind == target]
        if not matches:
            return None
        return min(matches, key=lambda e: manhattan(e.cell, self.agent))

    def fingerprint(self) -> str:
        return json.dumps(
            {
                "agent": self.agent,
                "hp": self.agent_hp,
                "entities": {k: [e.kind, e.cell] for k, e in sorted(self.entities.items())},
                "inventory": sorted(self.inventory),
                "step": self.step,
            },
            sort_keys=True,
        )


# -- operations ------------------------------------------------------------


def observe(ws: WorldState) -> frozenset[Literal]:
    atoms = {Literal("at", ("agent", loc(ws.agent)))}
    for e in ws.entities.values():
        atoms.add(Literal("is", (e.kind, loc(e.cell))))
    for item in set(ws.inventory):
        atoms.add(Literal("has", ("agent", item)))
    for w in ws.walls:
        atoms.add(Literal("wall", (loc(w),)))
    if ws.agent_hp < ws.hp_max:
        atoms.add(Literal("hp", ("agent", "hurt" if ws.agent_hp > ws.hp_max // 4 else "critical")))
    return frozenset(atoms)


def _contact_effect(ws: WorldState, before: Cell, after: Cell) -> tuple[int, set[str]]:
    entered = ws.kinds_near(after) - ws.kinds_near(before)
    return sum(ws.hazards.get(k, 0) for k in entered), entered


def execute_one(ws: WorldState, cmd: Command) -> tuple[FeedbackSignal, set[str]]:
    """Apply one command in place. Returns its signal and the kinds newly touched."""
    if cmd.verb in MOVES:
        dx, dy = MOVES[cmd.verb]
        nxt = (ws.agent[0] + dx, ws.agent[1] + dy)
        w, h = ws.size
        if not (0 <= nxt[0] < w and 0 <= nxt[1] < h) or nxt in ws.occupied():
            return FeedbackSignal("message", "blocked"), set()
        before, ws.agent = ws.agent, nxt
        delta, touched = _contact_effect(ws, before, nxt)
        return _apply_hp(ws, delta), touched

    if cmd.verb == "approach":
        ent = ws.find(cmd.target)
        if ent is None:
            return FeedbackSignal("message", "invalid"), set()
        goals = {c for c in neighbours(ent.cell)}
        path = bfs_path(ws.agent, goals, ws.occupied(), ws.size)
        if path is None:
            return FeedbackSignal("message", "blocked"), set()
        total, touched = 0, set()
        for cell in path:
            d, t = _contact_effect(ws, ws.agent, cell)
            ws.agent = cell
            total += d
            touched |= t
            if d < 0:
                break
        return _apply_hp(ws, total), touched

    ent = ws.find(cmd.target) if cmd.verb != "use_item" else None
    if cmd.verb == "use_item":
        if cmd.target not in ws.inventory:
            return FeedbackSignal("message", "invalid"), set()
        if cmd.target == "potion":
            ws.inventory.remove("potion")
            gain = min(30, ws.hp_max - ws.agent_hp)
            return _apply_hp(ws, gain), set()
        if cmd.target == "key":
            door = ws.find("door")
            if door is None or manhattan(door.cell, ws.agent) > 1:
                return FeedbackSignal("message", "invalid"), set()
            ws.inventory.remove("key")
            del ws.entities[_id_of(ws, door)]
            return FeedbackSignal("inventory", "-key"), set()
        return FeedbackSignal("message", "invalid"), set()

    if ent is None or manhattan(ent.cell, ws.agent) != 1:
        return FeedbackSignal("message", "invalid"), set()
    if cmd.verb == "pickup":
        if ent.kind not in PICKABLE:
            return FeedbackSignal("message", "invalid"), set()
        del ws.entities[_id_of(ws, ent)]
        ws.inventory.append(ent.kind)
        return FeedbackSignal("inventory", f"+{ent.kind}", 1.0), set()
    if cmd.verb == "talk":
        if ent.kind != "npc":
            return FeedbackSignal("message", "invalid"), set()
        ws.talked.add(ent.kind)
        return FeedbackSignal("quest", f"talked:{ent.kind}", 1.0), set()
    # attack
    if ent.kind not in ("goblin", "sheep", "pumpkin"):
        return FeedbackSignal("message", "invalid"), set()
    del ws.entities[_id_of(ws, ent)]
    ws.defeated.add(ent.kind)
    return FeedbackSignal("quest", f"defeated:{ent.kind}", 1.0), set()


def _id_of(ws: WorldState, ent: Entity) -> str:
    return next(k for k, e in ws.entities.items() if e is ent)


def _apply_hp(ws: WorldState, delta: int) -> FeedbackSignal:
    ws.agent_hp = min(ws.hp_max, ws.agent_hp + delta)
    return FeedbackSignal("hp", int(delta))


def execute(
    ws: WorldState, commands: Sequence[Command], step_budget: int = STEP_BUDGET
) -> tuple[WorldState, list[FeedbackSignal]]:
    """Run commands on a copy of ``ws``; one signal per executed command.

    Execution stops after a command that cost hp (the plan is interrupted),
    when the agent dies, or when the step budget is used up.
    """
    ws = copy.deepcopy(ws)
    signals = []
    for cmd, sig, _ in run_commands(ws, commands, step_budget):
        signals.append(sig)
    return ws, signals


def run_commands(ws: WorldState, commands: Sequence[Command], step_budget: int = STEP_BUDGET):
    """Generator form of :func:`execute` that mutates ``ws`` in place."""
    for cmd in commands:
        if ws.step >= step_budget or ws.agent_hp <= 0:
            return
        sig, touched = execute_one(ws, cmd)
        ws.step += 1
        yield cmd, sig, touched
        if sig.channel == "hp" and sig.content < 0:
            return


def goal_holds(ws: WorldState, goal: Literal) -> bool:
    if goal.pred == "has":
        return goal.args[-1] in ws.inventory
    if goal.pred == "talked":
        return goal.args[-1] in ws.talked
    if goal.pred == "defeated":
        return goal.args[-1] in ws.defeated
    raise QuestError(f"unsupported goal predicate {goal.pred!r}")


def quest_status(ws: WorldState, q: QuestSpec) -> str:
    if goal_holds(ws, q.goal_atom):
        return "succeeded"
    if ws.agent_hp <= 0 or ws.step >= q.step_budget:
        return "failed"
    return "in_progress"


def reset(q: QuestSpec, seed: int = 0) -> WorldState:
    return WorldState(
        size=GRID,
        agent=q.agent,
        entities={eid: Entity(kind, cell) for eid, kind, cell in q.entities},
        walls=set(q.walls),
        hazards=dict(q.hazards),
        inventory=list(q.inventory),
        seed=seed,
    )


# -- curriculum files ------------------------------------------------------

_GOAL_PREDS = ("has", "talked", "defeated")


def _cell(value, where: str) -> Cell:
    if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, int) for v in value)):
        raise QuestError(f"{where}: expected [x, y], got {value!r}")
    x, y = value
    if not (0 <= x < GRID[0] and 0 <= y < GRID[1]):
        raise QuestError(f"{where}: cell {value} outside the {GRID[0]}x{GRID[1]} grid")
    return x, y


def quest_from_dict(d: dict, index: int = 0) -> QuestSpec:
    qid = d.get("id", f"#{index}")
    where = f"quests[{index}] (id={qid})"

    def need(key, typ):
        if key not in d:
            raise QuestError(f"{where}.{key}: missing")
        if not isinstance(d[key], typ):
            raise QuestError(f"{where}.{key}: expected {typ.__name__}")
        return d[key]

    need("id", str)
    goal_text = need("goal_text", str)
    try:
        goal = parse_literal(need("goal_atom", str))
    except LogicError as exc:
        raise QuestError(f"{where}.goal_atom: {exc}") from None
    if goal.pred not in _GOAL_PREDS or not goal.is_ground:
        raise QuestError(f"{where}.goal_atom: unsupported goal {goal}")
    difficulty = need("difficulty", int)
    if not 1 <= difficulty <= 5:
        raise QuestError(f"{where}.difficulty: must be 1-5")
    scene = need("scene", dict)
    agent = _cell(scene.get("agent"), f"{where}.scene.agent")
    ents = []
    for j, ent in enumerate(scene.get("entities", [])):
        kind = ent.get("kind")
        if kind not in KINDS or kind == "agent":
            raise QuestError(f"{where}.scene.entities[{j}].kind: unknown kind {kind!r}")
        ents.append((ent.get("id", f"{kind}{j}"), kind, _cell(ent.get("at"), f"{where}.scene.entities[{j}].at")))
    walls = tuple(_cell(c, f"{where}.scene.walls[{j}]") for j, c in enumerate(scene.get("walls", [])))
    hazards = []
    for j, hz in enumerate(d.get("hazards", [])):
        if hz.get("kind") not in KINDS or not isinstance(hz.get("hp"), int):
            raise QuestError(f"{where}.hazards[{j}]: need kind and integer hp")
        hazards.append((hz["kind"], hz["hp"]))
    budget = d.get("step_budget", STEP_BUDGET)
    if not isinstance(budget, int) or budget < 1:
        raise QuestError(f"{where}.step_budget: must be a positive integer")
    cells = [agent, *(c for _, _, c in ents), *walls]
    if len(set(cells)) != len(cells):
        raise QuestError(f"{where}.scene: two things share a cell")
    return QuestSpec(
        id=d["id"],
        goal_text=goal_text,
        goal_atom=goal,
        difficulty=difficulty,
        agent=agent,
        entities=tuple(ents),
        walls=walls,
        hazards=tuple(hazards),
        step_budget=budget,
        inventory=tuple(scene.get("inventory", [])),
    )


def load_curriculum(path: str | Path) -> list[QuestSpec]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict) or not isinstance(data.get("quests"), list):
        raise QuestError(f"{path}: expected an object with a 'quests' list")
    quests = [quest_from_dict(d, i) for i, d in enumerate(data["quests"])]
    ids = [q.id for q in quests]
    if len(set(ids)) != len(ids):
        raise QuestError(f"{path}: duplicate quest ids")
    return quests


def bundled(name: str = "curriculum.json") -> Path:
    return Path(__file__).parent / "data" / name


def hazard_strings(q: QuestSpec) -> list[str]:
    return [f"{k}:{hp}" for k, hp in q.hazards]


def percept_text(atoms: Iterable[Literal]) -> list[str]:
    return sorted(map(str, atoms))
