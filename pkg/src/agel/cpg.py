"""Causal Program Graph: the agent's world model as a directed hypergraph.

Nodes are predicate and constant symbols. Each hyperedge is a Horn clause
linking its body literals to its head. Duplicates are detected up to
variable renaming.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from agel.logic import Clause, LogicError, parse_program

PROVENANCE = ("bootstrap", "induced", "retraction")


@dataclass
class CpgDelta:
    added: list[Clause] = field(default_factory=list)
    retracted: list[Clause] = field(default_factory=list)
    reason: str = "induced"

    def __post_init__(self):
        if self.reason not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.reason!r}")
        if {c.canonical() for c in self.added} & {c.canonical() for c in self.retracted}:
            raise ValueError("a clause cannot be both added and retracted")

    def __bool__(self) -> bool:
        return bool(self.added or self.retracted)

    def merge(self, other: "CpgDelta") -> "CpgDelta":
        return CpgDelta(self.added + other.added, self.retracted + other.retracted, self.reason)


class CausalProgramGraph:
    def __init__(self, clauses: Iterable[Clause] = (), reason: str = "bootstrap"):
        self._edges: dict[Clause, Clause] = {}  # canonical -> stored, insertion ordered
        self._index: dict[str, list[Clause]] = {}
        self._symbol_counts: Counter[str] = Counter()
        self.provenance: dict[Clause, str] = {}
        self.revision = 0
        self.rules_added = 0
        self.rules_retracted = 0
        for c in clauses:
            self.add_rule(c, reason)

    # read side

    @property
    def nodes(self) -> set[str]:
        return set(self._symbol_counts)

    @property
    def edges(self) -> list[Clause]:
        return list(self._edges.values())

    def __len__(self) -> int:
        return len(self._edges)

    def __contains__(self, clause: Clause) -> bool:
        return clause.canonical() in self._edges

    def __iter__(self):
        return iter(self._edges.values())

    def clauses_for(self, predicate: str) -> list[Clause]:
        return list(self._index.get(predicate, ()))

    def facts(self) -> list[Clause]:
        return [c for c in self._edges.values() if c.is_fact]

    def copy(self) -> "CausalProgramGraph":
        g = CausalProgramGraph()
        g._edges = dict(self._edges)
        g._index = {k: list(v) for k, v in self._index.items()}
        g._symbol_counts = Counter(self._symbol_counts)
        g.provenance = dict(self.provenance)
        g.revision = self.revision
        g.rules_added = self.rules_added
        g.rules_retracted = self.rules_retracted
        return g

    # write side

    def add_rule(self, clause: Clause, reason: str = "induced") -> CpgDelta:
        if not isinstance(clause, Clause):
            raise LogicError(f"not a clause: {clause!r}")
        key = clause.canonical()
        if key in self._edges:
            return CpgDelta(reason=reason)
        self._edges[key] = clause
        self._index.setdefault(clause.head.pred, []).append(clause)
        self._symbol_counts.update(clause.symbols())
        self.provenance[key] = reason
        self.revision += 1
        self.rules_added += 1
        return CpgDelta(added=[clause], reason=reason)

    def retract_rule(self, clause: Clause) -> CpgDelta:
        key = clause.canonical()
        stored = self._edges.pop(key, None)
        if stored is None:
            return CpgDelta(reason="retraction")
        self._index[stored.head.pred].remove(stored)
        if not self._index[stored.head.pred]:
            del self._index[stored.head.pred]
        self._symbol_counts.subtract(stored.symbols())
        self._symbol_counts = +self._symbol_counts
        self.provenance.pop(key, None)
        self.revision += 1
        self.rules_retracted += 1
        return CpgDelta(retracted=[stored], reason="retraction")

    def apply(self, delta: CpgDelta) -> CpgDelta:
        """Apply a delta, returning the part that actually changed the graph."""
        out = CpgDelta(reason=delta.reason)
        for c in delta.retracted:
            out = out.merge(self.retract_rule(c))
        for c in delta.added:
            out = out.merge(self.add_rule(c, delta.reason))
        return out

    # persistence

    def snapshot(self, timestamp: str = "-") -> str:
        header = (
            f"%% revision: {self.revision}\n"
            f"%% nodes: {len(self._symbol_counts)}\n"
            f"%% edges: {len(self._edges)}\n"
            f"%% timestamp: {timestamp}\n"
        )
        return header + "".join(f"{c}\n" for c in self._edges.values())

    @classmethod
    def load(cls, text: str) -> "CausalProgramGraph":
        g = cls(parse_program(text))
        meta = read_header(text)
        if "revision" in meta:
            g.revision = int(meta["revision"])
        return g


def read_header(text: str) -> dict[str, str]:
    meta = {}
    for line in text.splitlines():
        if line.startswith("%%") and ":" in line:
            k, v = line[2:].split(":", 1)
            meta[k.strip()] = v.strip()
    return meta
