"""Fixed-size episodic memory of (state, action, feedback) experiences."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from agel.logic import Literal, parse_literal

DEFAULT_CAPACITY = 256


@dataclass(frozen=True)
class FeedbackSignal:
    """One outcome signal. ``content`` is an int hp delta on the hp channel."""

    channel: str
    content: object
    intensity: float = 0.0

    CHANNELS = ("hp", "inventory", "quest", "message")

    def __post_init__(self):
        if self.channel not in self.CHANNELS:
            raise ValueError(f"unknown feedback channel {self.channel!r}")
        if isinstance(self.content, (int, float)) and not isinstance(self.content, bool):
            object.__setattr__(self, "intensity", float(abs(self.content)))

    def __str__(self) -> str:
        if self.channel == "hp":
            return f"HP: {self.content:+d}" if self.content else "HP: 0"
        return f"{self.channel}: {self.content}"

    def to_json(self) -> dict:
        return {"channel": self.channel, "content": self.content, "intensity": self.intensity}

    @classmethod
    def from_json(cls, d: Mapping) -> "FeedbackSignal":
        return cls(d["channel"], d["content"], d.get("intensity", 0.0))


def hp_delta(signals: Iterable[FeedbackSignal]) -> int:
    return sum(s.content for s in signals if s.channel == "hp")


@dataclass(frozen=True)
class FeedbackPattern:
    """Expected outcome on one channel, e.g. ``FeedbackPattern("hp", 0)``."""

    channel: str = "hp"
    value: object = 0

    def matches(self, signals: Iterable[FeedbackSignal]) -> bool:
        signals = list(signals)
        if self.channel == "hp":
            if self.value == "<0":
                return hp_delta(signals) < 0
            return hp_delta(signals) == self.value
        return any(s.channel == self.channel and s.content == self.value for s in signals)

    def __str__(self) -> str:
        return f"{self.channel}={self.value}"


@dataclass(frozen=True)
class Episode:
    state: frozenset[Literal]
    action: Literal
    feedback: tuple[FeedbackSignal, ...]
    step_index: int
    quest_id: str
    # entity kinds whose neighbourhood the action entered
    contacts: frozenset[str] = field(default_factory=frozenset)
    attempt: int = 0

    def __post_init__(self):
        if not all(a.is_ground for a in self.state):
            raise ValueError("episode state atoms must be ground")

    @property
    def hp_delta(self) -> int:
        return hp_delta(self.feedback)

    def to_json(self) -> dict:
        return {
            "step": self.step_index,
            "quest": self.quest_id,
            "attempt": self.attempt,
            "state": sorted(map(str, self.state)),
            "action": str(self.action),
            "feedback": [s.to_json() for s in self.feedback],
            "contacts": sorted(self.contacts),
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "Episode":
        return cls(
            frozenset(parse_literal(a) for a in d["state"]),
            parse_literal(d["action"]),
            tuple(FeedbackSignal.from_json(s) for s in d["feedback"]),
            int(d["step"]),
            d["quest"],
            frozenset(d.get("contacts", ())),
            int(d.get("attempt", 0)),
        )


def same_action(a: Literal, b: Literal, equivalence: Mapping[str, str] | None = None) -> bool:
    eq = equivalence or {}
    return eq.get(a.pred, a.pred) == eq.get(b.pred, b.pred) and a.arity == b.arity


class EpisodicMemory:
    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.buffer: deque[Episode] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.buffer)

    def __iter__(self):
        return iter(self.buffer)

    def record(self, episodes: Iterable[Episode]) -> "EpisodicMemory":
        last = self.buffer[-1].step_index if self.buffer else None
        for ep in episodes:
            if last is not None and ep.step_index <= last:
                raise ValueError(f"episode step {ep.step_index} is not after {last}")
            self.buffer.append(ep)
            last = ep.step_index
        return self

    def recent(self, n: int) -> list[Episode]:
        if n <= 0:
            return []
        return list(self.buffer)[-n:]

    def find_minimal_pair(
        self,
        action: Literal,
        expected: FeedbackPattern,
        equivalence: Mapping[str, str] | None = None,
        state: frozenset[Literal] | None = None,
        exclude: Episode | None = None,
    ) -> Episode | None:
        """Episode with an equivalent action and the expected outcome.

        Without ``state`` the most recent match wins. With ``state`` the match
        whose state leaves the fewest literals of ``state`` unexplained wins,
        newest first on ties.
        """
        best, best_size = None, None
        for ep in reversed(self.buffer):
            if ep is exclude or not same_action(ep.action, action, equivalence):
                continue
            if not expected.matches(ep.feedback):
                continue
            if state is None:
                return ep
            size = len(state - ep.state)
            if best_size is None or size < best_size:
                best, best_size = ep, size
        return best
