"""Turning prediction errors into new rules.

Stage 1 (minimal contrastive search) finds a past episode with the same kind
of action and the expected outcome, and keeps the state difference only if it
is a single literal. Stage 2 generalises the resulting ground hypothesis with
a small metarule library, checked against the discrete entailment oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from agel.cpg import CausalProgramGraph, CpgDelta
from agel.logic import Clause, Literal, entails, is_var
from agel.memory import Episode, EpisodicMemory, FeedbackPattern, FeedbackSignal, hp_delta
from agel.ntp import EmbeddingTable

# outcome channel -> (causal predicate, reserved property used for support facts)
CAUSAL_PREDICATES = {
    "hp_damage": ("causes_damage", "is_harmful"),
    "hp_heal": ("causes_healing", "is_beneficial"),
    "item_blocked": ("blocks_pickup", "is_blocking"),
    "quest_advance": ("enables", "is_beneficial"),
}
RESERVED_PROPERTIES = ("is_harmful", "is_blocking", "is_beneficial")
HARM_PREDICATE, HARM_PROPERTY = CAUSAL_PREDICATES["hp_damage"]


@dataclass(frozen=True)
class Metarule:
    """Second-order schema; ``P``, ``Q``, ``R`` are predicate variables."""

    name: str
    body: tuple[tuple[str, int], ...]  # (predicate variable, arity) per body literal

    def instantiate(self, head: str, preds: Sequence[str]) -> Clause:
        body = []
        for (_, arity), p in zip(self.body, preds):
            body.append(Literal(p, ("X", "Y")[:arity]))
        return Clause(Literal(head, ("X",)), tuple(body))

    def __str__(self) -> str:
        parts = [f"{v}({', '.join('XY'[:a])})" for v, a in self.body]
        return f"{self.name}: P(X) <- {', '.join(parts)}"


IDENT = Metarule("ident", (("Q", 1),))
CHAIN2 = Metarule("chain2", (("Q", 1), ("R", 1)))
PROP = Metarule("prop", (("Q", 2),))
METARULES = (IDENT, CHAIN2, PROP)


@dataclass(frozen=True)
class PredictionError:
    failing_episode: Episode
    expected: FeedbackPattern
    actual: FeedbackSignal
    # entity -> proof score of the harm predicate, for entities predicted harmful
    predicted: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.expected.matches([self.actual]):
            raise ValueError("expected and actual feedback agree")

    @property
    def kind(self) -> str:
        return "unexpected_damage" if self.expected.value == 0 else "missing_damage"


@dataclass(frozen=True)
class CausalHypothesis:
    literal: Literal
    antecedent: Literal
    provenance: tuple[int, int]  # (failing step, success step)


@dataclass(frozen=True)
class InductionTask:
    positives: tuple[Literal, ...]
    negatives: tuple[Literal, ...]
    background: tuple[Clause, ...]

    def __post_init__(self):
        if set(self.positives) & set(self.negatives):
            raise ValueError("an atom cannot be both a positive and a negative example")


@dataclass
class GroundingConfig:
    sigma_min: float = 0.5
    depth_max: int = 3
    equivalence: Mapping[str, str] = field(default_factory=dict)
    metarules: tuple[Metarule, ...] = METARULES


@dataclass
class GroundingResult:
    error: PredictionError | None = None
    hypothesis: CausalHypothesis | None = None
    negatives: tuple[Literal, ...] = ()
    delta: CpgDelta | None = None
    metarule: str | None = None

    @property
    def skipped(self) -> str | None:
        if self.error is None:
            return "no prediction error"
        if self.hypothesis is None:
            return "no singleton state difference"
        if self.delta is None:
            return "no consistent hypothesis"
        return None


# -- stage 0: prediction errors -------------------------------------------


def touched(episode: Episode) -> list[str]:
    ents = episode.contacts or frozenset(a for a in episode.action.args if not is_var(a))
    return sorted(e for e in ents if e != "agent")


def predicted_harm(episode: Episode, w, prover, e: EmbeddingTable | None, sigma_min: float) -> dict[str, float]:
    out = {}
    for ent in touched(episode):
        sigma = prover(Literal(HARM_PREDICATE, (ent,)), w, e).score
        if sigma >= sigma_min:
            out[ent] = sigma
    return out


def detect_prediction_error(
    episode: Episode,
    w: CausalProgramGraph,
    prover,
    sigma_min: float = 0.5,
    e: EmbeddingTable | None = None,
) -> PredictionError | None:
    """Compare the hp outcome the model predicts for ``episode`` with what happened.

    Damage is predicted iff the harm predicate proves for some touched entity.
    """
    predicted = predicted_harm(episode, w, prover, e, sigma_min)
    delta = episode.hp_delta
    actual = FeedbackSignal("hp", delta)
    if predicted and delta >= 0:
        return PredictionError(episode, FeedbackPattern("hp", "<0"), actual, predicted)
    if not predicted and delta < 0:
        return PredictionError(episode, FeedbackPattern("hp", 0), actual)
    return None


def outcome_channel(error: PredictionError) -> str:
    if error.actual.channel == "hp":
        return "hp_damage" if error.actual.content < 0 else "hp_heal"
    if error.actual.channel == "inventory":
        return "item_blocked"
    return "quest_advance"


# -- stage 1: minimal contrastive search -----------------------------------


def mcs(
    error: PredictionError,
    m: EpisodicMemory,
    equivalence: Mapping[str, str] | None = None,
) -> CausalHypothesis | None:
    fail = error.failing_episode
    success = m.find_minimal_pair(fail.action, error.expected, equivalence, state=fail.state, exclude=fail)
    if success is None:
        return None
    diff = fail.state - success.state
    if len(diff) != 1:
        return None
    (antecedent,) = diff
    if not antecedent.args:
        return None
    pred, _ = CAUSAL_PREDICATES[outcome_channel(error)]
    return CausalHypothesis(Literal(pred, (antecedent.args[0],)), antecedent, (fail.step_index, success.step_index))


def contrast_negatives(
    hypothesis: CausalHypothesis, success_state: Iterable[Literal], background: Iterable[Clause], depth_max: int = 3
) -> tuple[Literal, ...]:
    """Causal predicate over every entity present when the action went fine.

    Atoms the background already entails are left out: they carry no
    evidence from this pair (the entity may simply not have been touched).
    """
    bg = list(background)
    pred = hypothesis.literal.pred
    subjects = sorted({a.args[0] for a in success_state if a.pred == "is" and a.args})
    out = []
    for s in subjects:
        atom = Literal(pred, (s,))
        if not entails(bg, atom, depth_max):
            out.append(atom)
    return tuple(out)


# -- stage 2: metarule induction -------------------------------------------


def _vocabulary(background: Sequence[Clause]) -> tuple[list[str], list[str]]:
    unary, binary = set(RESERVED_PROPERTIES), set()
    for c in background:
        for lit in (c.head, *c.body):
            if lit.arity == 1:
                unary.add(lit.pred)
            elif lit.arity == 2:
                binary.add(lit.pred)
    return sorted(unary), sorted(binary)


def candidate_hypotheses(
    target: Literal, background: Sequence[Clause], metarules: Sequence[Metarule], support: str | None
) -> Iterable[tuple[tuple[Clause, ...], str]]:
    head = target.pred
    unary, binary = _vocabulary(background)
    unary = [p for p in unary if p != head]
    binary = [p for p in binary if p != head]
    rules: list[tuple[Clause, str]] = []
    for mr in metarules:
        if mr.body == IDENT.body:
            rules += [(mr.instantiate(head, [q]), mr.name) for q in unary]
        elif mr.body == CHAIN2.body:
            rules += [(mr.instantiate(head, [q, r]), mr.name) for q, r in itertools.combinations(unary, 2)]
        elif mr.body == PROP.body:
            rules += [(mr.instantiate(head, [q]), mr.name) for q in binary]
    fact = Clause(Literal(support, target.args)) if support else None
    if fact is not None:
        yield (fact,), "support"
    for rule, name in rules:
        yield (rule,), name
    if fact is not None:
        for rule, name in rules:
            yield (rule, fact), name


def _cost(h: tuple[Clause, ...]) -> tuple:
    return (len(h), sum(len(c.body) for c in h), " ".join(sorted(map(str, h))))


def is_consistent(
    background: Sequence[Clause], h: Sequence[Clause], positives, negatives, depth_max: int = 3
) -> bool:
    kb = [*background, *h]
    return all(entails(kb, p, depth_max) for p in positives) and not any(
        entails(kb, n, depth_max) for n in negatives
    )


def search(task: InductionTask, metarules=METARULES, support: str | None = None, depth_max: int = 3):
    """Best (clauses, metarule name) under the preference order, or None."""
    (target,) = task.positives[:1] or (None,)
    if target is None:
        return None
    bg = list(task.background)
    best = None
    for h, name in candidate_hypotheses(target, bg, metarules, support):
        h = tuple(c for c in h if c not in bg)
        if not h:
            continue
        if best is not None and _cost(h) >= _cost(best[0]):
            continue
        if is_consistent(bg, h, task.positives, task.negatives, depth_max):
            best = (h, name)
    return best


def induce(
    h: CausalHypothesis,
    w: CausalProgramGraph,
    negatives: Sequence[Literal],
    metarules: Sequence[Metarule] = METARULES,
    depth_max: int = 3,
) -> CpgDelta | None:
    found = _induce(h, w, negatives, metarules, depth_max)
    return found[0] if found else None


def _induce(h, w, negatives, metarules, depth_max):
    bg = tuple(w)
    if entails(bg, h.literal, depth_max) or h.literal in negatives:
        return None
    support = {pred: prop for pred, prop in CAUSAL_PREDICATES.values()}.get(h.literal.pred)
    task = InductionTask((h.literal,), tuple(negatives), bg)
    found = search(task, metarules, support, depth_max)
    if found is None:
        return None
    clauses, name = found
    added = [c for c in clauses if c not in w]
    # rules before facts, matching how rule files are usually laid out
    added.sort(key=lambda c: c.is_fact)
    return CpgDelta(added=added, reason="induced"), name


def ground_verbose(
    recent: Sequence[Episode],
    m: EpisodicMemory,
    w: CausalProgramGraph,
    prover,
    cfg: GroundingConfig | None = None,
    e: EmbeddingTable | None = None,
) -> GroundingResult:
    cfg = cfg or GroundingConfig()
    out = GroundingResult()
    for ep in reversed(recent):
        err = detect_prediction_error(ep, w, prover, cfg.sigma_min, e)
        if err is not None and err.kind == "unexpected_damage":
            out.error = err
            break
    if out.error is None:
        return out
    out.hypothesis = mcs(out.error, m, cfg.equivalence)
    if out.hypothesis is None:
        return out
    fail = out.error.failing_episode
    success = m.find_minimal_pair(fail.action, out.error.expected, cfg.equivalence, state=fail.state, exclude=fail)
    out.negatives = contrast_negatives(out.hypothesis, success.state, w, cfg.depth_max)
    found = _induce(out.hypothesis, w, out.negatives, cfg.metarules, cfg.depth_max)
    if found is not None:
        out.delta, out.metarule = found
    return out


def ground(recent, m, w, prover, cfg=None, e=None) -> CpgDelta | None:
    return ground_verbose(recent, m, w, prover, cfg, e).delta


def append_induced_log(path: str | Path, result: GroundingResult, timestamp: str = "-") -> None:
    if result.delta is None:
        return
    fail_step, ok_step = result.hypothesis.provenance
    lines = [
        f"%% induced at {timestamp} from episodes {fail_step} (fail) / {ok_step} (success)",
        f"%% hypothesis {result.hypothesis.literal} via {result.metarule}",
        *map(str, result.delta.added),
    ]
    with open(path, "a") as fh:
        fh.write("\n".join(lines) + "\n")


def hp_outcome(episodes: Iterable[Episode]) -> int:
    return hp_delta(s for ep in episodes for s in ep.feedback)
