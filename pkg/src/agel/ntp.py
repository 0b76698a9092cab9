"""Differentiable backward-chaining prover over symbol embeddings.

Goals are resolved against clause heads of the same arity. Constant
arguments unify discretely; the predicate match is soft and scored by
``(1 + cos(u, v)) / 2`` on the predicate embeddings. A proof tree scores the
minimum of its step scores and a goal scores the best tree.

The set of proof trees depends only on the clauses, so trees are enumerated
once per (goal, program) and then re-scored cheaply as embeddings change.
"""

from __future__ import annotations

import itertools
import logging
import math
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from agel.cpg import CausalProgramGraph, CpgDelta
from agel.logic import Clause, Literal, Substitution, derivable_atoms, is_var, unify, walk

log = logging.getLogger(__name__)

EPS = 1e-6
MAX_TREES = 50_000


class EmbeddingTable:
    """Trainable symbol -> vector map. New symbols get a seeded uniform init."""

    def __init__(self, dim: int = 16, seed: int = 0, init_scale: float = 0.1):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self.init_scale = init_scale
        self.vectors: dict[str, np.ndarray] = {}
        self.train_log: list[dict] = []

    @classmethod
    def one_hot(cls, symbols: Iterable[str]) -> "EmbeddingTable":
        symbols = sorted(set(symbols))
        table = cls(dim=max(1, len(symbols)))
        for i, s in enumerate(symbols):
            v = np.zeros(table.dim)
            v[i] = 1.0
            table.vectors[s] = v
        return table

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def __getitem__(self, symbol: str) -> np.ndarray:
        try:
            return self.vectors[symbol]
        except KeyError:
            raise KeyError(f"no embedding for symbol {symbol!r}") from None

    def init_vector(self, symbol: str) -> np.ndarray:
        # seeded per symbol so the init does not depend on insertion order
        rng = np.random.default_rng([self.seed, zlib.crc32(symbol.encode())])
        return rng.uniform(-self.init_scale, self.init_scale, self.dim)

    def ensure(self, symbols: Iterable[str]) -> list[str]:
        added = []
        for s in symbols:
            if s not in self.vectors:
                self.vectors[s] = self.init_vector(s)
                added.append(s)
        return added

    def copy(self) -> "EmbeddingTable":
        t = EmbeddingTable(self.dim, self.seed, self.init_scale)
        t.vectors = {k: v.copy() for k, v in self.vectors.items()}
        t.train_log = list(self.train_log)
        return t

    def dumps(self) -> str:
        lines = [f"# dim={self.dim} seed={self.seed} vocab={len(self.vectors)}"]
        for s in sorted(self.vectors):
            lines.append(s + " " + " ".join(format(float(x), ".17g") for x in self.vectors[s]))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "EmbeddingTable":
        lines = text.splitlines()
        meta = dict(kv.split("=") for kv in lines[0].lstrip("# ").split())
        t = cls(dim=int(meta["dim"]), seed=int(meta["seed"]))
        for line in lines[1:]:
            if not line.strip():
                continue
            name, *vals = line.split()
            if len(vals) != t.dim:
                raise ValueError(f"{name}: expected {t.dim} values, got {len(vals)}")
            t.vectors[name] = np.array([float(v) for v in vals])
        if len(t.vectors) != int(meta["vocab"]):
            raise ValueError("vocab size does not match header")
        return t


def soft_unify(u: str, v: str, e: EmbeddingTable) -> float:
    if u == v:
        return 1.0
    a, b = e[u], e[v]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.5
    return float((1.0 + a @ b / (na * nb)) / 2.0)


def _soft_unify_grad(u: str, v: str, e: EmbeddingTable) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of soft_unify(u, v) with respect to the two vectors."""
    a, b = e[u], e[v]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    cos = a @ b / (na * nb)
    ga = b / (na * nb) - cos * a / na**2
    gb = a / (na * nb) - cos * b / nb**2
    return 0.5 * ga, 0.5 * gb


# -- proof trees -----------------------------------------------------------


@dataclass(frozen=True)
class ProofStep:
    goal: Literal
    clause: Clause
    theta: tuple[tuple[str, str], ...]

    @property
    def pair(self) -> tuple[str, str]:
        return self.goal.pred, self.clause.head.pred


@dataclass
class PathStep:
    clause: Clause
    substitution: Substitution
    score: float


@dataclass
class ProofResult:
    score: float
    path: list[PathStep] = field(default_factory=list)

    def __str__(self) -> str:
        lines = [f"sigma = {self.score:.6f}"]
        for i, st in enumerate(self.path, 1):
            sub = ", ".join(f"{k}={v}" for k, v in sorted(st.substitution.items()))
            lines.append(f"  {i}. {st.clause}  {{{sub}}}  score={st.score:.6f}")
        return "\n".join(lines)


@dataclass
class CompiledQuery:
    """All proof trees of a goal, grouped by the soft pairs they depend on."""

    goal: Literal
    trees: list[tuple[ProofStep, ...]]
    # one entry per distinct set of non-identical predicate pairs
    pair_sets: list[tuple[tuple[str, str], ...]]
    representative: list[int]


def _enumerate(goal: Literal, clauses: Sequence[Clause], depth_max: int, beam: int):
    by_arity: dict[int, list[Clause]] = {}
    for c in clauses:
        by_arity.setdefault(c.head.arity, []).append(c)
    counter = itertools.count()
    out: list[tuple[ProofStep, ...]] = []

    def candidates(lit: Literal, theta: Substitution):
        exact, soft = [], []
        for clause in by_arity.get(lit.arity, ()):
            suffix = str(next(counter))
            c = clause.rename(suffix)
            th = unify(Literal(c.head.pred, lit.args), c.head, theta)
            if th is None:
                continue
            (exact if c.head.pred == lit.pred else soft).append((clause, c, suffix, th))
        return (exact + soft)[:beam]

    def step(goals, theta, steps):
        if len(out) >= MAX_TREES:
            return
        if not goals:
            out.append(tuple(steps))
            return
        (lit, depth), rest = goals[0], goals[1:]
        if depth <= 0:
            return
        lit = lit.substitute(theta)
        for clause, c, suffix, th in candidates(lit, theta):
            local = tuple(sorted((v, walk(f"{v}_{suffix}", th)) for v in clause.variables()))
            st = ProofStep(lit, clause, local)
            step([(b, depth - 1) for b in c.body] + rest, th, steps + [st])

    step([(goal, depth_max)], {}, [])
    if len(out) >= MAX_TREES:
        log.warning("proof enumeration for %s truncated at %d trees", goal, MAX_TREES)
    return out


@lru_cache(maxsize=8192)
def compile_query(goal: Literal, clauses: tuple[Clause, ...], depth_max: int, beam: int) -> CompiledQuery:
    trees = _enumerate(goal, clauses, depth_max, beam)
    seen: dict[tuple, int] = {}
    pair_sets, reps = [], []
    for i, t in enumerate(trees):
        key = tuple(sorted({st.pair for st in t if st.pair[0] != st.pair[1]}))
        if key not in seen:
            seen[key] = len(pair_sets)
            pair_sets.append(key)
            reps.append(i)
    return CompiledQuery(goal, trees, pair_sets, reps)


def _program(w: CausalProgramGraph | Iterable[Clause], extra: Iterable[Clause] = ()) -> tuple[Clause, ...]:
    return tuple(w) + tuple(extra)


def _best(cq: CompiledQuery, e: EmbeddingTable):
    """(score, tree index into pair_sets, argmin pair or None)."""
    e.ensure(sorted({sym for ps in cq.pair_sets for p in ps for sym in p}))
    cache: dict[tuple[str, str], float] = {}
    best, best_i, best_pair = -1.0, -1, None
    for i, ps in enumerate(cq.pair_sets):
        lo, lo_pair = 1.0, None
        for p in ps:
            s = cache.get(p)
            if s is None:
                s = cache[p] = soft_unify(p[0], p[1], e)
            if s < lo:
                lo, lo_pair = s, p
        if lo > best:
            best, best_i, best_pair = lo, i, lo_pair
    return best, best_i, best_pair


def prove(
    goal: Literal,
    w: CausalProgramGraph | Iterable[Clause],
    e: EmbeddingTable,
    depth_max: int = 3,
    *,
    beam: int = 8,
    sigma_floor: float = 1e-3,
    extra_facts: Iterable[Clause] = (),
) -> ProofResult:
    program = _program(w, extra_facts)
    e.ensure(sorted({goal.pred, *goal.constants()}))
    cq = compile_query(goal, program, depth_max, beam)
    best, i, _ = _best(cq, e)
    if i < 0 or best <= sigma_floor:
        return ProofResult(sigma_floor, [])
    tree = cq.trees[cq.representative[i]]
    path = [PathStep(st.clause, dict(st.theta), soft_unify(*st.pair, e)) for st in tree]
    return ProofResult(best, path)


def score(goal: Literal, program: tuple[Clause, ...], e: EmbeddingTable, depth_max=3, beam=8, sigma_floor=1e-3) -> float:
    best, i, _ = _best(compile_query(goal, program, depth_max, beam), e)
    return sigma_floor if i < 0 or best <= sigma_floor else best


# -- training --------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 200
    negatives_per_positive: int = 16
    depth_max: int = 3
    sigma_floor: float = 1e-3
    beam: int = 8
    fine_tune_steps: int = 50
    replay: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.negatives_per_positive < 0:
            raise ValueError("training hyperparameters must be positive")
        if self.depth_max < 1 or self.beam < 1:
            raise ValueError("depth_max and beam must be >= 1")
        if not 0 < self.sigma_floor < 0.5:
            raise ValueError("sigma_floor must lie in (0, 0.5)")


def loss_and_grad(
    batch: Sequence[tuple[Literal, int]],
    w: CausalProgramGraph | Iterable[Clause],
    e: EmbeddingTable,
    *,
    depth_max: int = 3,
    beam: int = 8,
    sigma_floor: float = 1e-3,
    eps: float = EPS,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy of proof scores against 0/1 labels.

    The gradient is the subgradient through the best tree and, inside it,
    the weakest step.
    """
    if not batch:
        raise ValueError("empty batch")
    program = _program(w)
    n = len(batch)
    loss = 0.0
    grads: dict[str, np.ndarray] = {}
    for goal, label in batch:
        cq = compile_query(goal, program, depth_max, beam)
        best, i, pair = _best(cq, e)
        sigma = sigma_floor if i < 0 or best <= sigma_floor else best
        clamped = min(max(sigma, eps), 1.0 - eps)
        loss -= (label * math.log(clamped) + (1 - label) * math.log(1.0 - clamped)) / n
        if pair is None or sigma != best or not eps < sigma < 1.0 - eps:
            continue
        dl = (-label / sigma + (1 - label) / (1.0 - sigma)) / n
        gu, gv = _soft_unify_grad(pair[0], pair[1], e)
        for sym, g in ((pair[0], gu), (pair[1], gv)):
            if sym in grads:
                grads[sym] += dl * g
            else:
                grads[sym] = dl * g
    return loss, grads


def constants_of(clauses: Iterable[Clause]) -> list[str]:
    out = set()
    for c in clauses:
        for lit in (c.head, *c.body):
            out |= lit.constants()
    return sorted(out)


def sample_negatives(
    positives: Sequence[Literal],
    constants: Sequence[str],
    true_atoms: set[Literal],
    per_positive: int,
    rng: np.random.Generator,
) -> list[Literal]:
    """Corrupt the first constant argument, rejecting true atoms."""
    out: list[Literal] = []
    seen = set(true_atoms)
    for p in positives:
        idx = next((k for k, a in enumerate(p.args) if not is_var(a)), None)
        if idx is None:
            continue
        pool = []
        for c in constants:
            args = list(p.args)
            args[idx] = c
            atom = Literal(p.pred, tuple(args))
            if atom not in seen:
                pool.append(atom)
        if len(pool) > per_positive:
            pick = rng.choice(len(pool), size=per_positive, replace=False)
            pool = [pool[k] for k in sorted(pick)]
        for atom in pool:
            if atom not in seen:
                seen.add(atom)
                out.append(atom)
    return out


def _fit(program, batch, cfg: TrainConfig, e: EmbeddingTable, steps: int, phase: str):
    loss = float("nan")
    for _ in range(steps):
        loss, grads = loss_and_grad(batch, program, e, depth_max=cfg.depth_max, beam=cfg.beam, sigma_floor=cfg.sigma_floor)
        if not grads:
            break
        for sym in sorted(grads):
            e.vectors[sym] = e.vectors[sym] - cfg.learning_rate * grads[sym]
    pos = [score(g, program, e, cfg.depth_max, cfg.beam, cfg.sigma_floor) for g, y in batch if y == 1]
    neg = [score(g, program, e, cfg.depth_max, cfg.beam, cfg.sigma_floor) for g, y in batch if y == 0]
    converged = all(s >= 0.9 for s in pos) and all(s <= 0.4 for s in neg)
    report = {
        "phase": phase,
        "steps": steps,
        "loss": loss,
        "min_positive": min(pos, default=1.0),
        "max_negative": max(neg, default=0.0),
        "converged": converged,
    }
    if not converged:
        # fine-tuning trades some separation for the new positives; only the
        # bootstrap phase is expected to meet the targets outright
        level = logging.WARNING if phase == "bootstrap" else logging.INFO
        log.log(level, "%s training did not reach targets: %s", phase, report)
    e.train_log.append(report)
    return e


def train_bootstrap(
    w: CausalProgramGraph,
    facts: Sequence[Literal],
    cfg: TrainConfig,
    e: EmbeddingTable,
    reserved: Mapping[str, str] | None = None,
) -> EmbeddingTable:
    """Link-prediction pre-training on the foundational knowledge.

    ``reserved`` maps unary predicates the agent will query before any rule
    defines them to a partner property. Each reserved predicate gets
    negatives over the known constants that lack the partner property, so it
    starts out apart from unrelated predicates instead of at a random angle
    to them.
    """
    reserved = dict(reserved or {})
    e = e.copy()
    program = _program(w, (Clause(f) for f in facts if Clause(f) not in w))
    e.ensure(sorted({s for c in program for s in c.symbols()} | set(reserved)))
    if cfg.epochs == 0 or not facts:
        return e
    true_atoms = derivable_atoms(program, cfg.depth_max)
    rng = np.random.default_rng(cfg.seed)
    negatives = sample_negatives(list(facts), constants_of(program), true_atoms, cfg.negatives_per_positive, rng)
    for pred, partner in sorted(reserved.items()):
        for c in constants_of(program):
            atom = Literal(pred, (c,))
            if atom not in true_atoms and Literal(partner, (c,)) not in true_atoms:
                negatives.append(atom)
    batch = [(f, 1) for f in facts] + [(n, 0) for n in negatives]
    return _fit(program, batch, cfg, e, cfg.epochs, "bootstrap")


def fine_tune(
    w_new: CausalProgramGraph, delta: CpgDelta, cfg: TrainConfig, e: EmbeddingTable
) -> EmbeddingTable:
    """Adapt embeddings after the graph changed by ``delta``.

    Positives are atoms provable now but not before the change, plus a
    replay sample of older positives; negatives come from corruption.
    """
    if not delta:
        return e
    e = e.copy()
    program = _program(w_new)
    e.ensure(sorted({s for c in program for s in c.symbols()}))
    old = [c for c in program if c not in delta.added] + list(delta.retracted)
    now = derivable_atoms(program, cfg.depth_max)
    before = derivable_atoms(old, cfg.depth_max)
    fresh = sorted(now - before, key=str)
    rng = np.random.default_rng([cfg.seed, w_new.revision])
    older = sorted(now & before, key=str)
    if len(older) > cfg.replay:
        older = [older[k] for k in sorted(rng.choice(len(older), cfg.replay, replace=False))]
    positives = fresh + older
    if not positives:
        return e
    negatives = sample_negatives(positives, constants_of(program), now, cfg.negatives_per_positive, rng)
    batch = [(p, 1) for p in positives] + [(n, 0) for n in negatives]
    return _fit(program, batch, cfg, e, cfg.fine_tune_steps, "fine_tune")
