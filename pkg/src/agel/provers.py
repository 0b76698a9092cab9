"""Uniform prover interface over the soft (NTP) and discrete (SLD) engines."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Protocol

from agel.cpg import CausalProgramGraph
from agel.logic import Clause, Literal, proof_path
from agel.ntp import EmbeddingTable, PathStep, ProofResult, prove


class Prover(Protocol):
    def __call__(
        self, goal: Literal, w: CausalProgramGraph, e: EmbeddingTable | None, extra: Iterable[Clause] = ()
    ) -> ProofResult: ...


@dataclass
class NtpProver:
    depth_max: int = 3
    beam: int = 8
    sigma_floor: float = 1e-3
    calls: int = field(default=0, compare=False)

    def __call__(self, goal, w, e, extra=()):
        self.calls += 1
        return prove(goal, w, e, self.depth_max, beam=self.beam, sigma_floor=self.sigma_floor, extra_facts=extra)


@dataclass
class DiscreteProver:
    """Crisp entailment reported as a 0/1 proof score."""

    depth_max: int = 3
    calls: int = field(default=0, compare=False)

    def __call__(self, goal, w, e=None, extra=()):
        self.calls += 1
        path = proof_path([*w, *extra], goal, self.depth_max)
        if path is None:
            return ProofResult(0.0, [])
        return ProofResult(1.0, [PathStep(c, {}, 1.0) for c in path])
