"""Neuro-symbolic quest agent: causal program graph, soft prover, rule induction."""

from agel.logic import Clause, Literal, entails, parse_clause, parse_program, unify

__all__ = ["Clause", "Literal", "entails", "parse_clause", "parse_program", "unify"]
__version__ = "0.1.0"
