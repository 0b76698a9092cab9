"""Flat Horn-clause logic: literals, clauses, unification, SLD entailment, parser.

Terms are plain strings. A term is a variable when it starts with an
uppercase letter or an underscore, otherwise it is a constant. There are no
function symbols.

Textual form::

    causes_damage(X) :- is_harmful(X).
    is_harmful(fire).      % comment
"""

from __future__ import annotations

import itertools
import re
import sys
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

Substitution = dict[str, str]

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
MAX_ARITY = 3


class LogicError(ValueError):
    pass


class ParseError(LogicError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class RangeRestrictionError(LogicError):
    pass


def is_var(term: str) -> bool:
    return term[0].isupper() or term[0] == "_"


def check_symbol(name: str) -> str:
    if not _NAME.match(name):
        raise LogicError(f"invalid symbol {name!r}")
    return sys.intern(name)


@dataclass(frozen=True, slots=True)
class Literal:
    pred: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        check_symbol(self.pred)
        if is_var(self.pred):
            raise LogicError(f"predicate {self.pred!r} must start lowercase")
        for a in self.args:
            check_symbol(a)

    @classmethod
    def of(cls, pred: str, *args: str) -> "Literal":
        return cls(pred, tuple(args))

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def is_ground(self) -> bool:
        return not any(is_var(a) for a in self.args)

    def variables(self) -> set[str]:
        return {a for a in self.args if is_var(a)}

    def constants(self) -> set[str]:
        return {a for a in self.args if not is_var(a)}

    def substitute(self, theta: Mapping[str, str]) -> "Literal":
        if not theta:
            return self
        return Literal(self.pred, tuple(walk(a, theta) for a in self.args))

    def __str__(self) -> str:
        if not self.args:
            return self.pred
        return f"{self.pred}({', '.join(self.args)})"

    def __repr__(self) -> str:
        return f"Literal({str(self)!r})"


@dataclass(frozen=True, slots=True)
class Clause:
    """A range-restricted Horn clause. An empty body makes it a fact."""

    head: Literal
    body: tuple[Literal, ...] = ()

    def __post_init__(self):
        unbound = self.head.variables() - set().union(*(b.variables() for b in self.body))
        if unbound:
            raise RangeRestrictionError(
                f"head variable(s) {', '.join(sorted(unbound))} of {self.head} do not occur in the body"
            )

    @property
    def is_fact(self) -> bool:
        return not self.body

    def variables(self) -> set[str]:
        out = self.head.variables()
        for b in self.body:
            out |= b.variables()
        return out

    def symbols(self) -> set[str]:
        """Predicates and constants mentioned by the clause."""
        out = set()
        for lit in (self.head, *self.body):
            out.add(lit.pred)
            out |= lit.constants()
        return out

    def rename(self, suffix: str) -> "Clause":
        theta = {v: f"{v}_{suffix}" for v in self.variables()}
        return Clause(self.head.substitute(theta), tuple(b.substitute(theta) for b in self.body))

    def canonical(self) -> "Clause":
        """Variables renamed to A, B, C... in order of first occurrence."""
        order: list[str] = []
        for lit in (self.head, *self.body):
            for a in lit.args:
                if is_var(a) and a not in order:
                    order.append(a)
        theta = {v: _var_name(i) for i, v in enumerate(order)}
        return Clause(self.head.substitute(theta), tuple(b.substitute(theta) for b in self.body))

    def __str__(self) -> str:
        if not self.body:
            return f"{self.head}."
        return f"{self.head} :- {', '.join(map(str, self.body))}."

    def __repr__(self) -> str:
        return f"Clause({str(self)!r})"


def _var_name(i: int) -> str:
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    return letters[i] if i < 26 else f"V{i}"


def fact(pred: str, *args: str) -> Clause:
    return Clause(Literal(pred, tuple(args)))


# -- substitutions ---------------------------------------------------------


def walk(term: str, theta: Mapping[str, str]) -> str:
    while is_var(term) and term in theta:
        term = theta[term]
    return term


def resolve(theta: Mapping[str, str]) -> Substitution:
    """Flatten binding chains so applying the result once is idempotent."""
    return {v: walk(v, theta) for v in theta if walk(v, theta) != v}


def unify(a: Literal, b: Literal, theta: Mapping[str, str] | None = None) -> Substitution | None:
    """Most general unifier of two flat literals extending ``theta``.

    Returns None on predicate/arity mismatch or constant clash. With flat
    terms a variable can only occur in itself, so the occurs check reduces
    to skipping X = X.
    """
    if a.pred != b.pred or a.arity != b.arity:
        return None
    out = dict(theta or {})
    for x, y in zip(a.args, b.args):
        x, y = walk(x, out), walk(y, out)
        if x == y:
            continue
        if is_var(x):
            out[x] = y
        elif is_var(y):
            out[y] = x
        else:
            return None
    return resolve(out)


# -- entailment ------------------------------------------------------------


def solve(
    kb: Iterable[Clause], goal: Literal, depth_max: int
) -> Iterator[Substitution]:
    """Enumerate SLD answers for ``goal``.

    Depth is proof-tree depth: resolving a goal against any clause (fact or
    rule) costs one level, and body literals inherit the remaining depth.
    Clauses are tried in the given order, leftmost literal first.
    """
    clauses = list(kb)
    counter = itertools.count()

    def step(goals: list[tuple[Literal, int]], theta: Substitution) -> Iterator[Substitution]:
        if not goals:
            yield theta
            return
        (lit, depth), rest = goals[0], goals[1:]
        if depth <= 0:
            return
        lit = lit.substitute(theta)
        for clause in clauses:
            if clause.head.pred != lit.pred or clause.head.arity != lit.arity:
                continue
            c = clause.rename(str(next(counter)))
            th = unify(lit, c.head, theta)
            if th is None:
                continue
            yield from step([(b, depth - 1) for b in c.body] + rest, th)

    for theta in step([(goal, depth_max)], {}):
        yield {v: walk(v, theta) for v in goal.variables()}


def entails(kb: Iterable[Clause], goal: Literal, depth_max: int = 3) -> bool:
    if depth_max < 1:
        raise ValueError("depth_max must be >= 1")
    return next(solve(kb, goal, depth_max), None) is not None


def proof_path(kb: Iterable[Clause], goal: Literal, depth_max: int = 3) -> list[Clause] | None:
    """Clauses used by the first SLD proof of ``goal``, in resolution order."""
    clauses = list(kb)
    counter = itertools.count()

    def step(goals, theta, used):
        if not goals:
            yield used
            return
        (lit, depth), rest = goals[0], goals[1:]
        if depth <= 0:
            return
        lit = lit.substitute(theta)
        for clause in clauses:
            if clause.head.pred != lit.pred or clause.head.arity != lit.arity:
                continue
            c = clause.rename(str(next(counter)))
            th = unify(lit, c.head, theta)
            if th is not None:
                yield from step([(b, depth - 1) for b in c.body] + rest, th, used + [clause])

    return next(step([(goal, depth_max)], {}, []), None)


def derivable_atoms(kb: Iterable[Clause], depth_max: int) -> set[Literal]:
    """Ground atoms with a proof tree of depth <= depth_max (bottom-up)."""
    clauses = list(kb)
    known: set[Literal] = set()
    for _ in range(depth_max):
        new = set(known)
        for c in clauses:
            for theta in _match_body(c.body, known, {}):
                new.add(c.head.substitute(theta))
        if new == known:
            break
        known = new
    return known


def _match_body(body, known, theta):
    if not body:
        yield theta
        return
    first, rest = body[0], body[1:]
    for atom in known:
        th = unify(first.substitute(theta), atom, theta)
        if th is not None:
            yield from _match_body(rest, known, th)


# -- parser ----------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r\n]+)|(?P<comment>%[^\n]*)|(?P<neck>:-)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<punct>[(),.])"
)


def _tokens(text: str):
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind, value = m.lastgroup, m.group()
        if kind not in ("ws", "comment"):
            yield kind, value, line, col
        nl = value.count("\n")
        if nl:
            line += nl
            col = len(value) - value.rfind("\n")
        else:
            col += len(value)
        pos = m.end()
    yield "eof", "", line, col


class _Parser:
    def __init__(self, text: str):
        self.toks = list(_tokens(text))
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind: str, value: str | None = None):
        tok = self.peek()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value or kind
            got = tok[1] or "end of input"
            raise ParseError(f"expected {want!r}, got {got!r}", tok[2], tok[3])
        self.i += 1
        return tok

    def literal(self) -> Literal:
        _, name, line, col = self.take("name")
        if is_var(name):
            raise ParseError(f"predicate {name!r} must start lowercase", line, col)
        args = []
        if self.peek()[:2] == ("punct", "("):
            self.take("punct", "(")
            args.append(self.take("name")[1])
            while self.peek()[:2] == ("punct", ","):
                self.take("punct", ",")
                args.append(self.take("name")[1])
            self.take("punct", ")")
        if len(args) > MAX_ARITY:
            raise ParseError(f"arity {len(args)} exceeds {MAX_ARITY}", line, col)
        return Literal(name, tuple(args))

    def clause(self) -> Clause:
        line, col = self.peek()[2:]
        head = self.literal()
        body = []
        if self.peek()[0] == "neck":
            self.take("neck")
            body.append(self.literal())
            while self.peek()[:2] == ("punct", ","):
                self.take("punct", ",")
                body.append(self.literal())
        self.take("punct", ".")
        try:
            return Clause(head, tuple(body))
        except RangeRestrictionError as exc:
            raise RangeRestrictionError(f"{exc} (line {line}, column {col})") from None

    def program(self) -> list[Clause]:
        out = []
        while self.peek()[0] != "eof":
            out.append(self.clause())
        return out


def parse_clause(text: str) -> Clause:
    p = _Parser(text)
    c = p.clause()
    tok = p.peek()
    if tok[0] != "eof":
        raise ParseError(f"trailing input {tok[1]!r}", tok[2], tok[3])
    return c


def parse_program(text: str) -> list[Clause]:
    return _Parser(text).program()


def parse_literal(text: str) -> Literal:
    p = _Parser(text.strip().rstrip("."))
    lit = p.literal()
    tok = p.peek()
    if tok[0] != "eof":
        raise ParseError(f"trailing input {tok[1]!r}", tok[2], tok[3])
    return lit


def render_program(clauses: Iterable[Clause]) -> str:
    return "".join(f"{c}\n" for c in clauses)
