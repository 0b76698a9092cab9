import logging

import pytest
from hypothesis import strategies as st

from agel.logic import Clause, Literal

logging.getLogger("agel").setLevel(logging.ERROR)

CONSTS = ["a", "b", "c", "fire", "coin"]
VARS = ["X", "Y", "Z"]
PREDS = ["p", "q", "r", "is_harmful", "causes_damage"]


def literals(terms=CONSTS + VARS, preds=PREDS, max_arity=3):
    return st.builds(
        lambda p, args: Literal(p, tuple(args)),
        st.sampled_from(preds),
        st.lists(st.sampled_from(terms), min_size=0, max_size=max_arity),
    )


def ground_literals(preds=PREDS, consts=CONSTS, max_arity=2):
    return literals(consts, preds, max_arity)


@st.composite
def clauses(draw, max_body=3):
    body = tuple(draw(st.lists(literals(), min_size=0, max_size=max_body)))
    body_vars = sorted(set().union(*(b.variables() for b in body))) if body else []
    head_terms = CONSTS + body_vars
    head = draw(literals(head_terms))
    return Clause(head, body)


@pytest.fixture
def fire_kb():
    from agel.logic import parse_program

    return parse_program("is_harmful(fire).\ncauses_damage(X) :- is_harmful(X).\n")


# acceptance criteria report: (number, passed, detail), printed after the run
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
