"""Brute-force reference evaluator for conjunctive queries.

Enumerates assignments of every query variable to every constant in sight and
keeps those satisfying all goals. It shares no evaluation code with the
engine beyond the standard-order key, and exists to cross-check it.
"""

from __future__ import annotations

from .engine import KnowledgeBase, Solution, SolutionSet, standard_order_key
from .terms import Atom, Compound, StdGt, StdLt, StructEq, Unify, Variable, term_variables

MAX_VARIABLES = 6
MAX_FACTS = 200

_CONJUNCTIVE = (Atom, Unify, StructEq, StdGt, StdLt)


def _subterms(term, out: dict):
    if isinstance(term, Variable):
        return
    out.setdefault(term, None)
    if isinstance(term, Compound):
        for a in term.args:
            _subterms(a, out)


def _substitute(term, assignment):
    if isinstance(term, Variable):
        return assignment[term]
    if isinstance(term, Compound) and term.args:
        return Compound(term.functor, tuple(_substitute(a, assignment) for a in term.args))
    return term


def _holds(goal, assignment, facts: set) -> bool:
    if isinstance(goal, Atom):
        return (goal.predicate, tuple(_substitute(a, assignment) for a in goal.args)) in facts
    lhs, rhs = _substitute(goal.lhs, assignment), _substitute(goal.rhs, assignment)
    if isinstance(goal, (Unify, StructEq)):
        return lhs == rhs
    if isinstance(goal, StdGt):
        return standard_order_key(lhs) > standard_order_key(rhs)
    return standard_order_key(lhs) < standard_order_key(rhs)


def _rename_anonymous(goals):
    """Give each ``_`` occurrence its own hidden variable name."""
    counter = iter(range(10**9))

    def fix(term):
        if isinstance(term, Variable) and term.anonymous:
            return Variable(f"_Anon{next(counter)}")
        if isinstance(term, Compound) and term.args:
            return Compound(term.functor, tuple(fix(a) for a in term.args))
        return term

    out = []
    for g in goals:
        if isinstance(g, Atom):
            out.append(Atom(g.predicate, tuple(fix(a) for a in g.args)))
        else:
            out.append(type(g)(fix(g.lhs), fix(g.rhs)))
    return out


def brute_force_solve(goals, kb: KnowledgeBase) -> SolutionSet:
    goals = list(goals)
    for g in goals:
        if not isinstance(g, _CONJUNCTIVE):
            raise ValueError(f"brute force handles conjunctive goals only, got {type(g).__name__}")
    if len(kb) > MAX_FACTS:
        raise ValueError(f"knowledge base too large for brute force ({len(kb)} > {MAX_FACTS})")
    goals = _rename_anonymous(goals)

    variables: dict[Variable, None] = {}
    for g in goals:
        terms = g.args if isinstance(g, Atom) else (g.lhs, g.rhs)
        for t in terms:
            for v in term_variables(t):
                variables.setdefault(v, None)
    order = sorted(variables, key=lambda v: v.name)
    if len(order) > MAX_VARIABLES:
        raise ValueError(f"too many variables for brute force ({len(order)} > {MAX_VARIABLES})")

    domain: dict = {}
    facts = set()
    for fact in kb:
        facts.add((fact.predicate, fact.args))
        for a in fact.args:
            _subterms(a, domain)
    for g in goals:
        for t in g.args if isinstance(g, Atom) else (g.lhs, g.rhs):
            _subterms(t, domain)
    domain_values = [t for t in domain if not any(True for _ in term_variables(t))]

    # each goal is checked as soon as its last variable (in enumeration order) is assigned
    position = {v: i for i, v in enumerate(order)}
    checks: list[list] = [[] for _ in range(len(order) + 1)]
    for g in goals:
        terms = g.args if isinstance(g, Atom) else (g.lhs, g.rhs)
        vs = [v for t in terms for v in term_variables(t)]
        checks[max((position[v] + 1 for v in vs), default=0)].append(g)

    visible = [v for v in order if not v.name.startswith("_")]
    found = []
    assignment: dict = {}

    def search(depth: int):
        if not all(_holds(g, assignment, facts) for g in checks[depth]):
            return
        if depth == len(order):
            found.append(Solution({v.name: assignment[v] for v in visible}))
            return
        var = order[depth]
        for value in domain_values:
            assignment[var] = value
            search(depth + 1)
        assignment.pop(var, None)

    search(0)
    return SolutionSet(found)
