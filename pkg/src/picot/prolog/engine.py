"""Resolution over a ground-fact knowledge base.

The evaluator is a depth-first, left-to-right generator over binding
environments. Facts are always ground, so variables only ever end up bound to
ground terms; a goal that would leave a variable bound to a non-ground term
is reported as an :class:`ExecutionDefect` and fails.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Optional

from .parser import print_term
from .terms import (
    Aggregate,
    Atom,
    BareVar,
    Compound,
    DateConst,
    IfThenElse,
    IntConst,
    StdGt,
    StdLt,
    StringConst,
    StructEq,
    Term,
    Unify,
    Variable,
    goal_variables,
    is_ground,
    query_variables,
)


@dataclass(frozen=True)
class Fact:
    predicate: str
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if not all(is_ground(a) for a in self.args):
            raise ValueError("facts must be ground")

    @property
    def key(self) -> tuple[str, int]:
        return (self.predicate, len(self.args))

    def to_text(self) -> str:
        return f"{self.predicate}({', '.join(print_term(a) for a in self.args)})."


class KnowledgeBase:
    """Insertion-ordered, structurally deduplicated set of ground facts."""

    def __init__(self, facts: Iterable[Fact] = ()):
        self._facts: dict[Fact, None] = {}
        self._by_key: dict[tuple[str, int], list[Fact]] = {}
        for fact in facts:
            self.add(fact)

    def add(self, fact: Fact) -> bool:
        """Add ``fact``; return False if it was already present."""
        if fact in self._facts:
            return False
        self._facts[fact] = None
        self._by_key.setdefault(fact.key, []).append(fact)
        return True

    def __contains__(self, fact) -> bool:
        return fact in self._facts

    def __len__(self) -> int:
        return len(self._facts)

    def __iter__(self) -> Iterator[Fact]:
        return iter(self._facts)

    def matching(self, predicate: str, arity: int) -> list[Fact]:
        return self._by_key.get((predicate, arity), [])

    def snapshot(self, size: Optional[int] = None) -> "KnowledgeBase":
        facts = list(self._facts)
        return KnowledgeBase(facts if size is None else facts[:size])

    def constants(self) -> list[Term]:
        seen: dict[Term, None] = {}
        for fact in self._facts:
            for arg in fact.args:
                seen.setdefault(arg, None)
        return list(seen)

    def to_text(self) -> str:
        return "".join(f.to_text() + "\n" for f in self._facts)

    @classmethod
    def from_text(cls, text: str) -> "KnowledgeBase":
        from .parser import parse_goals

        kb = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            (goal,) = parse_goals(line)
            if not isinstance(goal, Atom):
                raise ValueError(f"not a fact: {line!r}")
            kb.add(Fact(goal.predicate, goal.args))
        return kb


class Solution(Mapping):
    """Immutable variable-name to ground-term mapping."""

    __slots__ = ("_items", "_hash")

    def __init__(self, bindings: Mapping[str, Term] | Iterable[tuple[str, Term]] = ()):
        items = dict(bindings)
        self._items = tuple(sorted(items.items()))
        self._hash = hash(self._items)

    def __getitem__(self, name):
        if isinstance(name, Variable):
            name = name.name
        for key, value in self._items:
            if key == name:
                return value
        raise KeyError(name)

    def __iter__(self):
        return (k for k, _ in self._items)

    def __len__(self):
        return len(self._items)

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if isinstance(other, Solution):
            return self._items == other._items
        return NotImplemented

    def __repr__(self):
        inner = ", ".join(f"{k}: {print_term(v)}" for k, v in self._items)
        return "{" + inner + "}"

    def project(self, names) -> "Solution":
        names = set(names)
        return Solution((k, v) for k, v in self._items if k in names)

    def to_json(self) -> dict[str, str]:
        return {k: print_term(v) for k, v in self._items}


class SolutionSet:
    """Deduplicated solutions kept in first-derivation order.

    Equality is set equality; ``canonical()`` gives an order-independent form.
    """

    def __init__(self, solutions: Iterable[Solution] = ()):
        self.solutions: tuple[Solution, ...] = tuple(dict.fromkeys(solutions))

    def __iter__(self):
        return iter(self.solutions)

    def __len__(self):
        return len(self.solutions)

    def __bool__(self):
        return bool(self.solutions)

    def __contains__(self, sol):
        return sol in set(self.solutions)

    def __eq__(self, other):
        if isinstance(other, SolutionSet):
            return set(self.solutions) == set(other.solutions)
        return NotImplemented

    def __repr__(self):
        return f"SolutionSet({list(self.solutions)!r})"

    def canonical(self) -> list[list[tuple[str, str]]]:
        rows = [sorted(s.to_json().items()) for s in self.solutions]
        return sorted(rows)

    def project(self, names) -> "SolutionSet":
        return SolutionSet(s.project(names) for s in self.solutions)

    def variables(self) -> set[str]:
        out: set[str] = set()
        for s in self.solutions:
            out.update(s)
        return out

    def values(self, var: Variable | str) -> list[Term]:
        name = var.name if isinstance(var, Variable) else var
        return list(dict.fromkeys(s[name] for s in self.solutions if name in s))

    def to_json(self) -> list[dict[str, str]]:
        return [s.to_json() for s in self.solutions]


EMPTY_STATE = SolutionSet([Solution()])


class DefectKind(str, enum.Enum):
    UNBOUND_GOAL_VARIABLE = "UnboundGoalVariable"
    COMPARISON_ON_UNBOUND = "ComparisonOnUnbound"


@dataclass(frozen=True)
class ExecutionDefect:
    kind: DefectKind
    goal_index: int

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "goal_index": self.goal_index}


# -- terms under an environment -----------------------------------------------


def resolve(term: Term, env: Mapping[str, Term]) -> Term:
    if isinstance(term, Variable):
        if term.anonymous or term.name not in env:
            return term
        return resolve(env[term.name], env)
    if isinstance(term, Compound) and term.args:
        return Compound(term.functor, tuple(resolve(a, env) for a in term.args))
    return term


def _unify(a: Term, b: Term, env: dict) -> Optional[dict]:
    a, b = resolve(a, env), resolve(b, env)
    if isinstance(a, Variable) or isinstance(b, Variable):
        if a == b and not a.anonymous:
            return env
        var, other = (a, b) if isinstance(a, Variable) else (b, a)
        if var.anonymous:
            return env
        if isinstance(other, Variable) and other.anonymous:
            return env
        new = dict(env)
        new[var.name] = other
        return new
    if isinstance(a, Compound) and isinstance(b, Compound):
        if a.functor != b.functor or len(a.args) != len(b.args):
            return None
        for x, y in zip(a.args, b.args):
            env = _unify(x, y, env)
            if env is None:
                return None
        return env
    return env if a == b else None


def unify(a: Term, b: Term, env: Solution | Mapping[str, Term] = Solution()) -> Optional[Solution]:
    """Most general unifier of ``a`` and ``b`` extending ``env``.

    Returns None on failure, including when a variable would be left bound
    to a non-ground term.
    """
    out = _unify(a, b, dict(env))
    if out is None:
        return None
    resolved = {k: resolve(v, out) for k, v in out.items()}
    if not all(is_ground(v) for v in resolved.values()):
        return None
    return Solution(resolved)


def standard_order_key(term: Term):
    """Sort key for the standard order of ground terms.

    Integers < strings < dates < other compounds.
    """
    if isinstance(term, IntConst):
        return (0, term.value)
    if isinstance(term, StringConst):
        return (1, term.text.encode("utf-8"))
    if isinstance(term, DateConst):
        return (2, (term.year, term.month, term.day))
    if isinstance(term, Compound):
        return (3, term.functor, len(term.args), tuple(standard_order_key(a) for a in term.args))
    raise TypeError(f"cannot order non-ground term {term!r}")


# -- evaluation -----------------------------------------------------------------


class _Run:
    def __init__(self, kb: KnowledgeBase):
        self.kb = kb
        self.defects: dict[ExecutionDefect, None] = {}

    def defect(self, kind: DefectKind, index: int) -> None:
        self.defects.setdefault(ExecutionDefect(kind, index), None)

    def solve(self, goals, env: dict, indices) -> Iterator[dict]:
        if not goals:
            yield env
            return
        goal, rest = goals[0], goals[1:]
        index, rest_idx = indices[0], indices[1:]
        for env2 in self.step(goal, env, index):
            yield from self.solve(rest, env2, rest_idx)

    def solve_nested(self, goals, env: dict, index: int) -> Iterator[dict]:
        return self.solve(tuple(goals), env, (index,) * len(goals))

    def step(self, goal, env: dict, index: int) -> Iterator[dict]:
        if isinstance(goal, Atom):
            args = [resolve(a, env) for a in goal.args]
            # positions already ground are filtered by plain equality first
            fixed = [(i, a) for i, a in enumerate(args) if is_ground(a)]
            open_args = [(i, a) for i, a in enumerate(args) if not is_ground(a)]
            for fact in self.kb.matching(goal.predicate, goal.arity):
                if any(fact.args[i] != a for i, a in fixed):
                    continue
                out = env
                for i, arg in open_args:
                    out = _unify(arg, fact.args[i], out)
                    if out is None:
                        break
                if out is not None:
                    yield out
        elif isinstance(goal, Unify):
            out = _unify(goal.lhs, goal.rhs, env)
            if out is None:
                return
            touched = list(goal_variables(goal))
            if not all(is_ground(resolve(v, out)) for v in touched if not v.anonymous):
                self.defect(DefectKind.COMPARISON_ON_UNBOUND, index)
                return
            yield out
        elif isinstance(goal, (StructEq, StdGt, StdLt)):
            lhs, rhs = resolve(goal.lhs, env), resolve(goal.rhs, env)
            if not (is_ground(lhs) and is_ground(rhs)):
                self.defect(DefectKind.COMPARISON_ON_UNBOUND, index)
                return
            if isinstance(goal, StructEq):
                ok = lhs == rhs
            elif isinstance(goal, StdGt):
                ok = standard_order_key(lhs) > standard_order_key(rhs)
            else:
                ok = standard_order_key(lhs) < standard_order_key(rhs)
            if ok:
                yield env
        elif isinstance(goal, IfThenElse):
            first = next(self.solve_nested(goal.cond, env, index), None)
            if first is not None:
                yield from self.solve_nested(goal.then, first, index)
            elif goal.orelse is not None:
                yield from self.solve_nested(goal.orelse, env, index)
        elif isinstance(goal, Aggregate):
            inner_vars = [v.name for v in goal_variables(goal.inner) if not v.anonymous]
            results = self.step(goal.inner, env, index)
            if goal.distinct:
                count = len({tuple(resolve(Variable(n), r) for n in inner_vars) for r in results})
            else:
                count = sum(1 for _ in results)
            out = _unify(goal.result, IntConst(count), env)
            if out is not None:
                yield out
        elif isinstance(goal, BareVar):
            self.defect(DefectKind.UNBOUND_GOAL_VARIABLE, index)
        else:
            raise TypeError(f"unknown goal {goal!r}")


def _visible(goals) -> list[str]:
    """Variables a solution reports: named, non-underscore, outside aggregates."""
    names: dict[str, None] = {}

    def walk(gs):
        for g in gs:
            if isinstance(g, Aggregate):
                names.setdefault(g.result.name, None)
            elif isinstance(g, IfThenElse):
                walk(g.cond + g.then + (g.orelse or ()))
            else:
                for v in goal_variables(g):
                    names.setdefault(v.name, None)

    walk(goals)
    return [n for n in names if not n.startswith("_")]


def solve_with_defects(goals, kb: KnowledgeBase) -> tuple[SolutionSet, list[ExecutionDefect]]:
    goals = tuple(goals)
    run = _Run(kb)
    visible = _visible(goals)
    solutions = []
    for env in run.solve(goals, {}, tuple(range(len(goals)))):
        bound = {}
        for name in visible:
            if name in env:
                value = resolve(Variable(name), env)
                if is_ground(value):
                    bound[name] = value
        solutions.append(Solution(bound))
    return SolutionSet(solutions), list(run.defects)


def solve(goals, kb: KnowledgeBase) -> SolutionSet:
    return solve_with_defects(goals, kb)[0]


def solve_prefix(query, t: int, kb: KnowledgeBase) -> SolutionSet:
    """Solutions of the first ``t`` goals; ``t == 0`` is the empty-binding state."""
    return solve_prefix_with_defects(query, t, kb)[0]


def solve_prefix_with_defects(query, t: int, kb: KnowledgeBase):
    goals = query.goals if hasattr(query, "goals") else tuple(query)
    if not 0 <= t <= len(goals):
        raise ValueError(f"prefix length {t} out of range 0..{len(goals)}")
    if t == 0:
        return EMPTY_STATE, []
    return solve_with_defects(goals[:t], kb)


__all__ = [
    "EMPTY_STATE",
    "DefectKind",
    "ExecutionDefect",
    "Fact",
    "KnowledgeBase",
    "Solution",
    "SolutionSet",
    "query_variables",
    "resolve",
    "solve",
    "solve_prefix",
    "solve_prefix_with_defects",
    "solve_with_defects",
    "standard_order_key",
    "unify",
]
