"""Term and goal algebra for the restricted query language.

Terms are immutable and hashable so they can be used directly as dictionary
keys, set members and fact arguments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

VAR_RE = re.compile(r"[A-Z_][A-Za-z0-9_]*\Z")
FUNCTOR_RE = re.compile(r"[a-z][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class StringConst:
    text: str


@dataclass(frozen=True)
class IntConst:
    value: int


@dataclass(frozen=True)
class DateConst:
    year: int
    month: int
    day: int

    def __post_init__(self):
        # calendar validity is deliberately not checked (fictional dates exist)
        if not 1 <= self.month <= 12:
            raise ValueError(f"month out of range: {self.month}")
        if not 1 <= self.day <= 31:
            raise ValueError(f"day out of range: {self.day}")

    def iso(self) -> str:
        return f"{self.year:04d}-{self.month:02d}-{self.day:02d}"


@dataclass(frozen=True)
class Variable:
    name: str

    def __post_init__(self):
        if not VAR_RE.match(self.name):
            raise ValueError(f"invalid variable name: {self.name!r}")

    @property
    def anonymous(self) -> bool:
        return self.name == "_"


@dataclass(frozen=True)
class Compound:
    functor: str
    args: tuple = ()

    def __post_init__(self):
        if not FUNCTOR_RE.match(self.functor):
            raise ValueError(f"invalid functor: {self.functor!r}")
        object.__setattr__(self, "args", tuple(self.args))


Term = Union[StringConst, IntConst, DateConst, Variable, Compound]
CONSTANT_TYPES = (StringConst, IntConst, DateConst)


# -- goals ------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple = ()

    def __post_init__(self):
        if not FUNCTOR_RE.match(self.predicate):
            raise ValueError(f"invalid predicate name: {self.predicate!r}")
        object.__setattr__(self, "args", tuple(self.args))

    @property
    def arity(self) -> int:
        return len(self.args)


@dataclass(frozen=True)
class Unify:
    """``lhs = rhs``"""

    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class StructEq:
    """``lhs == rhs``"""

    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class StdGt:
    """``lhs @> rhs``"""

    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class StdLt:
    """``lhs @< rhs``"""

    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class IfThenElse:
    """``(Cond -> Then ; Else)``; ``orelse`` is None when the else branch is absent."""

    cond: tuple
    then: tuple
    orelse: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "cond", tuple(self.cond))
        object.__setattr__(self, "then", tuple(self.then))
        if self.orelse is not None:
            object.__setattr__(self, "orelse", tuple(self.orelse))
        if any(isinstance(g, Aggregate) for g in iter_goals(self.cond)):
            raise ValueError("aggregate not allowed inside an if-then-else condition")


@dataclass(frozen=True)
class Aggregate:
    """``aggregate_all(count, [distinct(]Inner[)], Result)``"""

    inner: "Goal"
    result: Variable
    distinct: bool = False
    kind: str = "count"

    def __post_init__(self):
        if self.kind != "count":
            raise ValueError(f"unsupported aggregate: {self.kind}")
        if self.result in set(goal_variables(self.inner)):
            raise ValueError("aggregate result variable occurs inside the aggregated goal")


@dataclass(frozen=True)
class BareVar:
    """A variable standing alone as a goal. Parsed, but never executable."""

    var: Variable


Goal = Union[Atom, Unify, StructEq, StdGt, StdLt, IfThenElse, Aggregate, BareVar]
COMPARISONS = (Unify, StructEq, StdGt, StdLt)


@dataclass(frozen=True)
class Query:
    goals: tuple
    target: Variable
    source: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "goals", tuple(self.goals))
        if not self.goals:
            raise ValueError("query needs at least one goal")
        if self.target not in set(query_variables(self.goals)):
            raise ValueError(f"target {self.target.name} does not occur in the query")

    def __len__(self):
        return len(self.goals)


# -- helpers ----------------------------------------------------------------


def term_variables(term: Term) -> Iterator[Variable]:
    if isinstance(term, Variable):
        yield term
    elif isinstance(term, Compound):
        for arg in term.args:
            yield from term_variables(arg)


def is_ground(term: Term) -> bool:
    return next(term_variables(term), None) is None


def goal_variables(goal: Goal) -> Iterator[Variable]:
    """Yield variables of a goal in textual order (with repeats)."""
    if isinstance(goal, Atom):
        for arg in goal.args:
            yield from term_variables(arg)
    elif isinstance(goal, COMPARISONS):
        yield from term_variables(goal.lhs)
        yield from term_variables(goal.rhs)
    elif isinstance(goal, IfThenElse):
        for sub in goal.cond + goal.then + (goal.orelse or ()):
            yield from goal_variables(sub)
    elif isinstance(goal, Aggregate):
        yield from goal_variables(goal.inner)
        yield goal.result
    elif isinstance(goal, BareVar):
        yield goal.var


def query_variables(goals) -> list[Variable]:
    """Distinct variables of a goal list, first-occurrence order."""
    seen: dict[Variable, None] = {}
    for goal in goals:
        for var in goal_variables(goal):
            seen.setdefault(var, None)
    return list(seen)


def iter_goals(goals) -> Iterator[Goal]:
    """Walk goals recursively, including those nested in control constructs."""
    for goal in goals:
        yield goal
        if isinstance(goal, IfThenElse):
            yield from iter_goals(goal.cond + goal.then + (goal.orelse or ()))
        elif isinstance(goal, Aggregate):
            yield from iter_goals((goal.inner,))
