"""Restricted Prolog: terms, parser, printer and a ground-fact resolution engine."""

from .engine import (
    EMPTY_STATE,
    DefectKind,
    ExecutionDefect,
    Fact,
    KnowledgeBase,
    Solution,
    SolutionSet,
    solve,
    solve_prefix,
    solve_prefix_with_defects,
    solve_with_defects,
    standard_order_key,
    unify,
)
from .oracle import brute_force_solve
from .parser import (
    ParseError,
    ParseErrorKind,
    parse_goals,
    parse_literal,
    parse_query,
    print_goal,
    print_goals,
    print_query,
    print_term,
)
from .terms import (
    Aggregate,
    Atom,
    BareVar,
    Compound,
    DateConst,
    IfThenElse,
    IntConst,
    Query,
    StdGt,
    StdLt,
    StringConst,
    StructEq,
    Unify,
    Variable,
)
