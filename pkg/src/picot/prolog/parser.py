"""Lexer, recursive-descent parser and canonical printer for generated queries.

The accepted language is a small slice of Prolog goal syntax: conjunctions of
atoms, ``=``/``==``/``@>``/``@<`` comparisons, if-then-else and
``aggregate_all(count, ...)``. Anything else yields a :class:`ParseError`.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Optional

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
    Term,
    Unify,
    Variable,
    is_ground,
    query_variables,
)


class ParseErrorKind(str, enum.Enum):
    UNQUOTED_CONSTANT = "UnquotedConstant"
    NEGATION_UNSUPPORTED = "NegationUnsupported"
    EMPTY_INPUT = "EmptyInput"
    MALFORMED_TERM = "MalformedTerm"
    BAD_AGGREGATE = "BadAggregate"
    UNBALANCED_DELIMITER = "UnbalancedDelimiter"


class ParseError(Exception):
    """Raised for any input the grammar rejects.

    ``position`` is a byte offset into the UTF-8 encoding of the input.
    """

    def __init__(self, kind: ParseErrorKind, position: int, message: str):
        super().__init__(f"{kind.value} at byte {position}: {message}")
        self.kind = kind
        self.position = position
        self.message = message


@dataclass
class Token:
    type: str
    value: str
    pos: int  # character offset
    newline_before: bool = False


_COMPARISON_OPS = {"=": Unify, "==": StructEq, "@>": StdGt, "@<": StdLt}
_NAME_RE = re.compile(r"[a-z][A-Za-z0-9_]*")
_VAR_RE = re.compile(r"[A-Z_][A-Za-z0-9_]*")
_INT_RE = re.compile(r"-?\d+")


class _Source:
    def __init__(self, text: str):
        self.text = text

    def byte_offset(self, pos: int) -> int:
        return len(self.text[:pos].encode("utf-8"))

    def error(self, kind: ParseErrorKind, pos: int, message: str) -> ParseError:
        pos = max(0, min(pos, len(self.text)))
        return ParseError(kind, self.byte_offset(pos), message)


def tokenize(src: _Source) -> list[Token]:
    text = src.text
    tokens: list[Token] = []
    i, n = 0, len(text)
    newline = False
    while i < n:
        ch = text[i]
        if ch.isspace():
            newline = newline or ch == "\n"
            i += 1
            continue
        if ch == "%":  # line comment
            while i < n and text[i] != "\n":
                i += 1
            continue
        start = i
        if ch == '"':
            i += 1
            buf = []
            while i < n and text[i] != '"':
                if text[i] == "\\" and i + 1 < n and text[i + 1] in '"\\':
                    buf.append(text[i + 1])
                    i += 2
                else:
                    buf.append(text[i])
                    i += 1
            if i >= n:
                raise src.error(ParseErrorKind.UNBALANCED_DELIMITER, start, "unterminated string")
            i += 1
            tok = Token("STRING", "".join(buf), start)
        elif ch == "\\" and text.startswith(("\\+", "\\=", "\\=="), i):
            raise src.error(ParseErrorKind.NEGATION_UNSUPPORTED, start, "negation is not supported")
        elif text.startswith("->", i) or ch == "→":
            i += 1 if ch == "→" else 2
            tok = Token("ARROW", "->", start)
        elif text.startswith(("==", "@>", "@<"), i):
            i += 2
            tok = Token("OP", text[start:i], start)
        elif ch == "=" and not text.startswith(("=<", "=:=", "=\\=", "=.."), i):
            i += 1
            tok = Token("OP", "=", start)
        elif m := _INT_RE.match(text, i):
            i = m.end()
            tok = Token("INT", m.group(), start)
        elif m := _VAR_RE.match(text, i):
            i = m.end()
            tok = Token("VAR", m.group(), start)
        elif m := _NAME_RE.match(text, i):
            i = m.end()
            tok = Token("NAME", m.group(), start)
        elif ch in "(),;.":
            i += 1
            tok = Token(ch, ch, start)
        else:
            i += 1
            tok = Token("OTHER", ch, start)
        tok.newline_before = newline
        newline = False
        tokens.append(tok)
    tokens.append(Token("EOF", "", n, newline))
    return tokens


def _check_balance(src: _Source, tokens: list[Token]) -> None:
    stack = []
    for tok in tokens:
        if tok.type == "(":
            stack.append(tok.pos)
        elif tok.type == ")":
            if not stack:
                raise src.error(ParseErrorKind.UNBALANCED_DELIMITER, tok.pos, "unmatched ')'")
            stack.pop()
    if stack:
        raise src.error(ParseErrorKind.UNBALANCED_DELIMITER, stack[-1], "unclosed '('")


class _Parser:
    def __init__(self, src: _Source, tokens: list[Token]):
        self.src = src
        self.tokens = tokens
        self.i = 0

    # -- token helpers ------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, type_: str, kind=ParseErrorKind.MALFORMED_TERM) -> Token:
        if self.tok.type != type_:
            raise self.error(kind, f"expected {type_!r}, found {self.tok.value or self.tok.type!r}")
        return self.advance()

    def error(self, kind: ParseErrorKind, message: str, pos: Optional[int] = None) -> ParseError:
        return self.src.error(kind, self.tok.pos if pos is None else pos, message)

    def segment_error(self, start: int, what: str) -> ParseError:
        """Classify a bad argument by looking at its raw source text."""
        text = self.src.text
        depth, j = 0, start
        while j < len(text):
            ch = text[j]
            if ch == '"':
                break
            if ch == "(":
                depth += 1
            elif ch == ")":
                if depth == 0:
                    break
                depth -= 1
            elif ch in ",;" and depth == 0:
                break
            j += 1
        segment = text[start:j].strip()
        if segment and '"' not in text[start : j + 1]:
            return self.src.error(
                ParseErrorKind.UNQUOTED_CONSTANT, start, f"constant {segment!r} must be double-quoted"
            )
        return self.src.error(ParseErrorKind.MALFORMED_TERM, start, f"malformed {what}")

    # -- query structure ----------------------------------------------------

    def parse_query_body(self) -> list:
        goals = self.parse_conj()
        if self.tok.type == "ARROW":
            # unparenthesized if-then-else: condition is the goal just before
            # the arrow, and it spans everything to the end of the query
            cond = [goals.pop()]
            self.advance()
            then = self.parse_conj()
            orelse = None
            if self.tok.type == ";":
                self.advance()
                orelse = self.parse_ite_chain()
            goals.append(self.make_ite(cond, then, orelse))
        if self.tok.type == ".":
            self.advance()
        if self.tok.type != "EOF":
            if self.tok.type == ";":
                raise self.error(ParseErrorKind.MALFORMED_TERM, "disjunction without '->' is not supported")
            raise self.error(ParseErrorKind.MALFORMED_TERM, f"unexpected {self.tok.value!r}")
        return goals

    def parse_ite_chain(self) -> list:
        """Parse ``Conj [-> Conj [; Chain]]`` as a goal list."""
        goals = self.parse_conj()
        if self.tok.type != "ARROW":
            return goals
        self.advance()
        then = self.parse_conj()
        orelse = None
        if self.tok.type == ";":
            self.advance()
            orelse = self.parse_ite_chain()
        return [self.make_ite(goals, then, orelse)]

    def make_ite(self, cond, then, orelse):
        try:
            return IfThenElse(tuple(cond), tuple(then), None if orelse is None else tuple(orelse))
        except ValueError as exc:
            raise self.error(ParseErrorKind.MALFORMED_TERM, str(exc))

    def parse_conj(self) -> list:
        goals = list(self.parse_primary())
        while True:
            if self.tok.type == ",":
                self.advance()
                goals.extend(self.parse_primary())
            elif self.tok.newline_before and self.tok.type in ("NAME", "VAR", "("):
                # goals on separate lines with the comma dropped
                goals.extend(self.parse_primary())
            else:
                return goals

    def parse_group(self) -> list:
        self.expect("(")
        goals = self.parse_conj()
        if self.tok.type == "ARROW":
            self.advance()
            then = self.parse_conj()
            orelse = None
            if self.tok.type == ";":
                self.advance()
                orelse = self.parse_ite_chain()
            goals = [self.make_ite(goals, then, orelse)]
        elif self.tok.type == ";":
            raise self.error(ParseErrorKind.MALFORMED_TERM, "disjunction without '->' is not supported")
        self.expect(")", ParseErrorKind.MALFORMED_TERM)
        return goals

    def parse_primary(self) -> list:
        tok = self.tok
        if tok.type == "(":
            return self.parse_group()
        if tok.type == "NAME" and tok.value == "aggregate_all" and self.peek().type == "(":
            return [self.parse_aggregate()]
        if tok.type == "VAR" and self.peek().type != "OP":
            self.advance()
            return [BareVar(Variable(tok.value))]
        if tok.type in ("NAME", "VAR", "STRING", "INT"):
            start = tok.pos
            lhs = self.parse_term("goal")
            if self.tok.type == "OP":
                op = self.advance()
                rhs = self.parse_term("operand")
                self.check_follower(start, "operand", (",", ")", ";", "ARROW", ".", "EOF"))
                return [_COMPARISON_OPS[op.value](lhs, rhs)]
            if isinstance(lhs, Compound):
                return [Atom(lhs.functor, lhs.args)]
            if isinstance(lhs, DateConst):
                return [Atom("date", (IntConst(lhs.year), IntConst(lhs.month), IntConst(lhs.day)))]
            raise self.error(ParseErrorKind.MALFORMED_TERM, "a constant is not a goal", pos=start)
        if tok.type in ("OTHER", "."):
            raise self.segment_error(tok.pos, "goal")
        raise self.error(ParseErrorKind.MALFORMED_TERM, f"unexpected {tok.value or tok.type!r}")

    def check_follower(self, start: int, what: str, allowed) -> None:
        if self.tok.type not in allowed:
            raise self.segment_error(start, what)

    def parse_aggregate(self) -> Aggregate:
        start = self.tok.pos
        self.advance()
        self.expect("(")
        kind = self.tok
        if kind.type != "NAME" or kind.value != "count" or self.peek().type != ",":
            raise self.error(ParseErrorKind.BAD_AGGREGATE, "only aggregate_all(count, Goal, Result) is supported")
        self.advance()
        self.advance()
        distinct = False
        if self.tok.type == "NAME" and self.tok.value == "distinct" and self.peek().type == "(":
            distinct = True
            self.advance()
            self.advance()
        inner = self.parse_primary()
        if len(inner) != 1 or isinstance(inner[0], (Aggregate, IfThenElse, BareVar)):
            raise self.error(ParseErrorKind.BAD_AGGREGATE, "aggregated goal must be a single atom or comparison", pos=start)
        if distinct:
            self.expect(")", ParseErrorKind.BAD_AGGREGATE)
        self.expect(",", ParseErrorKind.BAD_AGGREGATE)
        if self.tok.type != "VAR":
            raise self.error(ParseErrorKind.BAD_AGGREGATE, "aggregate result must be a variable")
        result = Variable(self.advance().value)
        self.expect(")", ParseErrorKind.BAD_AGGREGATE)
        try:
            return Aggregate(inner[0], result, distinct=distinct)
        except ValueError as exc:
            raise self.src.error(ParseErrorKind.BAD_AGGREGATE, start, str(exc))

    # -- terms --------------------------------------------------------------

    def parse_term(self, what: str) -> Term:
        tok = self.tok
        if tok.type == "STRING":
            self.advance()
            return StringConst(tok.value)
        if tok.type == "INT":
            self.advance()
            return IntConst(int(tok.value))
        if tok.type == "VAR":
            self.advance()
            return Variable(tok.value)
        if tok.type == "NAME":
            self.advance()
            if self.tok.type != "(":
                return Compound(tok.value)
            self.advance()
            args = [self.parse_arg()]
            while self.tok.type == ",":
                self.advance()
                args.append(self.parse_arg())
            self.expect(")")
            if tok.value == "date" and len(args) == 3 and all(isinstance(a, IntConst) for a in args):
                try:
                    return DateConst(args[0].value, args[1].value, args[2].value)
                except ValueError as exc:
                    raise self.src.error(ParseErrorKind.MALFORMED_TERM, tok.pos, str(exc))
            return Compound(tok.value, tuple(args))
        raise self.segment_error(tok.pos, what)

    def parse_arg(self) -> Term:
        start = self.tok.pos
        term = self.parse_term("argument")
        self.check_follower(start, "argument", (",", ")"))
        return term


def _run(text: str, fn):
    if not isinstance(text, str):
        raise TypeError("expected str")
    src = _Source(text)
    try:
        tokens = tokenize(src)
        _check_balance(src, tokens)
        parser = _Parser(src, tokens)
        return fn(src, parser)
    except RecursionError:
        raise src.error(ParseErrorKind.MALFORMED_TERM, 0, "nesting too deep") from None


def parse_goals(text: str) -> list:
    """Parse a goal list without building a :class:`Query`."""

    def go(src, parser):
        if parser.tok.type == "EOF" or (parser.tok.type == "." and parser.peek().type == "EOF"):
            raise src.error(ParseErrorKind.EMPTY_INPUT, 0, "empty query")
        return parser.parse_query_body()

    return _run(text, go)


def parse_query(text: str, target: Optional[str] = None) -> Query:
    """Parse query text into a :class:`Query`.

    When ``target`` is omitted the last variable to appear is used.
    """
    goals = parse_goals(text)
    variables = query_variables(goals)
    src = _Source(text)
    if target is None:
        if not variables:
            raise src.error(ParseErrorKind.MALFORMED_TERM, 0, "query has no variables")
        tvar = variables[-1]
    else:
        target = target.strip()
        try:
            tvar = Variable(target)
        except ValueError:
            raise src.error(ParseErrorKind.MALFORMED_TERM, 0, f"invalid target variable {target!r}") from None
        if tvar not in variables:
            raise src.error(ParseErrorKind.MALFORMED_TERM, 0, f"target {target} does not occur in the query")
    return Query(tuple(goals), tvar, source=text)


def parse_literal(text: str) -> Term:
    """Parse a single ground literal: a quoted string, an integer or a date."""

    def go(src, parser):
        if parser.tok.type == "EOF":
            raise src.error(ParseErrorKind.EMPTY_INPUT, 0, "empty literal")
        start = parser.tok.pos
        if parser.tok.type not in ("STRING", "INT", "NAME"):
            raise src.error(ParseErrorKind.MALFORMED_TERM, start, "not a literal")
        term = parser.parse_term("literal")
        if parser.tok.type != "EOF":
            raise src.error(ParseErrorKind.MALFORMED_TERM, parser.tok.pos, "trailing text after literal")
        if not isinstance(term, (StringConst, IntConst, DateConst)) or not is_ground(term):
            raise src.error(ParseErrorKind.MALFORMED_TERM, start, "not a string, integer or date literal")
        return term

    try:
        return _run(text, go)
    except ParseError as exc:
        if exc.kind in (ParseErrorKind.EMPTY_INPUT, ParseErrorKind.MALFORMED_TERM):
            raise
        raise ParseError(ParseErrorKind.MALFORMED_TERM, exc.position, exc.message) from None


# -- printing ---------------------------------------------------------------


def quote_string(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def print_term(term: Term) -> str:
    if isinstance(term, StringConst):
        return quote_string(term.text)
    if isinstance(term, IntConst):
        return str(term.value)
    if isinstance(term, DateConst):
        return f"date({term.year}, {term.month}, {term.day})"
    if isinstance(term, Variable):
        return term.name
    if isinstance(term, Compound):
        if not term.args:
            return term.functor
        return f"{term.functor}({', '.join(print_term(a) for a in term.args)})"
    raise TypeError(f"not a term: {term!r}")


_OP_SYMBOL = {Unify: "=", StructEq: "==", StdGt: "@>", StdLt: "@<"}


def print_goal(goal) -> str:
    if isinstance(goal, Atom):
        if not goal.args:
            return goal.predicate
        return f"{goal.predicate}({', '.join(print_term(a) for a in goal.args)})"
    if type(goal) in _OP_SYMBOL:
        return f"{print_term(goal.lhs)} {_OP_SYMBOL[type(goal)]} {print_term(goal.rhs)}"
    if isinstance(goal, IfThenElse):
        text = f"({print_goals(goal.cond)} -> {print_goals(goal.then)}"
        if goal.orelse is not None:
            text += f" ; {print_goals(goal.orelse)}"
        return text + ")"
    if isinstance(goal, Aggregate):
        inner = print_goal(goal.inner)
        if goal.distinct:
            inner = f"distinct({inner})"
        return f"aggregate_all({goal.kind}, {inner}, {goal.result.name})"
    if isinstance(goal, BareVar):
        return goal.var.name
    raise TypeError(f"not a goal: {goal!r}")


def print_goals(goals) -> str:
    return ", ".join(print_goal(g) for g in goals)


def print_query(query: Query) -> str:
    return print_goals(query.goals)
