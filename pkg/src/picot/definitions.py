"""Predicate definitions: question/statement templates and answer ingestion.

A definition line looks like::

    - father(<literal>, <answer>) -> The father of <literal> is <answer>. ; Who is the father of <literal>?

The head names one placeholder per argument position. Templates refer to
those placeholders; ``<answer>`` marks the position filled by extraction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional

from .prolog.engine import Fact, resolve
from .prolog.parser import ParseError, ParseErrorKind, parse_literal, print_term
from .prolog.terms import Atom, DateConst, IntConst, StringConst, Term, is_ground

ANSWER = "answer"
_PLACEHOLDER_RE = re.compile(r"<\s*([A-Za-z_][A-Za-z0-9_]*)\s*>")
_HEAD_RE = re.compile(r"^([a-z][A-Za-z0-9_]*)\s*\((.*)\)\s*$", re.S)
_ARROW_RE = re.compile(r"->|→")


class DefinitionMissing(KeyError):
    def __init__(self, predicate: str, arity: int):
        super().__init__(f"no definition for {predicate}/{arity}")
        self.predicate = predicate
        self.arity = arity


class RenderError(ValueError):
    """A template needs a value for an argument that is still unbound."""


@dataclass(frozen=True)
class Definition:
    predicate: str
    slots: tuple  # placeholder name per argument position, e.g. ("literal", "answer")
    statement_template: str
    question_template: str
    source: str = field(default="", compare=False)

    @property
    def arity(self) -> int:
        return len(self.slots)

    @property
    def answer_position(self) -> Optional[int]:
        return self.slots.index(ANSWER) if ANSWER in self.slots else None

    def placeholder_positions(self, template: str) -> list[tuple[re.Match, int]]:
        """Map every placeholder occurrence in ``template`` to an argument position.

        Names found in the head map by name (the k-th occurrence of a name
        goes to the k-th head slot with that name). Unknown names take the
        remaining non-answer positions left to right.
        """
        by_name: dict[str, list[int]] = {}
        for i, name in enumerate(self.slots):
            by_name.setdefault(name, []).append(i)
        matches = list(_PLACEHOLDER_RE.finditer(template))
        used = {i for m in matches if m.group(1) in by_name for i in by_name[m.group(1)]}
        spare = [i for i, n in enumerate(self.slots) if n != ANSWER and i not in used]
        unknown: dict[str, int] = {}
        seen: dict[str, int] = {}
        out = []
        for m in matches:
            name = m.group(1)
            if name in by_name:
                k = seen.get(name, 0)
                seen[name] = k + 1
                positions = by_name[name]
                out.append((m, positions[min(k, len(positions) - 1)]))
            else:
                if name not in unknown:
                    if not spare:
                        raise RenderError(f"placeholder <{name}> has no matching argument in {self.predicate}/{self.arity}")
                    unknown[name] = spare.pop(0)
                out.append((m, unknown[name]))
        return out

    def fill(self, template: str, values: list[Optional[str]]) -> str:
        pieces, last = [], 0
        for m, pos in self.placeholder_positions(template):
            if values[pos] is None:
                raise RenderError(f"argument {pos + 1} of {self.predicate}/{self.arity} is unbound")
            pieces.append(template[last : m.start()])
            pieces.append(values[pos])
            last = m.end()
        pieces.append(template[last:])
        return "".join(pieces)


class DefinitionTable(Mapping):
    """Definitions keyed by ``(predicate, arity)``; first definition wins."""

    def __init__(self, definitions=(), raw: str = ""):
        self._defs: dict[tuple[str, int], Definition] = {}
        for d in definitions:
            self._defs.setdefault((d.predicate, d.arity), d)
        self.raw = raw

    def __getitem__(self, key):
        return self._defs[key]

    def __iter__(self):
        return iter(self._defs)

    def __len__(self):
        return len(self._defs)

    def lookup(self, predicate: str, arity: int) -> Definition:
        try:
            return self._defs[(predicate, arity)]
        except KeyError:
            raise DefinitionMissing(predicate, arity) from None

    def to_json(self) -> list[dict]:
        return [
            {
                "predicate": d.predicate,
                "slots": list(d.slots),
                "statement": d.statement_template,
                "question": d.question_template,
            }
            for d in self._defs.values()
        ]


def parse_definition_line(line: str) -> Definition:
    text = line.strip()
    text = re.sub(r"^(?:[-*•]\s*)+", "", text)
    arrow = _ARROW_RE.search(text)
    if arrow is None:
        raise ParseError(ParseErrorKind.MALFORMED_TERM, 0, f"definition without '->': {line!r}")
    head, body = text[: arrow.start()].strip(), text[arrow.end() :]
    if ";" not in body:
        raise ParseError(ParseErrorKind.MALFORMED_TERM, 0, f"definition without ';': {line!r}")
    statement, question = body.rsplit(";", 1)
    m = _HEAD_RE.match(head)
    if m is None:
        raise ParseError(ParseErrorKind.MALFORMED_TERM, 0, f"bad definition head: {head!r}")
    slots = []
    for arg in m.group(2).split(","):
        pm = _PLACEHOLDER_RE.fullmatch(arg.strip())
        if pm is None:
            raise ParseError(ParseErrorKind.MALFORMED_TERM, 0, f"bad placeholder {arg.strip()!r} in {head!r}")
        slots.append(pm.group(1))
    return Definition(m.group(1), tuple(slots), statement.strip(), question.strip(), source=line.strip())


def parse_definitions(text: str) -> DefinitionTable:
    """Parse a definition block, one predicate per non-empty line."""
    defs = [parse_definition_line(line) for line in text.splitlines() if line.strip()]
    return DefinitionTable(defs, raw=text)


# -- rendering ----------------------------------------------------------------


def render_constant(term: Term, quote_strings: bool = False) -> str:
    if isinstance(term, StringConst):
        return f'"{term.text}"' if quote_strings else term.text
    if isinstance(term, IntConst):
        return str(term.value)
    if isinstance(term, DateConst):
        return term.iso()
    return print_term(term)


def extraction_slot(goal: Atom, bindings: Mapping[str, Term] = {}) -> Optional[int]:
    """Leftmost argument position still unbound under ``bindings``."""
    for i, arg in enumerate(goal.args):
        if not is_ground(resolve(arg, bindings)):
            return i
    return None


def render_question(defn: Definition, goal: Atom, bindings: Mapping[str, Term] = {}, quote_strings: bool = False) -> str:
    if (goal.predicate, goal.arity) != (defn.predicate, defn.arity):
        raise DefinitionMissing(goal.predicate, goal.arity)
    values = []
    for arg in goal.args:
        value = resolve(arg, bindings)
        values.append(render_constant(value, quote_strings) if is_ground(value) else None)
    return defn.fill(defn.question_template, values)


def render_statement(defn: Definition, fact: Fact, quote_strings: bool = False) -> str:
    if fact.key != (defn.predicate, defn.arity):
        raise DefinitionMissing(*fact.key)
    return defn.fill(defn.statement_template, [render_constant(a, quote_strings) for a in fact.args])


def render_entailment_question(statement: str) -> str:
    if not statement.strip():
        raise ValueError("empty statement")
    return "Is the following statement true or false? " + statement


def statement_for(defs: DefinitionTable, fact: Fact) -> str:
    """Statement for ``fact``, falling back to the Prolog text if undefined."""
    try:
        return render_statement(defs.lookup(*fact.key), fact)
    except (DefinitionMissing, RenderError):
        return fact.to_text()


# -- answer ingestion ---------------------------------------------------------


def _split_items(text: str) -> Iterator[tuple[int, str]]:
    depth, start, i, in_quote = 0, 0, 0, False
    while i < len(text):
        ch = text[i]
        if in_quote:
            if ch == "\\" and i + 1 < len(text):
                i += 1
            elif ch == '"':
                in_quote = False
        elif ch == '"':
            in_quote = True
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(0, depth - 1)
        elif ch == "," and depth == 0:
            yield start, text[start:i]
            start = i + 1
        i += 1
    if in_quote:
        raise ParseError(ParseErrorKind.MALFORMED_TERM, len(text[:i].encode()), "unbalanced double quote")
    yield start, text[start:]


_INT_ITEM = re.compile(r"[+-]?\d+\Z")


def parse_answer_list(text: str) -> list[Term]:
    """Turn the content of an ``<answer>`` span into ground terms."""
    if not text.strip():
        return []
    out: list[Term] = []
    for offset, raw in _split_items(text):
        item = raw.strip()
        if not item:
            continue
        if item.startswith('"') or item.startswith("date("):
            try:
                out.append(parse_literal(item))
            except ParseError as exc:
                pos = len(text[:offset].encode()) + exc.position
                raise ParseError(ParseErrorKind.MALFORMED_TERM, min(pos, len(text.encode())), exc.message) from None
        elif _INT_ITEM.match(item):
            out.append(IntConst(int(item)))
        elif '"' in item:
            raise ParseError(ParseErrorKind.MALFORMED_TERM, len(text[:offset].encode()), f"stray quote in {item!r}")
        else:
            out.append(StringConst(item))
    if not out:
        raise ParseError(ParseErrorKind.MALFORMED_TERM, 0, f"no answer items in {text!r}")
    return out


def parse_verdict(text: str) -> bool:
    """Verification answer: true/false, optionally quoted; empty means false."""
    value = text.strip().strip('"').strip().lower()
    if value == "true":
        return True
    if value in ("false", ""):
        return False
    raise ParseError(ParseErrorKind.MALFORMED_TERM, 0, f"verification answer is neither true nor false: {text!r}")


def fact_from_answer(goal: Atom, bindings: Mapping[str, Term], slot: int, answer: Term) -> Atom:
    """Instantiate ``goal`` with ``answer`` placed at argument ``slot``."""
    args = [resolve(a, bindings) for a in goal.args]
    args[slot] = answer
    return Atom(goal.predicate, tuple(args))


__all__ = [
    "Definition",
    "DefinitionMissing",
    "DefinitionTable",
    "RenderError",
    "extraction_slot",
    "fact_from_answer",
    "parse_answer_list",
    "parse_definition_line",
    "parse_definitions",
    "parse_verdict",
    "render_constant",
    "render_entailment_question",
    "render_question",
    "render_statement",
    "statement_for",
]
